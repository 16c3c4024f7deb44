//! Acceptance suite: one line per criterion. Exits non-zero on any failure
//! only when `ACCEPTANCE_STRICT` is set, so known gaps stay visible without
//! breaking the regular test run.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use cuboid_pose::bench::{run_bench, trials_csv, write_reports, BenchConfig, BenchReport, Method, CSV_FILE};
use cuboid_pose::camera::{inverse_project_at, project, CameraIntrinsics, DepthImage, MaskImage};
use cuboid_pose::correction::{correct_and_transform, correct_pose, make_artificial_cloud};
use cuboid_pose::filters::{estimate_normals, statistical_outlier_inliers, voxel_downsample, FilterParams};
use cuboid_pose::geometry::{fit_plane, rectangle_rotation_error, rot_y, CuboidSpec, Pose};
use cuboid_pose::registration::{coarse_register, pairs_in_range, CoarseParams};
use cuboid_pose::segmentation::{
    fit_quadrilateral, hsv_threshold, region_growing, select_t_points_on_plane, HsvRange, Pixel, RegionGrowingParams,
};
use cuboid_pose::synth::{inject_pose_error, random_face_pose, render_scene, PointLabel, SceneSpec};
use cuboid_pose::{Point3, PointCloud, Vec3};

const FACE: CuboidSpec = CuboidSpec {
    width: 0.30,
    height: 0.20,
    depth: 0.05,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Benches {
    clean: BenchReport,
    clean_elapsed: Duration,
    dropout: BenchReport,
    /// Dropout trials with the smaller injections of the paper's comparison table.
    dropout_small: BenchReport,
}

fn benches() -> &'static Benches {
    static B: OnceLock<Benches> = OnceLock::new();
    B.get_or_init(|| {
        let cfg = BenchConfig {
            trials: 100,
            seed: 2024,
            ..Default::default()
        };
        let start = Instant::now();
        let clean = run_bench(&cfg).expect("clean bench");
        let clean_elapsed = start.elapsed();
        let dropout = run_bench(&BenchConfig {
            dropout: [0.1, 0.1],
            ..cfg.clone()
        })
        .expect("dropout bench");
        let small = BenchConfig {
            dropout: [0.1, 0.1],
            yaw_deg: [-3.0, 3.0],
            dt_mm: [-3.0, 3.0],
            ..cfg
        };
        let dropout_small = run_bench(&small).expect("dropout bench");
        Benches {
            clean,
            clean_elapsed,
            dropout,
            dropout_small,
        }
    })
}

fn averages(report: &BenchReport, method: Method) -> (usize, f64, f64) {
    let row = report.summary.iter().find(|r| r.method == method).unwrap();
    (row.trials, row.avg_rot_err_deg, row.avg_trans_err_mm)
}

fn ac1_correction_accuracy() -> Outcome {
    let b = benches();
    let (n, rot, trans) = averages(&b.clean, Method::Correction);
    let secs = b.clean_elapsed.as_secs_f64();
    outcome(
        n >= 100 && rot <= 0.25 && trans <= 0.5 && secs < 60.0,
        format!("{n} trials: {rot:.4} deg (<= 0.25), {trans:.4} mm (<= 0.5), {secs:.1} s (< 60)"),
    )
}

fn ac2_icp_regime() -> Outcome {
    let (n, rot, trans) = averages(&benches().dropout, Method::Icp);
    let (_, rot3, trans3) = averages(&benches().dropout_small, Method::Icp);
    outcome(
        n >= 100 && (0.5..=2.5).contains(&rot) && (0.8..=3.0).contains(&trans),
        format!(
            "{n} dropout trials: ICP {rot:.3} deg (in [0.5, 2.5]), {trans:.3} mm (in [0.8, 3.0]); \
             with 3 deg / 3 mm injections: {rot3:.3} deg, {trans3:.3} mm"
        ),
    )
}

fn ac3_speed_ratio() -> Outcome {
    let b = benches();
    let mut ratios = Vec::new();
    let mut sizes = (usize::MAX, 0usize);
    for rec in b.clean.records.iter().chain(&b.dropout.records) {
        if let (Some(c), Some(i)) = (rec.result(Method::Correction), rec.result(Method::Icp)) {
            ratios.push(i.time_ms / c.time_ms);
        }
        for n in [rec.source_points, rec.target_points] {
            sizes = (sizes.0.min(n), sizes.1.max(n));
        }
    }
    ratios.sort_by(f64::total_cmp);
    let (min, med) = (ratios[0], ratios[ratios.len() / 2]);
    let in_range = sizes.0 >= 5_000 && sizes.1 <= 50_000;
    outcome(
        min >= 10.0 && in_range,
        format!(
            "{} paired trials: ICP/correction min {min:.0}x, median {med:.0}x; cloud sizes {}..{}",
            ratios.len(),
            sizes.0,
            sizes.1
        ),
    )
}

fn ac4_linear_time() -> Outcome {
    let gt = Pose::new(rot_y(0.2), Vec3::new(0.01, -0.02, 1.0)).unwrap();
    let art = make_artificial_cloud(&FACE, 0.01).unwrap();
    let erroneous = inject_pose_error(&gt, 2.0, &Vec3::new(0.003, -0.002, 0.001));
    let t1 = gt.transform_point(&Point3::new(-FACE.width / 2.0, 0.0, 0.0));
    let t2 = gt.transform_point(&Point3::new(FACE.width / 2.0, 0.0, 0.0));
    let normal = erroneous.axis(2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let sizes = [1_000usize, 10_000, 100_000];
    let mut correct_ms = Vec::new();
    let mut estimate_us = Vec::new();
    for &n in &sizes {
        let cloud = PointCloud::new(
            (0..n)
                .map(|_| Point3::new(rng.random_range(-0.15..0.15), rng.random_range(-0.1..0.1), 0.0))
                .collect(),
        );
        let mut tc = Vec::new();
        let mut te = Vec::new();
        for rep in 0..60 {
            let (moved, report) = correct_and_transform(&erroneous, &art, &cloud, &t1, &t2, &normal).unwrap();
            std::hint::black_box(moved);
            if rep >= 10 {
                tc.push(report.t_correct.as_secs_f64() * 1e3);
                te.push(report.t_estimate.as_secs_f64() * 1e6);
            }
        }
        tc.sort_by(f64::total_cmp);
        te.sort_by(f64::total_cmp);
        correct_ms.push(tc[tc.len() / 2]);
        estimate_us.push(te[te.len() / 2]);
    }
    let xs: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    let r2 = r_squared(&xs, &correct_ms);
    let est_ratio =
        estimate_us.iter().cloned().fold(f64::MIN, f64::max) / estimate_us.iter().cloned().fold(f64::MAX, f64::min);
    outcome(
        r2 >= 0.99 && est_ratio <= 3.0,
        format!(
            "correction ms {:.4}/{:.4}/{:.4} at n=1e3/1e4/1e5, R^2 {r2:.5} (>= 0.99); estimation spread {est_ratio:.2}x (<= 3)",
            correct_ms[0], correct_ms[1], correct_ms[2]
        ),
    )
}

fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - (my + slope * (a - mx))).powi(2))
        .sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

fn ac5_closed_loop() -> Outcome {
    let art = make_artificial_cloud(&FACE, 0.0025).unwrap();
    let dt = Vec3::new(0.8, 3.1, -0.2) * 1e-3;
    let mut worst_exact: (f64, f64) = (0.0, 0.0);
    let mut worst_scene: (f64, f64) = (0.0, 0.0);
    for seed in 0..10 {
        let gt = random_face_pose(&mut ChaCha8Rng::seed_from_u64(seed), [0.9, 1.1], 10.0);
        let erroneous = inject_pose_error(&gt, 2.47, &dt);
        let exact = (
            gt.transform_point(&Point3::new(-FACE.width / 2.0, 0.0, 0.0)),
            gt.transform_point(&Point3::new(FACE.width / 2.0, 0.0, 0.0)),
        );
        let spec = SceneSpec::new(FACE, gt);
        let scene = render_scene(&spec).unwrap();
        let mask = hsv_threshold(&scene.rgb, &HsvRange::red());
        let face = scene.cloud.select(
            &(0..scene.cloud.len())
                .filter(|&i| scene.truth.labels[i] == PointLabel::Face)
                .collect::<Vec<_>>(),
        );
        let quad = fit_quadrilateral(&mask).unwrap();
        let measured = select_t_points_on_plane(&quad, &spec.intrinsics, &fit_plane(&face).unwrap()).unwrap();
        for ((t1, t2), worst) in [(exact, &mut worst_exact), (measured, &mut worst_scene)] {
            let (fixed, _) = correct_pose(&erroneous, &art, &t1, &t2, &erroneous.axis(2)).unwrap();
            worst.0 = worst.0.max(rectangle_rotation_error(&fixed, &gt).to_degrees());
            worst.1 = worst.1.max(fixed.translation_distance_to(&gt) * 1e3);
        }
    }
    outcome(
        worst_exact.0 <= 1e-3 && worst_exact.1 <= 1e-3 && worst_scene.0 <= 0.23 && worst_scene.1 <= 0.3,
        format!(
            "2.47 deg + (0.8, 3.1, -0.2) mm over 10 poses: exact T {:.1e} deg / {:.1e} mm; rendered T {:.4} deg / {:.4} mm (<= 0.23 / 0.3)",
            worst_exact.0, worst_exact.1, worst_scene.0, worst_scene.1
        ),
    )
}

fn ac6_coarse_registration() -> Outcome {
    let art = make_artificial_cloud(&FACE, 0.0035).unwrap();
    let trials = 50;
    let mut ok = 0;
    let mut total = Duration::ZERO;
    let mut max_pts = 0;
    for i in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + i);
        let gt = random_face_pose(&mut rng, [0.9, 1.1], 10.0);
        let mut spec = SceneSpec::new(FACE, gt);
        spec.noise_sigma = 0.002;
        spec.dropout = vec![(rng.random_range(0..4), 0.1)];
        spec.seed = i;
        let scene = render_scene(&spec).unwrap();
        let face: Vec<usize> = (0..scene.cloud.len())
            .filter(|&k| scene.truth.labels[k] == PointLabel::Face)
            .collect();
        let target = voxel_downsample(&scene.cloud.select(&face), 0.005).unwrap();
        max_pts = max_pts.max(target.len()).max(art.cloud.len());
        let params = CoarseParams {
            seed: i,
            ..Default::default()
        };
        if let Ok(r) = coarse_register(&art.cloud, &target, &params) {
            total += r.elapsed;
            let rot = rectangle_rotation_error(&r.pose, &gt).to_degrees();
            let trans = r.pose.translation_distance_to(&gt) * 1e3;
            if rot <= 3.3 && trans <= 5.3 {
                ok += 1;
            }
        }
    }
    let avg = total.as_secs_f64() / trials as f64;
    let rate = ok as f64 / trials as f64;
    outcome(
        rate >= 0.9 && avg < 2.0 && max_pts <= 10_000,
        format!("{ok}/{trials} within 3.3 deg / 5.3 mm (>= 90%), avg {avg:.3} s (< 2), clouds <= {max_pts} points"),
    )
}

fn ac7_inverse_projection() -> Outcome {
    let intr = CameraIntrinsics::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut cont, mut quant_axis, mut quant_depth) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let (u, v) = (
            rng.random_range(0.0..intr.width as f64),
            rng.random_range(0.0..intr.height as f64),
        );
        let p = inverse_project_at(&intr, u, v, rng.random_range(0.3..3.0));
        let (pu, pv, d) = project(&intr, &p).unwrap();
        cont = cont.max((inverse_project_at(&intr, pu, pv, d) - p).norm());
        let q = inverse_project_at(&intr, pu, pv, DepthImage::quantize_mm(d)) - p;
        quant_axis = quant_axis.max(q.amax());
        quant_depth = quant_depth.max(q.z.abs());
    }
    outcome(
        cont <= 1e-9 && quant_axis <= 5e-4 + 1e-12,
        format!(
            "10k points: continuous {cont:.1e} m (<= 1e-9); quantized max per-axis {:.4} mm, depth {:.4} mm (<= 0.5)",
            quant_axis * 1e3,
            quant_depth * 1e3
        ),
    )
}

fn ac8_pairs_oracle() -> Outcome {
    let (r, eps) = (0.3, 0.01);
    let mut mismatches = 0;
    let mut total = 0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + seed);
        let pts: Vec<Point3> = (0..2000)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let mut fast = pairs_in_range(&pts, r, eps).unwrap();
        fast.sort_unstable();
        let mut brute = Vec::new();
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                let d = (pts[i] - pts[j]).norm();
                if d > r - eps && d < r + eps {
                    brute.push((i, j));
                }
            }
        }
        total += brute.len();
        if fast != brute {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("20 clouds x 2000 points, {total} pairs, {mismatches} mismatching clouds"),
    )
}

fn raster_rect(w: usize, h: usize, center: Pixel, size: (f64, f64), angle_deg: f64) -> (MaskImage, [Pixel; 4]) {
    let (s, c) = angle_deg.to_radians().sin_cos();
    let (hw, hh) = (size.0 / 2.0, size.1 / 2.0);
    let mut mask = MaskImage::filled(w, h, 0);
    for y in 0..h {
        for x in 0..w {
            let d = Pixel::new(x as f64, y as f64) - center;
            if (c * d.x + s * d.y).abs() <= hw && (-s * d.x + c * d.y).abs() <= hh {
                mask.set(x, y, 255);
            }
        }
    }
    let corners =
        [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)].map(|(u, v)| center + Pixel::new(c * u - s * v, s * u + c * v));
    (mask, corners)
}

fn plane_grid(n: usize, pitch: f64, pose: &Pose, skip_first_column: bool) -> Vec<Point3> {
    let mut pts = Vec::new();
    for j in 0..n {
        for i in usize::from(skip_first_column)..n {
            pts.push(pose.transform_point(&Point3::new(i as f64 * pitch, j as f64 * pitch, 0.0)));
        }
    }
    pts
}

fn ac9_segmentation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_corner: f64 = 0.0;
    for _ in 0..40 {
        let center = Pixel::new(rng.random_range(140.0..180.0), rng.random_range(110.0..130.0));
        let size = (rng.random_range(120.0..200.0), rng.random_range(60.0..110.0));
        let (mask, truth) = raster_rect(320, 240, center, size, rng.random_range(0.0..180.0));
        let quad = fit_quadrilateral(&mask).unwrap();
        for c in &quad.corners {
            worst_corner = worst_corner.max(truth.iter().map(|t| (c - t).norm()).fold(f64::INFINITY, f64::min));
        }
    }

    let mut worst_purity: f64 = 1.0;
    let params = RegionGrowingParams {
        angle_thresh_deg: 10.0,
        ..Default::default()
    };
    for fold_deg in [60.0f64, 90.0, 120.0] {
        let base = Pose::from_translation(Vec3::new(0.0, 0.0, 1.0));
        let half = (180.0 - fold_deg).to_radians() / 2.0;
        let left = plane_grid(
            30,
            0.005,
            &base.compose(&Pose::new(rot_y(-half), Vec3::zeros()).unwrap()),
            false,
        );
        let mirror = base.compose(&Pose::new(rot_y(std::f64::consts::PI + half), Vec3::zeros()).unwrap());
        let right = plane_grid(30, 0.005, &mirror, true);
        let labels: Vec<bool> = (0..left.len() + right.len()).map(|i| i >= left.len()).collect();
        let cloud = PointCloud::new(left.into_iter().chain(right).collect());
        let est = estimate_normals(&cloud, 0.015).unwrap();
        let clusters = region_growing(&est.cloud, &est.curvature, &params).unwrap();
        if clusters.len() != 2 {
            worst_purity = 0.0;
        }
        for cl in &clusters {
            let ones = cl.iter().filter(|&&i| labels[est.source_indices[i]]).count();
            worst_purity = worst_purity.min(ones.max(cl.len() - ones) as f64 / cl.len() as f64);
        }
    }

    let sigma = 0.001;
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut pts: Vec<Point3> = (0..5000)
        .map(|_| {
            Point3::new(
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.15..0.15),
                1.0 + noise.sample(&mut rng),
            )
        })
        .collect();
    let n_in = pts.len();
    while pts.len() < n_in + 50 {
        let p = Point3::new(
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.25..0.25),
            rng.random_range(0.9..1.1),
        );
        if (p.z - 1.0).abs() >= 5.0 * sigma {
            pts.push(p);
        }
    }
    let f = FilterParams::default();
    let kept = statistical_outlier_inliers(&PointCloud::new(pts), f.sor_k, f.sor_stddev_mult).unwrap();
    let kept_in = kept.iter().filter(|&&i| i < n_in).count();
    let removed_out = 50 - (kept.len() - kept_in);
    let (out_frac, in_frac) = (removed_out as f64 / 50.0, kept_in as f64 / n_in as f64);

    outcome(
        worst_corner <= 1.5 && worst_purity >= 0.98 && out_frac >= 0.95 && in_frac >= 0.99,
        format!(
            "corners {worst_corner:.3} px (<= 1.5); dihedral purity {:.2}% (>= 98%); SOR removed {:.0}% outliers (>= 95%), kept {:.2}% inliers (>= 99%)",
            worst_purity * 100.0,
            out_frac * 100.0,
            in_frac * 100.0
        ),
    )
}

fn ac10_determinism() -> Outcome {
    let cfg = BenchConfig {
        trials: 5,
        seed: 77,
        timing: false,
        parallel: true,
        ..Default::default()
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut bytes = Vec::new();
    for d in &dirs {
        let report = run_bench(&cfg).unwrap();
        write_reports(d.path(), &report).unwrap();
        bytes.push(std::fs::read(d.path().join(CSV_FILE)).unwrap());
    }
    let same = bytes[0] == bytes[1] && bytes[0] == trials_csv(&run_bench(&cfg).unwrap().records).into_bytes();
    outcome(
        same,
        format!("two runs, {} bytes each, identical: {same}", bytes[0].len()),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("correction accuracy", ac1_correction_accuracy),
        ("ICP baseline regime", ac2_icp_regime),
        ("speed ratio", ac3_speed_ratio),
        ("linear-time correction", ac4_linear_time),
        ("closed-loop recovery", ac5_closed_loop),
        ("coarse registration", ac6_coarse_registration),
        ("inverse projection", ac7_inverse_projection),
        ("pair search oracle", ac8_pairs_oracle),
        ("segmentation properties", ac9_segmentation),
        ("bench determinism", ac10_determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!(
            "AC{:<2} {:<24} {}  {} [{:.1} s]",
            i + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}

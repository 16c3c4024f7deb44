//! Seeded trial sweeps comparing the T-point correction against ICP from the
//! same erroneous pose.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::camera::deproject_mask_colored;
use crate::config::KeyValues;
use crate::correction::{correct_and_transform, ArtificialCloud};
use crate::error::{Error, Result};
use crate::filters::voxel_downsample;
use crate::geometry::{fit_plane, rectangle_rotation_error, Pose, Vec3};
use crate::pipeline::{parse_switch, Settings, TPointSource, SETTINGS_KEYS};
use crate::registration::{coarse_register, icp_refine};
use crate::segmentation::{fit_quadrilateral, hsv_threshold, select_t_points, select_t_points_on_plane};
use crate::synth::{inject_pose_error, random_face_pose, render_scene, SceneSpec};

pub const CSV_FILE: &str = "bench.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const FAILURES_FILE: &str = "failures.csv";
pub const CSV_HEADER: &str =
    "trial,seed,inj_yaw_deg,inj_dt_mm_x,inj_dt_mm_y,inj_dt_mm_z,method,time_ms,rot_err_deg,trans_err_mm";

/// Pose the error is injected into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasePose {
    GroundTruth,
    Coarse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub trials: usize,
    pub seed: u64,
    /// Injected yaw range, degrees.
    pub yaw_deg: [f64; 2],
    /// Injected translation range per axis, millimeters.
    pub dt_mm: [f64; 2],
    /// Range noise sigma range, millimeters.
    pub noise_mm: [f64; 2],
    /// Corner dropout radius range, as a fraction of the face diagonal.
    pub dropout: [f64; 2],
    pub distance: [f64; 2],
    pub max_tilt_deg: f64,
    pub base: BasePose,
    /// Voxel leaf applied to the masked face cloud before both methods.
    pub target_leaf: f64,
    /// When off, `time_ms` is written as 0 so reports are byte-reproducible.
    pub timing: bool,
    pub warmup: usize,
    pub parallel: bool,
    pub out: PathBuf,
    pub settings: Settings,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            seed: 0,
            yaw_deg: [-5.0, 5.0],
            dt_mm: [-10.0, 10.0],
            noise_mm: [1.0, 1.0],
            dropout: [0.0, 0.0],
            distance: [0.9, 1.1],
            max_tilt_deg: 10.0,
            base: BasePose::GroundTruth,
            target_leaf: 0.0025,
            timing: true,
            warmup: 3,
            parallel: false,
            out: PathBuf::from("bench_out"),
            settings: Settings::default(),
        }
    }
}

const BENCH_KEYS: &[&str] = &[
    "trials",
    "seed",
    "yaw_deg",
    "dt_mm",
    "noise_mm",
    "dropout",
    "distance",
    "max_tilt_deg",
    "base",
    "target_leaf",
    "timing",
    "warmup",
    "parallel",
    "out",
];

impl BenchConfig {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let known: Vec<&str> = BENCH_KEYS.iter().chain(SETTINGS_KEYS).copied().collect();
        kv.check_known(&known)?;
        let d = BenchConfig::default();
        let base = match kv.get_str("base") {
            None | Some("gt") => BasePose::GroundTruth,
            Some("coarse") => BasePose::Coarse,
            Some(v) => return Err(Error::Config(format!("unknown base `{v}`"))),
        };
        let cfg = BenchConfig {
            trials: kv.get_or("trials", d.trials)?,
            seed: kv.get_or("seed", d.seed)?,
            yaw_deg: kv.get_array("yaw_deg")?.unwrap_or(d.yaw_deg),
            dt_mm: kv.get_array("dt_mm")?.unwrap_or(d.dt_mm),
            noise_mm: kv.get_array("noise_mm")?.unwrap_or(d.noise_mm),
            dropout: kv.get_array("dropout")?.unwrap_or(d.dropout),
            distance: kv.get_array("distance")?.unwrap_or(d.distance),
            max_tilt_deg: kv.get_or("max_tilt_deg", d.max_tilt_deg)?,
            base,
            target_leaf: kv.get_or("target_leaf", d.target_leaf)?,
            timing: parse_switch(kv, "timing", d.timing)?,
            warmup: kv.get_or("warmup", d.warmup)?,
            parallel: parse_switch(kv, "parallel", d.parallel)?,
            out: kv.get_str("out").map(PathBuf::from).unwrap_or(d.out),
            settings: Settings::from_kv(kv)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        for (name, r) in [
            ("yaw_deg", self.yaw_deg),
            ("dt_mm", self.dt_mm),
            ("noise_mm", self.noise_mm),
            ("dropout", self.dropout),
            ("distance", self.distance),
        ] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                return bad(&format!("`{name}` must be an ordered finite range"));
            }
        }
        if self.noise_mm[0] < 0.0 {
            return bad("noise_mm must be non-negative");
        }
        if self.dropout[0] < 0.0 || self.dropout[1] >= 0.3 {
            return bad("dropout must lie in [0, 0.3)");
        }
        if self.distance[0] <= 0.3 {
            return bad("distance must exceed 0.3 m");
        }
        if !(0.0..=45.0).contains(&self.max_tilt_deg) {
            return bad("max_tilt_deg must lie in [0, 45]");
        }
        if !(self.target_leaf > 0.0) {
            return bad("target_leaf must be positive");
        }
        self.settings.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Icp,
    Correction,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Icp => "icp",
            Method::Correction => "correction",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    pub method: Method,
    pub time_ms: f64,
    pub rot_err_deg: f64,
    pub trans_err_mm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub inj_yaw_deg: f64,
    pub inj_dt_mm: Vec3,
    /// Residuals of the pose the error was injected into.
    pub base_rot_err_deg: f64,
    pub base_trans_err_mm: f64,
    pub source_points: usize,
    pub target_points: usize,
    /// Correction first, then ICP; a method that failed is absent.
    pub results: Vec<MethodResult>,
    pub failures: Vec<Failure>,
}

impl TrialRecord {
    pub fn result(&self, method: Method) -> Option<&MethodResult> {
        self.results.iter().find(|r| r.method == method)
    }
}

/// Counter-derived per-trial seed (splitmix64 finalizer).
pub fn trial_seed(master: u64, trial: usize) -> u64 {
    let mut z = master.wrapping_add((trial as u64).wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

fn residuals(pose: &Pose, gt: &Pose) -> (f64, f64) {
    (
        rectangle_rotation_error(pose, gt).to_degrees(),
        pose.translation_distance_to(gt) * 1e3,
    )
}

/// Synthesizes one scene, injects the error and runs both methods from the
/// same erroneous pose.
pub fn run_trial(cfg: &BenchConfig, art: &ArtificialCloud, trial: usize) -> TrialRecord {
    let seed = trial_seed(cfg.seed, trial);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = &cfg.settings;
    let gt = random_face_pose(&mut rng, cfg.distance, cfg.max_tilt_deg);
    let mut spec = SceneSpec::new(s.cuboid, gt);
    spec.noise_sigma = uniform(&mut rng, cfg.noise_mm) * 1e-3;
    let frac = uniform(&mut rng, cfg.dropout);
    let corner = rng.random_range(0..4usize);
    if frac > 0.0 {
        spec.dropout = vec![(corner, frac)];
    }
    spec.seed = seed;
    let inj_yaw_deg = uniform(&mut rng, cfg.yaw_deg);
    let inj_dt_mm = Vec3::new(
        uniform(&mut rng, cfg.dt_mm),
        uniform(&mut rng, cfg.dt_mm),
        uniform(&mut rng, cfg.dt_mm),
    );

    let mut rec = TrialRecord {
        trial,
        seed,
        inj_yaw_deg,
        inj_dt_mm,
        base_rot_err_deg: f64::NAN,
        base_trans_err_mm: f64::NAN,
        source_points: art.cloud.len(),
        target_points: 0,
        results: Vec::new(),
        failures: Vec::new(),
    };
    let fail = |rec: &mut TrialRecord, stage: &str, e: Error| {
        rec.failures.push(Failure {
            stage: stage.to_string(),
            error: e.to_string(),
        });
    };

    let scene = match render_scene(&spec) {
        Ok(sc) => sc,
        Err(e) => {
            fail(&mut rec, "synth", e);
            return rec;
        }
    };
    let intr = &spec.intrinsics;
    let mask = hsv_threshold(&scene.rgb, &s.hsv);
    let target = match deproject_mask_colored(intr, &scene.depth, &mask, &scene.rgb)
        .and_then(|raw| voxel_downsample(&raw, cfg.target_leaf))
    {
        Ok(t) => t,
        Err(e) => {
            fail(&mut rec, "segment", e);
            return rec;
        }
    };
    rec.target_points = target.len();

    let t_points = fit_quadrilateral(&mask)
        .map_err(|e| ("quadrilateral", e))
        .and_then(|quad| {
            match s.t_points {
                TPointSource::Plane => fit_plane(&target).and_then(|p| select_t_points_on_plane(&quad, intr, &p)),
                TPointSource::Depth => select_t_points(&quad, intr, &scene.depth),
            }
            .map_err(|e| ("t_points", e))
        });
    let (t1, t2) = match t_points {
        Ok(t) => t,
        Err((stage, e)) => {
            fail(&mut rec, stage, e);
            return rec;
        }
    };

    let base = match cfg.base {
        BasePose::GroundTruth => gt,
        BasePose::Coarse => match coarse_register(&art.cloud, &target, &s.coarse) {
            Ok(r) => r.pose,
            Err(e) => {
                fail(&mut rec, "register", e);
                return rec;
            }
        },
    };
    (rec.base_rot_err_deg, rec.base_trans_err_mm) = residuals(&base, &gt);
    let erroneous = inject_pose_error(&base, inj_yaw_deg, &(inj_dt_mm * 1e-3));
    let ms = |start: Instant| {
        if cfg.timing {
            start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        }
    };

    let start = Instant::now();
    let corrected = correct_and_transform(&erroneous, art, &art.cloud, &t1, &t2, &erroneous.axis(2));
    let time_ms = ms(start);
    match corrected {
        Ok((_, report)) => {
            let (rot, trans) = residuals(&report.pose_after, &gt);
            rec.results.push(MethodResult {
                method: Method::Correction,
                time_ms,
                rot_err_deg: rot,
                trans_err_mm: trans,
            });
        }
        Err(e) => fail(&mut rec, Method::Correction.name(), e),
    }

    let start = Instant::now();
    let icp = icp_refine(&art.cloud, &target, &erroneous, &s.icp);
    let time_ms = ms(start);
    match icp {
        Ok(r) => {
            let (rot, trans) = residuals(&r.pose, &gt);
            rec.results.push(MethodResult {
                method: Method::Icp,
                time_ms,
                rot_err_deg: rot,
                trans_err_mm: trans,
            });
        }
        Err(e) => fail(&mut rec, Method::Icp.name(), e),
    }
    rec
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub trials: usize,
    pub failures: usize,
    pub avg_time_ms: f64,
    pub avg_rot_err_deg: f64,
    pub avg_trans_err_mm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub records: Vec<TrialRecord>,
    pub summary: Vec<SummaryRow>,
}

pub fn summarize(records: &[TrialRecord]) -> Vec<SummaryRow> {
    [Method::Correction, Method::Icp]
        .into_iter()
        .map(|method| {
            let ok: Vec<&MethodResult> = records.iter().filter_map(|r| r.result(method)).collect();
            let n = ok.len();
            let mean = |f: fn(&MethodResult) -> f64| {
                if n == 0 {
                    f64::NAN
                } else {
                    ok.iter().map(|r| f(r)).sum::<f64>() / n as f64
                }
            };
            SummaryRow {
                method,
                trials: n,
                failures: records.len() - n,
                avg_time_ms: mean(|r| r.time_ms),
                avg_rot_err_deg: mean(|r| r.rot_err_deg),
                avg_trans_err_mm: mean(|r| r.trans_err_mm),
            }
        })
        .collect()
}

/// Runs all trials; rows come back in trial order even when run in parallel.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let art = cfg.settings.artificial()?;
    if cfg.timing {
        for i in 0..cfg.warmup.min(cfg.trials) {
            run_trial(cfg, &art, i);
        }
    }
    let records: Vec<TrialRecord> = if cfg.parallel {
        (0..cfg.trials)
            .into_par_iter()
            .map(|i| run_trial(cfg, &art, i))
            .collect()
    } else {
        (0..cfg.trials).map(|i| run_trial(cfg, &art, i)).collect()
    };
    let summary = summarize(&records);
    Ok(BenchReport { records, summary })
}

pub fn trials_csv(records: &[TrialRecord]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in records {
        for m in &r.results {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.trial,
                r.seed,
                r.inj_yaw_deg,
                r.inj_dt_mm.x,
                r.inj_dt_mm.y,
                r.inj_dt_mm.z,
                m.method.name(),
                m.time_ms,
                m.rot_err_deg,
                m.trans_err_mm
            )
            .unwrap();
        }
    }
    s
}

pub fn summary_csv(summary: &[SummaryRow]) -> String {
    let mut s = String::from("method,trials,failures,avg_time_ms,avg_rot_err_deg,avg_trans_err_mm\n");
    for r in summary {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.method.name(),
            r.trials,
            r.failures,
            r.avg_time_ms,
            r.avg_rot_err_deg,
            r.avg_trans_err_mm
        )
        .unwrap();
    }
    s
}

pub fn failures_csv(records: &[TrialRecord]) -> String {
    let mut s = String::from("trial,seed,stage,error\n");
    for r in records {
        for f in &r.failures {
            writeln!(
                s,
                "{},{},{},\"{}\"",
                r.trial,
                r.seed,
                f.stage,
                f.error.replace('"', "'")
            )
            .unwrap();
        }
    }
    s
}

/// Writes the trial rows, summary and failure list into `dir`.
pub fn write_reports(dir: &Path, report: &BenchReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(CSV_FILE), trials_csv(&report.records))?;
    std::fs::write(dir.join(SUMMARY_FILE), summary_csv(&report.summary))?;
    std::fs::write(dir.join(FAILURES_FILE), failures_csv(&report.records))?;
    Ok(())
}

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cuboid_pose::bench::{run_bench, summary_csv, write_reports, BenchConfig};
use cuboid_pose::config::KeyValues;
use cuboid_pose::geometry::{apply_transform, rectangle_rotation_error, CuboidSpec, Plane, Pose};
use cuboid_pose::pipeline::{run_pipeline, SceneInput, Settings, Stage, StageError, SETTINGS_KEYS};
use cuboid_pose::synth::{
    parse_sidecar, random_face_pose, render_scene, write_scene, BackgroundPlane, SceneSpec, TRUTH_FILE,
};
use cuboid_pose::{ply, Error, Point3, Vec3};

#[derive(Parser)]
#[command(name = "cuboid-pose", version, about = "Cuboid face pose estimation and correction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic RGB-D scene with ground truth
    Synth(Common),
    /// Estimate and correct the face pose in a scene directory
    Pipeline {
        scene: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Compare the correction against ICP over seeded trials
    Bench(Common),
}

fn load_config(path: Option<&Path>) -> Result<KeyValues, Error> {
    match path {
        Some(p) => KeyValues::load(p),
        None => KeyValues::parse(""),
    }
}

const SYNTH_KEYS: &[&str] = &[
    "face_width",
    "face_height",
    "face_depth",
    "distance",
    "max_tilt_deg",
    "noise_mm",
    "dropout_corner",
    "dropout",
    "outliers",
    "background_z",
];

fn synth(common: &Common) -> Result<PathBuf, Error> {
    let kv = load_config(common.config.as_deref())?;
    kv.check_known(SYNTH_KEYS)?;
    let cuboid = CuboidSpec {
        width: kv.get_or("face_width", 0.30)?,
        height: kv.get_or("face_height", 0.20)?,
        depth: kv.get_or("face_depth", 0.05)?,
    };
    cuboid.validate().map_err(|e| Error::Config(e.to_string()))?;
    let seed = common.seed.unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let distance = kv.get_array("distance")?.unwrap_or([0.9, 1.1]);
    let gt = random_face_pose(&mut rng, distance, kv.get_or("max_tilt_deg", 10.0)?);
    let mut spec = SceneSpec::new(cuboid, gt);
    spec.seed = seed;
    spec.noise_sigma = kv.get_or("noise_mm", 1.0)? * 1e-3;
    let frac: f64 = kv.get_or("dropout", 0.0)?;
    if frac > 0.0 {
        spec.dropout = vec![(kv.get_or("dropout_corner", 0usize)?, frac)];
    }
    spec.outliers = kv.get_or("outliers", 0)?;
    if let Some(z) = kv.get::<f64>("background_z")? {
        spec.background.push(BackgroundPlane {
            plane: Plane {
                point: Point3::new(0.0, 0.0, z),
                normal: -Vec3::z(),
            },
            color: [90, 90, 90],
        });
    }
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    let scene = render_scene(&spec)?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("scene"));
    write_scene(&out, &spec, &scene)?;
    Ok(out)
}

fn pose_line(p: &Pose) -> String {
    p.to_row_major()
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn pipeline(scene: &Path, common: &Common) -> Result<String, StageError> {
    let load = |e: Error| StageError {
        stage: Stage::Load,
        source: e,
    };
    let kv = load_config(common.config.as_deref()).map_err(load)?;
    kv.check_known(SETTINGS_KEYS).map_err(load)?;
    let mut settings = Settings::from_kv(&kv).map_err(load)?;
    if let Some(seed) = common.seed {
        settings.coarse.seed = seed;
    }
    let input = SceneInput::load(scene).map_err(load)?;
    let out = run_pipeline(&input, &settings)?;

    let truth = match std::fs::read_to_string(scene.join(TRUTH_FILE)) {
        Ok(text) => Some(parse_sidecar(&text, input.intrinsics).map_err(load)?.gt_pose),
        Err(_) => None,
    };
    let (rot, trans) = match truth {
        Some(gt) => (
            rectangle_rotation_error(&out.final_pose, &gt).to_degrees().to_string(),
            (out.final_pose.translation_distance_to(&gt) * 1e3).to_string(),
        ),
        None => (String::new(), String::new()),
    };
    let r = &out.report;
    let mut csv = String::from(
        "yaw_error_deg,dt_mm_x,dt_mm_y,dt_mm_z,t_estimate_ms,coarse_score,coarse_ms,rot_err_deg,trans_err_mm\n",
    );
    writeln!(
        csv,
        "{},{},{},{},{},{},{},{rot},{trans}",
        r.yaw_error,
        r.translation_error.x,
        r.translation_error.y,
        r.translation_error.z,
        r.t_estimate.as_secs_f64() * 1e3,
        out.coarse.score,
        out.coarse.elapsed.as_secs_f64() * 1e3,
    )
    .unwrap();
    let pose_txt = format!(
        "pose = {}\ncoarse_pose = {}\n",
        pose_line(&out.final_pose),
        pose_line(&r.pose_before)
    );

    if let Some(dir) = &common.out {
        let write = || -> Result<(), Error> {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("pose.txt"), &pose_txt)?;
            std::fs::write(dir.join("report.csv"), &csv)?;
            let art = settings.artificial()?;
            ply::write_ply(&dir.join("face.ply"), &apply_transform(&out.final_pose, &art.cloud))
        };
        write().map_err(|e| StageError {
            stage: Stage::Correct,
            source: e,
        })?;
    }
    Ok(format!("{pose_txt}{csv}"))
}

fn bench(common: &Common) -> Result<String, Error> {
    let kv = load_config(common.config.as_deref())?;
    let mut cfg = BenchConfig::from_kv(&kv)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    let report = run_bench(&cfg)?;
    write_reports(&cfg.out, &report)?;
    Ok(summary_csv(&report.summary))
}

fn exit_for(e: &Error) -> u8 {
    if e.is_input_error() || matches!(e, Error::Io(_)) {
        2
    } else {
        3
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(c) => synth(c)
            .map(|dir| format!("wrote {}\n", dir.display()))
            .map_err(|e| (exit_for(&e), e.to_string())),
        Command::Pipeline { scene, common } => {
            pipeline(scene, common).map_err(|e| (e.exit_code() as u8, e.to_string()))
        }
        Command::Bench(c) => bench(c).map_err(|e| (exit_for(&e), e.to_string())),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

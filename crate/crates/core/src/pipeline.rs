//! End-to-end pose estimation for one scene: segmentation, filtering, ROI
//! gating, reference points, global registration and correction.

use std::fmt;
use std::path::Path;

use crate::camera::{
    deproject_mask, deproject_mask_colored, inverse_project_at, CameraIntrinsics, DepthImage, MaskImage, RgbImage,
};
use crate::config::KeyValues;
use crate::correction::{correct_pose, make_artificial_cloud, ArtificialCloud, CorrectionReport};
use crate::error::{Error, Result};
use crate::filters::{
    estimate_normals, mls_smooth, passthrough, statistical_outlier_removal, voxel_downsample, Axis, FilterParams,
};
use crate::geometry::{fit_plane, CuboidSpec, Point3, PointCloud, Pose};
use crate::imageio;
use crate::registration::{coarse_register, CoarseParams, IcpParams, RegistrationResult};
use crate::segmentation::{
    fit_quadrilateral, hsv_threshold, region_growing, roi_filter, select_t_points, select_t_points_on_plane, HsvRange,
    RegionGrowingParams, RoiSpec,
};
use crate::spatial::KdTree;
use crate::synth::{DEPTH_FILE, INTRINSICS_FILE, RGB_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segmentation {
    /// Color threshold on the RGB image.
    Hsv,
    /// Smooth-surface clustering of the whole depth cloud.
    Region,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TPointSource {
    /// Quadrilateral corners lifted onto the fitted face plane.
    Plane,
    /// Edge midpoints read from the depth image.
    Depth,
}

/// Processing parameters shared by the pipeline and the benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub cuboid: CuboidSpec,
    pub hsv: HsvRange,
    pub segmentation: Segmentation,
    pub filters: FilterParams,
    pub use_sor: bool,
    pub use_mls: bool,
    pub region: RegionGrowingParams,
    pub roi_tolerance: f64,
    pub t_points: TPointSource,
    pub artificial_pitch: f64,
    pub coarse: CoarseParams,
    pub icp: IcpParams,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            cuboid: CuboidSpec {
                width: 0.30,
                height: 0.20,
                depth: 0.05,
            },
            hsv: HsvRange::red(),
            segmentation: Segmentation::Hsv,
            filters: FilterParams::default(),
            use_sor: true,
            use_mls: true,
            region: RegionGrowingParams::default(),
            roi_tolerance: 0.15,
            t_points: TPointSource::Plane,
            artificial_pitch: 0.0025,
            coarse: CoarseParams::default(),
            icp: IcpParams::default(),
        }
    }
}

pub const SETTINGS_KEYS: &[&str] = &[
    "face_width",
    "face_height",
    "face_depth",
    "hsv_h",
    "hsv_s",
    "hsv_v",
    "segmentation",
    "passthrough_axis",
    "passthrough_range",
    "voxel_leaf",
    "sor",
    "sor_k",
    "sor_mult",
    "normal_radius",
    "mls",
    "mls_radius",
    "mls_order",
    "rg_angle_deg",
    "rg_curvature",
    "rg_min_cluster",
    "rg_neighbors",
    "roi_tolerance",
    "t_points",
    "artificial_pitch",
    "reg_eps",
    "reg_inlier_dist",
    "reg_max_bases",
    "reg_early_exit",
    "reg_min_score",
    "reg_seed",
    "reg_search_leaf",
    "reg_lcp_samples",
    "reg_refine_iters",
    "icp_max_iter",
    "icp_converge_eps",
    "icp_max_corr_dist",
];

pub(crate) fn parse_switch(kv: &KeyValues, key: &str, default: bool) -> Result<bool> {
    match kv.get_str(key) {
        None => Ok(default),
        Some("on" | "true" | "1") => Ok(true),
        Some("off" | "false" | "0") => Ok(false),
        Some(v) => Err(Error::Config(format!("`{key}` must be on or off, got `{v}`"))),
    }
}

impl Settings {
    /// Reads the keys in [`SETTINGS_KEYS`], keeping defaults for absent ones.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = Settings::default();
        let segmentation = match kv.get_str("segmentation") {
            None | Some("hsv") => Segmentation::Hsv,
            Some("region") => Segmentation::Region,
            Some(v) => return Err(Error::Config(format!("unknown segmentation `{v}`"))),
        };
        let t_points = match kv.get_str("t_points") {
            None | Some("plane") => TPointSource::Plane,
            Some("depth") => TPointSource::Depth,
            Some(v) => return Err(Error::Config(format!("unknown t_points `{v}`"))),
        };
        let passthrough = match (
            kv.get::<Axis>("passthrough_axis")?,
            kv.get_array::<2>("passthrough_range")?,
        ) {
            (Some(axis), Some([lo, hi])) => Some((axis, lo, hi)),
            (None, None) => None,
            _ => return Err(Error::Config("passthrough needs both axis and range".into())),
        };
        let f = &d.filters;
        let s = Settings {
            cuboid: CuboidSpec {
                width: kv.get_or("face_width", d.cuboid.width)?,
                height: kv.get_or("face_height", d.cuboid.height)?,
                depth: kv.get_or("face_depth", d.cuboid.depth)?,
            },
            hsv: HsvRange {
                h: kv.get_array("hsv_h")?.unwrap_or(d.hsv.h),
                s: kv.get_array("hsv_s")?.unwrap_or(d.hsv.s),
                v: kv.get_array("hsv_v")?.unwrap_or(d.hsv.v),
            },
            segmentation,
            filters: FilterParams {
                passthrough,
                voxel_leaf: kv.get_or("voxel_leaf", f.voxel_leaf)?,
                sor_k: kv.get_or("sor_k", f.sor_k)?,
                sor_stddev_mult: kv.get_or("sor_mult", f.sor_stddev_mult)?,
                normal_radius: kv.get_or("normal_radius", f.normal_radius)?,
                mls_radius: kv.get_or("mls_radius", f.mls_radius)?,
                mls_order: kv.get_or("mls_order", f.mls_order)?,
            },
            use_sor: parse_switch(kv, "sor", d.use_sor)?,
            use_mls: parse_switch(kv, "mls", d.use_mls)?,
            region: RegionGrowingParams {
                angle_thresh_deg: kv.get_or("rg_angle_deg", d.region.angle_thresh_deg)?,
                curvature_thresh: kv.get_or("rg_curvature", d.region.curvature_thresh)?,
                min_cluster: kv.get_or("rg_min_cluster", d.region.min_cluster)?,
                neighbors: kv.get_or("rg_neighbors", d.region.neighbors)?,
            },
            roi_tolerance: kv.get_or("roi_tolerance", d.roi_tolerance)?,
            t_points,
            artificial_pitch: kv.get_or("artificial_pitch", d.artificial_pitch)?,
            coarse: CoarseParams {
                eps: kv.get_or("reg_eps", d.coarse.eps)?,
                inlier_dist: kv.get_or("reg_inlier_dist", d.coarse.inlier_dist)?,
                max_bases: kv.get_or("reg_max_bases", d.coarse.max_bases)?,
                early_exit: kv.get_or("reg_early_exit", d.coarse.early_exit)?,
                min_score: kv.get_or("reg_min_score", d.coarse.min_score)?,
                seed: kv.get_or("reg_seed", d.coarse.seed)?,
                search_leaf: kv.get_or("reg_search_leaf", d.coarse.search_leaf)?,
                base_min_frac: d.coarse.base_min_frac,
                lcp_samples: kv.get_or("reg_lcp_samples", d.coarse.lcp_samples)?,
                refine_iters: kv.get_or("reg_refine_iters", d.coarse.refine_iters)?,
            },
            icp: IcpParams {
                max_iter: kv.get_or("icp_max_iter", d.icp.max_iter)?,
                converge_eps: kv.get_or("icp_converge_eps", d.icp.converge_eps)?,
                max_corr_dist: kv.get_or("icp_max_corr_dist", d.icp.max_corr_dist)?,
                inlier_dist: d.icp.inlier_dist,
            },
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let as_config = |e: Error| Error::Config(e.to_string());
        self.cuboid.validate().map_err(as_config)?;
        self.hsv.validate().map_err(as_config)?;
        self.filters.validate().map_err(as_config)?;
        self.coarse.validate().map_err(as_config)?;
        self.roi_spec().validate().map_err(as_config)?;
        if !(self.artificial_pitch > 0.0) {
            return Err(Error::Config("artificial_pitch must be positive".into()));
        }
        Ok(())
    }

    pub fn roi_spec(&self) -> RoiSpec {
        RoiSpec {
            width: self.cuboid.width,
            height: self.cuboid.height,
            depth: self.cuboid.depth,
            tolerance: self.roi_tolerance,
        }
    }

    pub fn artificial(&self) -> Result<ArtificialCloud> {
        make_artificial_cloud(&self.cuboid, self.artificial_pitch)
    }

    /// Passthrough, voxel grid, then the optional SOR and MLS passes.
    pub fn filter(&self, cloud: &PointCloud) -> Result<PointCloud> {
        let f = &self.filters;
        let mut c = match f.passthrough {
            Some((axis, lo, hi)) => passthrough(cloud, axis, lo, hi),
            None => cloud.clone(),
        };
        c = voxel_downsample(&c, f.voxel_leaf)?;
        if self.use_sor && c.len() > f.sor_k {
            c = statistical_outlier_removal(&c, f.sor_k, f.sor_stddev_mult)?;
        }
        if self.use_mls && !c.is_empty() {
            c = mls_smooth(&c, f.mls_radius, f.mls_order)?.cloud;
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Load,
    Segment,
    Filter,
    Roi,
    Quadrilateral,
    TPoints,
    Register,
    Correct,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Load => "load",
            Stage::Segment => "segment",
            Stage::Filter => "filter",
            Stage::Roi => "roi",
            Stage::Quadrilateral => "quadrilateral",
            Stage::TPoints => "t_points",
            Stage::Register => "register",
            Stage::Correct => "correct",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage}: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

impl StageError {
    /// Process exit code: 2 for unreadable or invalid input, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.stage == Stage::Load || self.source.is_input_error() {
            2
        } else {
            3
        }
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// RGB-D inputs of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneInput {
    pub intrinsics: CameraIntrinsics,
    pub rgb: RgbImage,
    pub depth: DepthImage,
}

impl SceneInput {
    /// Reads `rgb.ppm`, `depth.pgm` and `intrinsics.txt` from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let intrinsics = CameraIntrinsics::from_key_values(&KeyValues::load(&dir.join(INTRINSICS_FILE))?)?;
        let rgb = imageio::read_rgb_ppm(&dir.join(RGB_FILE))?;
        let depth = imageio::read_depth_pgm(&dir.join(DEPTH_FILE))?;
        rgb.check_dims(&intrinsics, "rgb image")?;
        depth.check_dims(&intrinsics, "depth image")?;
        Ok(Self { intrinsics, rgb, depth })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub final_pose: Pose,
    pub report: CorrectionReport,
    pub coarse: RegistrationResult,
    pub t1: Point3,
    pub t2: Point3,
    /// Points in the selected face segment.
    pub segment_points: usize,
}

/// Pixels whose depth point lies within `max_dist` of a segment point.
fn mask_near_segment(intr: &CameraIntrinsics, depth: &DepthImage, segment: &PointCloud, max_dist: f64) -> MaskImage {
    let tree = KdTree::build(&segment.points);
    let mut mask = MaskImage::filled(intr.width, intr.height, 0);
    for y in 0..depth.height {
        for x in 0..depth.width {
            let z = depth.get(x, y);
            if z > 0.0
                && tree
                    .nearest(&inverse_project_at(intr, x as f64, y as f64, z), max_dist)
                    .is_some()
            {
                mask.set(x, y, 255);
            }
        }
    }
    mask
}

/// Runs the full chain on one scene and returns the corrected face pose.
pub fn run_pipeline(input: &SceneInput, settings: &Settings) -> std::result::Result<PipelineOutput, StageError> {
    settings.validate().at(Stage::Load)?;
    let intr = &input.intrinsics;
    let (segment, mask) = match settings.segmentation {
        Segmentation::Hsv => {
            let mask = hsv_threshold(&input.rgb, &settings.hsv);
            let raw = deproject_mask_colored(intr, &input.depth, &mask, &input.rgb).at(Stage::Segment)?;
            if raw.len() < 50 {
                return Err(StageError {
                    stage: Stage::Roi,
                    source: Error::NoRoiMatch,
                });
            }
            let cloud = settings.filter(&raw).at(Stage::Filter)?;
            let (_, _) = roi_filter(std::slice::from_ref(&cloud), &settings.roi_spec()).at(Stage::Roi)?;
            (cloud, mask)
        }
        Segmentation::Region => {
            let all = MaskImage::filled(intr.width, intr.height, 1);
            let raw = deproject_mask(intr, &input.depth, &all).at(Stage::Segment)?;
            let cloud = settings.filter(&raw).at(Stage::Filter)?;
            if cloud.len() < 50 {
                return Err(StageError {
                    stage: Stage::Roi,
                    source: Error::NoRoiMatch,
                });
            }
            let est = estimate_normals(&cloud, settings.filters.normal_radius).at(Stage::Segment)?;
            let clusters = region_growing(&est.cloud, &est.curvature, &settings.region).at(Stage::Segment)?;
            let segments: Vec<PointCloud> = clusters.iter().map(|c| est.cloud.select(c)).collect();
            let (best, _) = roi_filter(&segments, &settings.roi_spec()).at(Stage::Roi)?;
            let segment = PointCloud::new(segments[best].points.clone());
            let mask = mask_near_segment(intr, &input.depth, &segment, settings.filters.voxel_leaf);
            (segment, mask)
        }
    };

    let quad = fit_quadrilateral(&mask).at(Stage::Quadrilateral)?;
    let (t1, t2) = match settings.t_points {
        TPointSource::Plane => {
            let plane = fit_plane(&segment).at(Stage::TPoints)?;
            select_t_points_on_plane(&quad, intr, &plane)
        }
        TPointSource::Depth => select_t_points(&quad, intr, &input.depth),
    }
    .at(Stage::TPoints)?;

    let art = settings.artificial().at(Stage::Register)?;
    let coarse = coarse_register(&art.cloud, &segment, &settings.coarse).at(Stage::Register)?;
    let (final_pose, report) = correct_pose(&coarse.pose, &art, &t1, &t2, &coarse.pose.axis(2)).at(Stage::Correct)?;
    Ok(PipelineOutput {
        final_pose,
        report,
        coarse,
        t1,
        t2,
        segment_points: segment.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rectangle_rotation_error, rot_x, Plane, Vec3};
    use crate::synth::{random_face_pose, render_scene, write_scene, BackgroundPlane, SceneSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene(seed: u64, noise: f64, dropout: f64) -> (SceneSpec, SceneInput) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec = SceneSpec::new(Settings::default().cuboid, random_face_pose(&mut rng, [0.9, 1.1], 10.0));
        spec.noise_sigma = noise;
        spec.seed = seed;
        if dropout > 0.0 {
            spec.dropout = vec![(1, dropout)];
        }
        let s = render_scene(&spec).unwrap();
        let input = SceneInput {
            intrinsics: spec.intrinsics,
            rgb: s.rgb,
            depth: s.depth,
        };
        (spec, input)
    }

    #[test]
    fn settings_parse_and_reject() {
        let kv = KeyValues::parse("face_width = 0.4\nsegmentation = region\nmls = off\nhsv_h = 350, 10\n").unwrap();
        let s = Settings::from_kv(&kv).unwrap();
        assert_eq!(s.cuboid.width, 0.4);
        assert_eq!(s.segmentation, Segmentation::Region);
        assert!(!s.use_mls);
        assert_eq!(s.hsv.h, [350.0, 10.0]);
        for bad in [
            "segmentation = magic",
            "mls = maybe",
            "voxel_leaf = -1",
            "face_width = 0.1",
            "passthrough_axis = z",
        ] {
            let kv = KeyValues::parse(bad).unwrap();
            assert!(matches!(Settings::from_kv(&kv), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn clean_scene_recovers_ground_truth() {
        let (spec, input) = scene(1, 0.0, 0.0);
        let out = run_pipeline(&input, &Settings::default()).unwrap();
        let rot = rectangle_rotation_error(&out.final_pose, &spec.gt_pose).to_degrees();
        let trans = out.final_pose.translation_distance_to(&spec.gt_pose) * 1e3;
        assert!(rot <= 0.25 && trans <= 0.5, "{rot} deg, {trans} mm");
    }

    #[test]
    fn dropout_scene_still_succeeds() {
        let (spec, input) = scene(2, 0.001, 0.1);
        let out = run_pipeline(&input, &Settings::default()).unwrap();
        let rot = rectangle_rotation_error(&out.final_pose, &spec.gt_pose).to_degrees();
        let trans = out.final_pose.translation_distance_to(&spec.gt_pose) * 1e3;
        assert!(rot <= 1.0 && trans <= 2.0, "{rot} deg, {trans} mm");
    }

    #[test]
    fn depth_t_points_mode() {
        let (spec, input) = scene(3, 0.0, 0.0);
        let settings = Settings {
            t_points: TPointSource::Depth,
            ..Default::default()
        };
        let out = run_pipeline(&input, &settings).unwrap();
        assert!(rectangle_rotation_error(&out.final_pose, &spec.gt_pose).to_degrees() < 1.0);
        assert!(out.final_pose.translation_distance_to(&spec.gt_pose) < 0.003);
    }

    #[test]
    fn no_red_pixels_is_no_roi_match() {
        let (_, mut input) = scene(4, 0.0, 0.0);
        for px in input.rgb.data.iter_mut() {
            *px = [px[2], px[1], px[0]];
        }
        let err = run_pipeline(&input, &Settings::default()).unwrap_err();
        assert!(matches!(err.source, Error::NoRoiMatch), "{err}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn region_growing_mode_with_background() {
        let mut spec = SceneSpec::new(
            Settings::default().cuboid,
            Pose::new(rot_x(std::f64::consts::PI + 0.1), Vec3::new(0.02, 0.01, 1.0)).unwrap(),
        );
        spec.background.push(BackgroundPlane {
            plane: Plane {
                point: Point3::new(0.0, 0.0, 1.4),
                normal: -Vec3::z(),
            },
            color: [90, 90, 90],
        });
        let s = render_scene(&spec).unwrap();
        let input = SceneInput {
            intrinsics: spec.intrinsics,
            rgb: s.rgb,
            depth: s.depth,
        };
        let settings = Settings {
            segmentation: Segmentation::Region,
            ..Default::default()
        };
        let out = run_pipeline(&input, &settings).unwrap();
        assert!(rectangle_rotation_error(&out.final_pose, &spec.gt_pose).to_degrees() < 1.0);
        assert!(out.final_pose.translation_distance_to(&spec.gt_pose) < 0.003);
    }

    #[test]
    fn load_from_disk() {
        let (spec, _) = scene(5, 0.0, 0.0);
        let dir = tempfile::tempdir().unwrap();
        write_scene(dir.path(), &spec, &render_scene(&spec).unwrap()).unwrap();
        let input = SceneInput::load(dir.path()).unwrap();
        assert!(run_pipeline(&input, &Settings::default()).is_ok());
        assert!(SceneInput::load(&dir.path().join("missing")).is_err());
    }
}

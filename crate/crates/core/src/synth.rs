//! Synthetic RGB-D scenes of a rectangular face under a known pose, with
//! depth noise along the viewing ray, corner dropout and injected pose error.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::camera::{inverse_project_at, project, CameraIntrinsics, DepthImage, MaskImage, RgbImage};
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::geometry::{rot_x, rot_y, rot_z, CuboidSpec, Plane, Point3, PointCloud, Pose, Vec3};
use crate::{imageio, ply};

pub const FACE_COLOR: [u8; 3] = [200, 30, 30];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundPlane {
    pub plane: Plane,
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub cuboid: CuboidSpec,
    pub gt_pose: Pose,
    pub intrinsics: CameraIntrinsics,
    /// Standard deviation of range noise, meters.
    pub noise_sigma: f64,
    /// (corner index, disk radius as a fraction of the face diagonal).
    /// Corners in the face frame: 0 = (−w/2, −h/2), 1 = (w/2, −h/2),
    /// 2 = (w/2, h/2), 3 = (−w/2, h/2).
    pub dropout: Vec<(usize, f64)>,
    pub background: Vec<BackgroundPlane>,
    /// Stray points scattered around the face, appended to the cloud only.
    pub outliers: usize,
    pub seed: u64,
}

impl SceneSpec {
    /// Noiseless face with no background at the given pose.
    pub fn new(cuboid: CuboidSpec, gt_pose: Pose) -> Self {
        Self {
            cuboid,
            gt_pose,
            intrinsics: CameraIntrinsics::default(),
            noise_sigma: 0.0,
            dropout: Vec::new(),
            background: Vec::new(),
            outliers: 0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cuboid.validate()?;
        self.intrinsics.validate()?;
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidSpec(format!("noise_sigma {}", self.noise_sigma)));
        }
        for &(corner, frac) in &self.dropout {
            if corner > 3 || !(0.0..0.3).contains(&frac) {
                return Err(Error::InvalidSpec(format!("dropout ({corner}, {frac})")));
            }
        }
        if self.gt_pose.translation().z <= 0.3 {
            return Err(Error::InvalidSpec("face must be more than 0.3 m away".into()));
        }
        Ok(())
    }

    /// Face corners in the face frame, in dropout index order.
    pub fn local_corners(&self) -> [Point3; 4] {
        let (w, h) = (self.cuboid.width / 2.0, self.cuboid.height / 2.0);
        [(-w, -h), (w, -h), (w, h), (-w, h)].map(|(x, y)| Point3::new(x, y, 0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointLabel {
    Face,
    Background,
    Outlier,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub gt_pose: Pose,
    /// Pixels where the face is the nearest surface, with or without depth.
    pub face_mask: MaskImage,
    /// One label per point of the rendered cloud.
    pub labels: Vec<PointLabel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub rgb: RgbImage,
    pub depth: DepthImage,
    pub cloud: PointCloud,
    pub truth: GroundTruth,
}

/// Pixel area of the face's projected outline.
pub fn projected_face_area(spec: &SceneSpec) -> Result<f64> {
    let px: Vec<(f64, f64)> = spec
        .local_corners()
        .iter()
        .map(|c| project(&spec.intrinsics, &spec.gt_pose.transform_point(c)).map(|(x, y, _)| (x, y)))
        .collect::<Result<_>>()?;
    let area: f64 = (0..4)
        .map(|i| {
            let (a, b) = (px[i], px[(i + 1) % 4]);
            a.0 * b.1 - a.1 * b.0
        })
        .sum();
    Ok(area.abs() / 2.0)
}

/// Ray-traces the face and background planes at every pixel center. The
/// nearest surface wins; range noise is applied along the ray, then depth is
/// quantized to millimeters. Dropout disks invalidate face depth only.
pub fn render_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let intr = &spec.intrinsics;
    let (w, h) = (intr.width, intr.height);
    let expected = projected_face_area(spec)?;
    let inv = spec.gt_pose.inverse();
    let face_plane = Plane {
        point: Point3::from(*spec.gt_pose.translation()),
        normal: spec.gt_pose.axis(2),
    };
    let (hw, hh) = (spec.cuboid.width / 2.0, spec.cuboid.height / 2.0);
    let corners = spec.local_corners();
    let drop_disks: Vec<(Point3, f64)> = spec
        .dropout
        .iter()
        .map(|&(c, f)| (corners[c], f * spec.cuboid.diagonal()))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).unwrap();
    let mut rgb = RgbImage::filled(w, h, [0, 0, 0]);
    let mut depth = DepthImage::filled(w, h, 0.0);
    let mut face_mask = MaskImage::filled(w, h, 0);
    let mut hit_label = vec![PointLabel::Background; w * h];

    for y in 0..h {
        for x in 0..w {
            let ray = intr.ray(x as f64, y as f64);
            // (hit, color, Some(dropped) for the face)
            let mut best: Option<(Point3, [u8; 3], Option<bool>)> = None;
            if let Some(p) = face_plane.intersect_ray(&ray) {
                let local = inv.transform_point(&p);
                if local.x.abs() <= hw && local.y.abs() <= hh {
                    let dropped = drop_disks.iter().any(|(c, r)| (local - c).norm() <= *r);
                    best = Some((p, FACE_COLOR, Some(dropped)));
                }
            }
            for bg in &spec.background {
                if let Some(p) = bg.plane.intersect_ray(&ray) {
                    if best.is_none_or(|(q, _, _)| p.z < q.z) {
                        best = Some((p, bg.color, None));
                    }
                }
            }
            let Some((p, color, face)) = best else { continue };
            let i = y * w + x;
            rgb.data[i] = color;
            if face.is_some() {
                face_mask.data[i] = 255;
                hit_label[i] = PointLabel::Face;
            }
            if face == Some(true) {
                continue;
            }
            let range = p.coords.norm();
            let n = if spec.noise_sigma > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            depth.data[i] = DepthImage::quantize_mm(p.z * (1.0 + n / range));
        }
    }

    let visible = face_mask.count_nonzero();
    if (visible as f64) < 0.5 * expected {
        return Err(Error::FaceOutOfView { visible, expected });
    }

    let mut points = Vec::new();
    let mut colors = Vec::new();
    let mut labels = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if depth.data[i] > 0.0 {
                points.push(inverse_project_at(intr, x as f64, y as f64, depth.data[i]));
                colors.push(rgb.data[i]);
                labels.push(hit_label[i]);
            }
        }
    }
    let center = spec.gt_pose.translation();
    let spread = spec.cuboid.diagonal();
    for _ in 0..spec.outliers {
        let offset = Vec3::from_fn(|_, _| rng.random_range(-spread..spread));
        points.push(Point3::from(center + offset));
        colors.push([128, 128, 128]);
        labels.push(PointLabel::Outlier);
    }

    Ok(Scene {
        rgb,
        depth,
        cloud: PointCloud::new(points).with_colors(colors)?,
        truth: GroundTruth {
            gt_pose: spec.gt_pose,
            face_mask,
            labels,
        },
    })
}

/// Erroneous pose that differs from `gt` by `yaw_deg` about the face normal
/// and by `dt` (meters, camera frame) in position.
pub fn inject_pose_error(gt: &Pose, yaw_deg: f64, dt: &Vec3) -> Pose {
    gt.compose(&Pose::from_approx(
        rot_z(yaw_deg.to_radians()),
        gt.rotation().transpose() * dt,
    ))
}

/// Face facing the camera at `distance` meters, tilted out of plane by up to
/// `max_tilt_deg` about each in-plane axis, at any in-plane rotation, with a
/// small lateral offset that keeps it in view.
pub fn random_face_pose<R: Rng>(rng: &mut R, distance: [f64; 2], max_tilt_deg: f64) -> Pose {
    let z = rng.random_range(distance[0]..=distance[1]);
    let tilt = max_tilt_deg.to_radians();
    let (ax, ay) = if tilt > 0.0 {
        (rng.random_range(-tilt..=tilt), rng.random_range(-tilt..=tilt))
    } else {
        (0.0, 0.0)
    };
    let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let lateral = 0.05 * z;
    let t = Vec3::new(
        rng.random_range(-lateral..=lateral),
        rng.random_range(-lateral..=lateral),
        z,
    );
    Pose::from_approx(rot_x(std::f64::consts::PI) * rot_x(ax) * rot_y(ay) * rot_z(yaw), t)
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

/// Ground-truth sidecar: the pose as 16 row-major numbers plus the scene
/// parameters, as `key = value` lines.
pub fn sidecar_string(spec: &SceneSpec) -> String {
    let mut s = format!("pose = {}\n", join(spec.gt_pose.to_row_major()));
    s += &format!(
        "face_width = {}\nface_height = {}\nface_depth = {}\n",
        spec.cuboid.width, spec.cuboid.height, spec.cuboid.depth
    );
    s += &format!("noise_sigma = {}\n", spec.noise_sigma);
    s += &format!(
        "dropout = {}\n",
        join(spec.dropout.iter().flat_map(|&(c, f)| [c as f64, f]))
    );
    s += &format!(
        "background = {}\n",
        join(spec.background.iter().flat_map(|b| {
            let (p, n, c) = (b.plane.point, b.plane.normal, b.color);
            [p.x, p.y, p.z, n.x, n.y, n.z, c[0] as f64, c[1] as f64, c[2] as f64]
        }))
    );
    s += &format!("outliers = {}\nseed = {}\n", spec.outliers, spec.seed);
    s
}

/// Parses a sidecar back into a spec; intrinsics come from `intrinsics`.
pub fn parse_sidecar(text: &str, intrinsics: CameraIntrinsics) -> Result<SceneSpec> {
    let kv = KeyValues::parse(text)?;
    let pose: [f64; 16] = kv
        .get_array("pose")?
        .ok_or_else(|| Error::Config("missing key `pose`".into()))?;
    let dropout = kv.get_list("dropout")?.unwrap_or_default();
    let background = kv.get_list("background")?.unwrap_or_default();
    if dropout.len() % 2 != 0 || background.len() % 9 != 0 {
        return Err(Error::Config("dropout or background list has a partial entry".into()));
    }
    let spec = SceneSpec {
        cuboid: CuboidSpec {
            width: kv.require("face_width")?,
            height: kv.require("face_height")?,
            depth: kv.require("face_depth")?,
        },
        gt_pose: Pose::from_row_major(&pose)?,
        intrinsics,
        noise_sigma: kv.get_or("noise_sigma", 0.0)?,
        dropout: dropout.chunks(2).map(|c| (c[0] as usize, c[1])).collect(),
        background: background
            .chunks(9)
            .map(|b| BackgroundPlane {
                plane: Plane {
                    point: Point3::new(b[0], b[1], b[2]),
                    normal: Vec3::new(b[3], b[4], b[5]),
                },
                color: [b[6] as u8, b[7] as u8, b[8] as u8],
            })
            .collect(),
        outliers: kv.get_or("outliers", 0)?,
        seed: kv.get_or("seed", 0)?,
    };
    spec.validate()?;
    Ok(spec)
}

pub const RGB_FILE: &str = "rgb.ppm";
pub const DEPTH_FILE: &str = "depth.pgm";
pub const MASK_FILE: &str = "gt_mask.pgm";
pub const CLOUD_FILE: &str = "cloud.ply";
pub const INTRINSICS_FILE: &str = "intrinsics.txt";
pub const TRUTH_FILE: &str = "truth.txt";

/// Writes a rendered scene into `dir`, creating it if needed.
pub fn write_scene(dir: &Path, spec: &SceneSpec, scene: &Scene) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    imageio::write_rgb_ppm(&dir.join(RGB_FILE), &scene.rgb)?;
    imageio::write_depth_pgm(&dir.join(DEPTH_FILE), &scene.depth)?;
    imageio::write_mask_pgm(&dir.join(MASK_FILE), &scene.truth.face_mask)?;
    ply::write_ply(&dir.join(CLOUD_FILE), &scene.cloud)?;
    std::fs::write(dir.join(INTRINSICS_FILE), spec.intrinsics.to_key_values())?;
    std::fs::write(dir.join(TRUTH_FILE), sidecar_string(spec))?;
    Ok(())
}

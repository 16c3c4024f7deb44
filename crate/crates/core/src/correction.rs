//! Yaw and translation correction of a registered face pose.
//!
//! A registration aligns an origin-centered artificial rectangle with the
//! observed face. Two points on the artificial cloud (its origin and a point
//! on its major axis) are compared against two points on the observed face
//! (T1, T2, the midpoints of its short edges). The angle between the two
//! segments gives the yaw error about the face normal, and the offset between
//! the T1/T2 midpoint and the artificial origin gives the translation error.
//! Estimating both touches a constant number of points.

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::geometry::{apply_transform, signed_angle_in_plane, CuboidSpec, Point3, PointCloud, Pose, Vec3};

/// Planar grid over the face rectangle in its local frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ArtificialCloud {
    pub cloud: PointCloud,
    pub spec: CuboidSpec,
    pub pitch: f64,
}

/// Builds a `(⌊w/pitch⌋+1) × (⌊h/pitch⌋+1)` grid spanning exactly
/// `[−w/2, w/2] × [−h/2, h/2]` at z = 0. Spacing is stretched slightly when the
/// dimensions are not multiples of `pitch`, so the edges are always sampled.
pub fn make_artificial_cloud(spec: &CuboidSpec, pitch: f64) -> Result<ArtificialCloud> {
    spec.validate()?;
    if !(pitch > 0.0 && pitch < spec.height.min(spec.width) / 4.0) {
        return Err(Error::InvalidSpec(format!(
            "pitch {pitch} must be in (0, {})",
            spec.height / 4.0
        )));
    }
    // Tolerate w/pitch landing a hair under an integer.
    let count = |len: f64| (len / pitch + 1e-9).floor() as usize + 1;
    let (nx, ny) = (count(spec.width), count(spec.height));
    let coord = |i: usize, n: usize, len: f64| (i as f64 - (n - 1) as f64 / 2.0) * (len / (n - 1) as f64);
    let mut points = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        let y = coord(j, ny, spec.height);
        for i in 0..nx {
            points.push(Point3::new(coord(i, nx, spec.width), y, 0.0));
        }
    }
    Ok(ArtificialCloud {
        cloud: PointCloud::new(points),
        spec: *spec,
        pitch,
    })
}

/// Reference points of the registered artificial cloud: the transformed
/// origin and a transformed point a quarter width along the major axis.
pub fn select_a_points(art: &ArtificialCloud, pose: &Pose) -> (Point3, Point3) {
    (
        pose.transform_point(&Point3::origin()),
        pose.transform_point(&Point3::new(art.spec.width / 4.0, 0.0, 0.0)),
    )
}

/// Angle that rotates segment A1→A2 onto T1→T2 about `face_normal`, folded
/// into (−π/2, π/2] since a rectangle looks the same after a half turn.
pub fn estimate_rotation_error(t1: &Point3, t2: &Point3, a1: &Point3, a2: &Point3, face_normal: &Vec3) -> Result<f64> {
    use std::f64::consts::{FRAC_PI_2, PI};
    let theta = signed_angle_in_plane(&(a2 - a1), &(t2 - t1), face_normal).map_err(|_| Error::DegenerateSegment)?;
    Ok(if theta > FRAC_PI_2 {
        theta - PI
    } else if theta <= -FRAC_PI_2 {
        theta + PI
    } else {
        theta
    })
}

/// Camera-frame offset from the registered origin to the T1/T2 midpoint.
pub fn estimate_translation_error(t1: &Point3, t2: &Point3, pose_rot_corrected: &Pose) -> Vec3 {
    let c1 = (t1.coords + t2.coords) / 2.0;
    c1 - pose_rot_corrected.translation()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectionReport {
    /// Estimated yaw error in degrees.
    pub yaw_error: f64,
    /// Estimated translation error in millimeters, camera frame.
    pub translation_error: Vec3,
    pub pose_before: Pose,
    pub pose_after: Pose,
    pub t_estimate: Duration,
    pub t_correct: Duration,
}

/// Corrects yaw about the face normal first, then translation over the
/// rotated pose, composing both into a single right-multiplied transform.
/// The corrected origin lands exactly on the T1/T2 midpoint.
pub fn correct_pose(
    pose: &Pose,
    art: &ArtificialCloud,
    t1: &Point3,
    t2: &Point3,
    face_normal: &Vec3,
) -> Result<(Pose, CorrectionReport)> {
    let start = Instant::now();
    let (a1, a2) = select_a_points(art, pose);
    let theta = estimate_rotation_error(t1, t2, &a1, &a2, face_normal)?;
    // Rotating about local z equals rotating about the normal only when the
    // two agree in sign.
    let local_theta = if face_normal.dot(&pose.axis(2)) < 0.0 {
        -theta
    } else {
        theta
    };
    let rotated = pose.compose(&Pose::rot_z(local_theta));
    let dt_cam = estimate_translation_error(t1, t2, &rotated);
    let dt_loc = rotated.rotation().transpose() * dt_cam;
    let fixed = rotated.compose(&Pose::from_translation(dt_loc));
    let t_estimate = start.elapsed();
    Ok((
        fixed,
        CorrectionReport {
            yaw_error: theta.to_degrees(),
            translation_error: dt_cam * 1000.0,
            pose_before: *pose,
            pose_after: fixed,
            t_estimate,
            t_correct: Duration::ZERO,
        },
    ))
}

/// [`correct_pose`] followed by re-transforming `cloud` (local frame) with the
/// corrected pose; `t_correct` covers the whole call.
pub fn correct_and_transform(
    pose: &Pose,
    art: &ArtificialCloud,
    cloud: &PointCloud,
    t1: &Point3,
    t2: &Point3,
    face_normal: &Vec3,
) -> Result<(PointCloud, CorrectionReport)> {
    let start = Instant::now();
    let (fixed, mut report) = correct_pose(pose, art, t1, t2, face_normal)?;
    let moved = apply_transform(&fixed, cloud);
    report.t_correct = start.elapsed();
    Ok((moved, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{centroid, fit_obb, rectangle_rotation_error, rot_x, rot_z};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn spec() -> CuboidSpec {
        CuboidSpec {
            width: 0.30,
            height: 0.20,
            depth: 0.05,
        }
    }

    fn art() -> ArtificialCloud {
        make_artificial_cloud(&spec(), 0.01).unwrap()
    }

    /// Face 1 m in front of the camera facing it, tilted a little.
    fn gt() -> Pose {
        Pose::new(
            rot_x(std::f64::consts::PI) * rot_x(0.1) * rot_z(0.4),
            Vec3::new(0.05, -0.02, 1.0),
        )
        .unwrap()
    }

    /// Ideal T points: local (±w/2, 0, 0) under the true pose.
    fn t_points(pose: &Pose) -> (Point3, Point3) {
        let w = spec().width / 2.0;
        (
            pose.transform_point(&Point3::new(-w, 0.0, 0.0)),
            pose.transform_point(&Point3::new(w, 0.0, 0.0)),
        )
    }

    fn inject(gt: &Pose, yaw_deg: f64, dt: Vec3) -> Pose {
        gt.compose(&Pose::new(rot_z(yaw_deg.to_radians()), gt.rotation().transpose() * dt).unwrap())
    }

    #[test]
    fn grid_shape_and_centroid() {
        let a = art();
        assert_eq!(a.cloud.len(), 31 * 21);
        let c = centroid(&a.cloud).unwrap();
        assert!(c.coords.norm() < 1e-12);
        let obb = fit_obb(&a.cloud).unwrap();
        assert_relative_eq!(obb.half_extents[0], 0.15, epsilon = 1e-12);
        assert_relative_eq!(obb.half_extents[1], 0.10, epsilon = 1e-12);
        assert!(obb.half_extents[2].abs() < 1e-12);
    }

    #[test]
    fn grid_count_formula() {
        for (w, h, p) in [(0.3, 0.2, 0.007), (0.25, 0.1, 0.02), (0.5, 0.5, 0.1)] {
            let s = CuboidSpec {
                width: w,
                height: h,
                depth: 0.0,
            };
            let a = make_artificial_cloud(&s, p).unwrap();
            let n = |l: f64| (l / p + 1e-9).floor() as usize + 1;
            assert_eq!(a.cloud.len(), n(w) * n(h));
        }
        assert!(make_artificial_cloud(&spec(), 0.06).is_err());
        assert!(make_artificial_cloud(&spec(), 0.0).is_err());
        assert!(make_artificial_cloud(
            &CuboidSpec {
                width: 0.1,
                height: 0.2,
                depth: 0.0
            },
            0.01
        )
        .is_err());
    }

    #[test]
    fn a_points() {
        let (a1, a2) = select_a_points(&art(), &Pose::identity());
        assert_eq!(a1, Point3::origin());
        assert_relative_eq!(a2, Point3::new(0.075, 0.0, 0.0));
        let (a1, a2) = select_a_points(&art(), &Pose::rot_z(std::f64::consts::FRAC_PI_2));
        let d = (a2 - a1).normalize();
        assert_relative_eq!(d, Vec3::y(), epsilon = 1e-12);
    }

    #[test]
    fn rotation_error_cases() {
        let n = Vec3::z();
        let (a1, a2) = (Point3::origin(), Point3::new(1.0, 0.0, 0.0));
        let e = |t1: Point3, t2: Point3| estimate_rotation_error(&t1, &t2, &a1, &a2, &n).unwrap();
        assert_eq!(e(a1, a2), 0.0);
        // Swapped T points are the same rectangle.
        assert!(e(a2, a1).abs() < 1e-12);
        let r = rot_z(0.3);
        let t2 = Point3::from(r * Vec3::x());
        assert_relative_eq!(e(Point3::origin(), t2), 0.3, epsilon = 1e-12);
        assert_relative_eq!(e(t2, Point3::origin()), 0.3, epsilon = 1e-12);
        // Exactly a quarter turn stays positive.
        assert_relative_eq!(
            e(Point3::origin(), Point3::new(0.0, -1.0, 0.0)),
            std::f64::consts::FRAC_PI_2,
            epsilon = 1e-12
        );
        assert!(matches!(
            estimate_rotation_error(&a1, &a1, &a1, &a2, &n),
            Err(Error::DegenerateSegment)
        ));
        assert!(matches!(
            estimate_rotation_error(&a1, &Point3::new(0.0, 0.0, 1.0), &a1, &a2, &n),
            Err(Error::DegenerateSegment)
        ));
    }

    #[test]
    fn exact_pose_is_fixed_point() {
        let pose = gt();
        let (t1, t2) = t_points(&pose);
        let (fixed, report) = correct_pose(&pose, &art(), &t1, &t2, &pose.axis(2)).unwrap();
        assert!(fixed.rotation_angle_to(&pose) < 1e-9);
        assert!(fixed.translation_distance_to(&pose) < 1e-9);
        assert!(report.yaw_error.abs() < 1e-9);
        assert!(report.translation_error.norm() < 1e-9);
    }

    #[test]
    fn figure_case_closes_loop() {
        let truth = gt();
        let bad = inject(&truth, -2.47, Vec3::new(0.8, 3.1, -0.2) * 1e-3);
        let (t1, t2) = t_points(&truth);
        let (fixed, report) = correct_pose(&bad, &art(), &t1, &t2, &bad.axis(2)).unwrap();
        assert_relative_eq!(report.yaw_error, 2.47, epsilon = 1e-9);
        assert!(rectangle_rotation_error(&fixed, &truth).to_degrees() < 1e-6);
        assert!(fixed.translation_distance_to(&truth) < 1e-9);
    }

    #[test]
    fn translation_only() {
        let truth = gt();
        let dt = Vec3::new(0.8, 3.1, -0.2) * 1e-3;
        let bad = inject(&truth, 0.0, dt);
        let (t1, t2) = t_points(&truth);
        let (_, report) = correct_pose(&bad, &art(), &t1, &t2, &bad.axis(2)).unwrap();
        assert_relative_eq!(report.translation_error, -dt * 1e3, epsilon = 1e-9);
    }

    #[test]
    fn normal_sign_does_not_matter() {
        let truth = gt();
        let bad = inject(&truth, 3.0, Vec3::new(0.001, 0.0, 0.0));
        let (t1, t2) = t_points(&truth);
        let (a, _) = correct_pose(&bad, &art(), &t1, &t2, &bad.axis(2)).unwrap();
        let (b, _) = correct_pose(&bad, &art(), &t1, &t2, &-bad.axis(2)).unwrap();
        assert!(a.rotation_angle_to(&b) < 1e-12);
        assert!(a.rotation_angle_to(&truth) < 1e-9);
    }

    #[test]
    fn corrected_cloud_matches_truth() {
        let truth = gt();
        let bad = inject(&truth, 4.0, Vec3::new(0.004, -0.002, 0.003));
        let (t1, t2) = t_points(&truth);
        let a = art();
        let (moved, report) = correct_and_transform(&bad, &a, &a.cloud, &t1, &t2, &bad.axis(2)).unwrap();
        let expected = apply_transform(&truth, &a.cloud);
        let worst = moved
            .points
            .iter()
            .zip(&expected.points)
            .map(|(p, q)| (p - q).norm())
            .fold(0.0, f64::max);
        assert!(worst < 1e-9);
        assert!(report.t_correct >= report.t_estimate);
    }

    proptest! {
        #[test]
        fn recovers_injected_error(yaw in -5.0f64..5.0, dx in -0.01f64..0.01, dy in -0.01f64..0.01, dz in -0.01f64..0.01,
                                   tilt in -0.2f64..0.2, spin in -3.1f64..3.1) {
            let truth = Pose::new(rot_x(std::f64::consts::PI + tilt) * rot_z(spin), Vec3::new(0.0, 0.0, 1.0)).unwrap();
            let bad = inject(&truth, yaw, Vec3::new(dx, dy, dz));
            let (t1, t2) = t_points(&truth);
            let (fixed, _) = correct_pose(&bad, &art(), &t1, &t2, &bad.axis(2)).unwrap();
            prop_assert!(fixed.rotation_angle_to(&truth).to_degrees() < 1e-3);
            prop_assert!(fixed.translation_distance_to(&truth) < 1e-6);
            // Origin lands on the T midpoint, local x is parallel to T2 − T1.
            let c1 = (t1.coords + t2.coords) / 2.0;
            prop_assert!((fixed.translation() - c1).norm() < 1e-9);
            prop_assert!(fixed.axis(0).cross(&(t2 - t1).normalize()).norm() < 1e-6);
            // A second pass changes nothing.
            let (again, _) = correct_pose(&fixed, &art(), &t1, &t2, &fixed.axis(2)).unwrap();
            prop_assert!(again.rotation_angle_to(&fixed) < 1e-9);
            prop_assert!(again.translation_distance_to(&fixed) < 1e-9);
        }

        #[test]
        fn rotation_estimate_ignores_scale_and_a2_choice(angle in -1.5f64..1.5, scale in 0.01f64..100.0, frac in 0.05f64..0.45) {
            let n = Vec3::z();
            let t2 = Point3::from(rot_z(angle) * Vec3::x() * scale);
            let base = estimate_rotation_error(&Point3::origin(), &t2, &Point3::origin(), &Point3::new(0.1, 0.0, 0.0), &n).unwrap();
            let other = estimate_rotation_error(&Point3::origin(), &t2, &Point3::origin(), &Point3::new(frac, 0.0, 0.0), &n).unwrap();
            prop_assert!((base - other).abs() < 1e-12);
            prop_assert!((base - angle).abs() < 1e-9);
        }
    }
}

//! Rigid transforms, point clouds, centroids, PCA bounding boxes and planar
//! angles. Every length in this crate is in meters.

use nalgebra::{Matrix3, Matrix4, SymmetricEigen, Vector3};

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;
pub type Vec3 = Vector3<f64>;

const ORTHO_TOL: f64 = 1e-9;

/// Rigid transform mapping an object's local frame into the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    r: Matrix3<f64>,
    t: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    /// Builds a pose, rejecting rotation blocks that are not proper rotations
    /// to within 1e-9.
    pub fn new(r: Matrix3<f64>, t: Vec3) -> Result<Self> {
        if !r.iter().chain(t.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidPose("non-finite entry".into()));
        }
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        if ortho > ORTHO_TOL {
            return Err(Error::InvalidPose(format!(
                "rotation not orthonormal (max |RᵀR - I| = {ortho:e})"
            )));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > ORTHO_TOL {
            return Err(Error::InvalidPose(format!("det(R) = {det}")));
        }
        Ok(Self { r, t })
    }

    /// Projects an approximately-orthonormal matrix onto SO(3) before
    /// building the pose. Used after least-squares fits.
    pub fn from_approx(r: Matrix3<f64>, t: Vec3) -> Self {
        Self {
            r: orthonormalize(&r),
            t,
        }
    }

    pub fn identity() -> Self {
        Self {
            r: Matrix3::identity(),
            t: Vec3::zeros(),
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            r: Matrix3::identity(),
            t,
        }
    }

    /// Rotation by `angle` radians about the local z axis, no translation.
    pub fn rot_z(angle: f64) -> Self {
        Self {
            r: rot_z(angle),
            t: Vec3::zeros(),
        }
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Result<Self> {
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::InvalidPose("last row must be 0 0 0 1".into()));
        }
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    /// Row-major 4x4 homogeneous matrix.
    pub fn from_row_major(v: &[f64; 16]) -> Result<Self> {
        Self::from_matrix(&Matrix4::from_row_slice(v))
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.t);
        m
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let m = self.to_matrix();
        let mut out = [0.0; 16];
        for row in 0..4 {
            for col in 0..4 {
                out[row * 4 + col] = m[(row, col)];
            }
        }
        out
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.r
    }

    pub fn translation(&self) -> &Vec3 {
        &self.t
    }

    /// `self × other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            r: self.r * other.r,
            t: self.r * other.t + self.t,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.r.transpose();
        Pose {
            r: rt,
            t: -(rt * self.t),
        }
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        Point3::from(self.r * p.coords + self.t)
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.r * v
    }

    /// Local axis `i` (0 = x, 1 = y, 2 = z) expressed in the parent frame.
    pub fn axis(&self, i: usize) -> Vec3 {
        self.r.column(i).into_owned()
    }

    /// Geodesic angle between the two rotation blocks, radians.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        rotation_angle(&(self.r.transpose() * other.r))
    }

    pub fn translation_distance_to(&self, other: &Pose) -> f64 {
        (self.t - other.t).norm()
    }
}

pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn rot_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Rotation angle of `r` in [0, π].
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    // atan2 keeps full precision near 0, where acos of the trace does not.
    let skew = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    (skew.norm() / 2.0).atan2((r.trace() - 1.0) / 2.0)
}

/// Rotation error between two poses of a rectangular face, modulo the
/// rectangle's symmetry group {I, Rz(π), Rx(π), Ry(π)}. A flat rectangle
/// cannot be told apart from its 180° flips by shape alone.
pub fn rectangle_rotation_error(estimate: &Pose, truth: &Pose) -> f64 {
    use std::f64::consts::PI;
    let rel = truth.rotation().transpose() * estimate.rotation();
    [Matrix3::identity(), rot_z(PI), rot_x(PI), rot_y(PI)]
        .iter()
        .map(|s| rotation_angle(&(rel * s)))
        .fold(f64::INFINITY, f64::min)
}

/// Nearest rotation matrix in the Frobenius sense, with the reflection guard.
pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

/// Ordered list of points with optional per-point normals and RGB colors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub normals: Option<Vec<Vec3>>,
    pub colors: Option<Vec<[u8; 3]>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self {
            points,
            normals: None,
            colors: None,
        }
    }

    pub fn with_normals(mut self, normals: Vec<Vec3>) -> Result<Self> {
        if normals.len() != self.points.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} normals for {} points",
                normals.len(),
                self.points.len()
            )));
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn with_colors(mut self, colors: Vec<[u8; 3]>) -> Result<Self> {
        if colors.len() != self.points.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} colors for {} points",
                colors.len(),
                self.points.len()
            )));
        }
        self.colors = Some(colors);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// New cloud holding the points at `indices`, attributes carried along.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            normals: self.normals.as_ref().map(|n| indices.iter().map(|&i| n[i]).collect()),
            colors: self.colors.as_ref().map(|c| indices.iter().map(|&i| c[i]).collect()),
        }
    }
}

/// Applies `pose` to every point (r·p + t) and rotates normals by r.
pub fn apply_transform(pose: &Pose, cloud: &PointCloud) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|p| pose.transform_point(p)).collect(),
        normals: cloud
            .normals
            .as_ref()
            .map(|ns| ns.iter().map(|n| pose.transform_vector(n)).collect()),
        colors: cloud.colors.clone(),
    }
}

pub fn centroid(cloud: &PointCloud) -> Result<Point3> {
    centroid_of(&cloud.points)
}

pub fn centroid_of(points: &[Point3]) -> Result<Point3> {
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let sum = points.iter().fold(Vec3::zeros(), |acc, p| acc + p.coords);
    Ok(Point3::from(sum / points.len() as f64))
}

/// Mean and (biased) covariance of a point set.
pub fn covariance(points: &[Point3]) -> Result<(Point3, Matrix3<f64>)> {
    let mean = centroid_of(points)?;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    Ok((mean, cov / points.len() as f64))
}

/// Eigen-decomposition of a symmetric 3x3 matrix with eigenvalues sorted in
/// descending order. Equal eigenvalues keep their original index order, and
/// each eigenvector's largest-magnitude component is made positive.
pub fn sorted_eigen(m: &Matrix3<f64>) -> ([f64; 3], [Vec3; 3]) {
    let eig = SymmetricEigen::new(*m);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.map(|i| eig.eigenvalues[i]);
    let vectors = order.map(|i| canonical_sign(eig.eigenvectors.column(i).into_owned()));
    (values, vectors)
}

fn canonical_sign(v: Vec3) -> Vec3 {
    let mut best = 0;
    for i in 1..3 {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        -v
    } else {
        v
    }
}

/// Oriented bounding box from covariance eigenvectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obb {
    pub center: Point3,
    pub axes: [Vec3; 3],
    /// Sorted descending; `axes[i]` is the direction of `half_extents[i]`.
    pub half_extents: [f64; 3],
}

impl Obb {
    pub fn extents(&self) -> [f64; 3] {
        self.half_extents.map(|h| 2.0 * h)
    }
}

/// PCA bounding box. The center is the midpoint of the min/max corners in
/// the eigenbasis, not the centroid.
pub fn fit_obb(cloud: &PointCloud) -> Result<Obb> {
    let points = &cloud.points;
    if points.len() < 3 {
        return Err(Error::DegenerateCloud(format!(
            "{} point(s), need at least 3",
            points.len()
        )));
    }
    let (mean, cov) = covariance(points)?;
    let (values, axes) = sorted_eigen(&cov);
    if values[0] <= 0.0 || values[1] <= 1e-12 * values[0] {
        return Err(Error::DegenerateCloud("covariance rank < 2".into()));
    }

    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        let d = p - mean;
        for k in 0..3 {
            let c = d.dot(&axes[k]);
            lo[k] = lo[k].min(c);
            hi[k] = hi[k].max(c);
        }
    }
    let mut center = mean.coords;
    for k in 0..3 {
        center += axes[k] * ((lo[k] + hi[k]) / 2.0);
    }
    // Variance order and span order normally agree; when they don't, keep
    // each axis paired with its own extent.
    let mut slots: Vec<(f64, Vec3)> = (0..3).map(|k| ((hi[k] - lo[k]) / 2.0, axes[k])).collect();
    slots.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(Obb {
        center: Point3::from(center),
        axes: [slots[0].1, slots[1].1, slots[2].1],
        half_extents: [slots[0].0, slots[1].0, slots[2].0],
    })
}

/// Target face dimensions. `width` runs along the local x axis and must be
/// the longer side; `depth` is the cuboid thickness behind the face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CuboidSpec {
    pub width: f64,
    pub height: f64,
    pub depth: f64,
}

impl CuboidSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.width, self.height, self.depth].iter().all(|v| v.is_finite());
        if !finite || self.height <= 0.0 || self.width < self.height || self.depth < 0.0 {
            return Err(Error::InvalidSpec(format!(
                "need width >= height > 0 and depth >= 0, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn diagonal(&self) -> f64 {
        self.width.hypot(self.height)
    }
}

/// Infinite plane through `point` with unit `normal`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub point: Point3,
    pub normal: Vec3,
}

impl Plane {
    pub fn signed_distance(&self, p: &Point3) -> f64 {
        (p - self.point).dot(&self.normal)
    }

    /// Intersection with the ray from the origin along `dir`, if it hits in
    /// front of the origin.
    pub fn intersect_ray(&self, dir: &Vec3) -> Option<Point3> {
        let denom = self.normal.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let s = self.normal.dot(&self.point.coords) / denom;
        (s > 0.0).then(|| Point3::from(dir * s))
    }
}

/// Least-squares plane; the normal is oriented toward the camera origin.
pub fn fit_plane(cloud: &PointCloud) -> Result<Plane> {
    if cloud.len() < 3 {
        return Err(Error::DegenerateCloud("plane needs at least 3 points".into()));
    }
    let (mean, cov) = covariance(&cloud.points)?;
    let (values, axes) = sorted_eigen(&cov);
    if values[0] <= 0.0 || values[1] <= 1e-12 * values[0] {
        return Err(Error::DegenerateCloud("covariance rank < 2".into()));
    }
    let mut normal = axes[2];
    if normal.dot(&(-mean.coords)) < 0.0 {
        normal = -normal;
    }
    Ok(Plane { point: mean, normal })
}

/// Signed angle from `u` to `v` after projecting both onto the plane
/// orthogonal to `n`, positive counter-clockwise about `n`. Range (−π, π].
pub fn signed_angle_in_plane(u: &Vec3, v: &Vec3, n: &Vec3) -> Result<f64> {
    let n_norm = n.norm();
    if n_norm < 1e-12 {
        return Err(Error::DegenerateDirection);
    }
    let n = n / n_norm;
    let up = u - n * u.dot(&n);
    let vp = v - n * v.dot(&n);
    if up.norm() < 1e-9 || vp.norm() < 1e-9 {
        return Err(Error::DegenerateDirection);
    }
    let angle = up.cross(&vp).dot(&n).atan2(up.dot(&vp));
    Ok(if angle <= -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        angle
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect())
    }

    fn box_corners(w: f64, h: f64, d: f64) -> PointCloud {
        let mut pts = Vec::new();
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    pts.push([sx * w / 2.0, sy * h / 2.0, sz * d / 2.0]);
                }
            }
        }
        cloud(&pts)
    }

    fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
        rot_z(rng.random_range(-PI..PI)) * rot_y(rng.random_range(-PI..PI)) * rot_x(rng.random_range(-PI..PI))
    }

    #[test]
    fn identity_transform_is_noop() {
        let c = cloud(&[[0.1, -2.0, 3.5], [4.0, 5.0, 6.0]]);
        assert_eq!(apply_transform(&Pose::identity(), &c), c);
    }

    #[test]
    fn translation_moves_origin() {
        let pose = Pose::from_translation(Vec3::new(1.0, 2.0, 3.0));
        let out = apply_transform(&pose, &cloud(&[[0.0, 0.0, 0.0]]));
        assert_eq!(out.points[0], Point3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn rot_z_quarter_turn() {
        let out = apply_transform(&Pose::rot_z(FRAC_PI_2), &cloud(&[[1.0, 0.0, 0.0]]));
        assert_relative_eq!(out.points[0], Point3::new(0.0, 1.0, 0.0), epsilon = 1e-9);
    }

    #[test]
    fn normals_rotate_without_translation() {
        let pose = Pose::new(rot_z(FRAC_PI_2), Vec3::new(5.0, 5.0, 5.0)).unwrap();
        let c = cloud(&[[0.0, 0.0, 0.0]]).with_normals(vec![Vec3::x()]).unwrap();
        let out = apply_transform(&pose, &c);
        assert_relative_eq!(out.normals.unwrap()[0], Vec3::y(), epsilon = 1e-12);
    }

    #[test]
    fn pose_rejects_reflection_and_shear() {
        let mut refl = Matrix3::identity();
        refl[(2, 2)] = -1.0;
        assert!(Pose::new(refl, Vec3::zeros()).is_err());
        let mut shear = Matrix3::identity();
        shear[(0, 1)] = 1e-6;
        assert!(Pose::new(shear, Vec3::zeros()).is_err());
    }

    #[test]
    fn row_major_round_trip() {
        let pose = Pose::new(rot_x(0.3) * rot_z(-1.1), Vec3::new(0.1, 0.2, 0.9)).unwrap();
        let back = Pose::from_row_major(&pose.to_row_major()).unwrap();
        assert_eq!(back, pose);
        assert_eq!(pose.to_row_major()[3], 0.1);
    }

    #[test]
    fn centroid_cases() {
        let c = centroid(&cloud(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])).unwrap();
        assert_eq!(c, Point3::new(1.0, 0.0, 0.0));
        let p = [0.3, -0.7, 1.9];
        assert_eq!(centroid(&cloud(&[p])).unwrap(), Point3::new(0.3, -0.7, 1.9));
        assert!(matches!(centroid(&PointCloud::default()), Err(Error::EmptyCloud)));
    }

    #[test]
    fn centroid_of_uniform_cube_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Point3> = (0..10_000)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let c = centroid_of(&pts).unwrap();
        for k in 0..3 {
            assert!((c[k] - 0.5).abs() < 0.02, "{c}");
        }
    }

    #[test]
    fn obb_of_axis_aligned_box() {
        let obb = fit_obb(&box_corners(0.30, 0.20, 0.02)).unwrap();
        assert_relative_eq!(obb.half_extents[0], 0.15, epsilon = 1e-12);
        assert_relative_eq!(obb.half_extents[1], 0.10, epsilon = 1e-12);
        assert_relative_eq!(obb.half_extents[2], 0.01, epsilon = 1e-12);
        assert_relative_eq!(obb.axes[0], Vec3::x(), epsilon = 1e-12);
        assert_relative_eq!(obb.center, Point3::origin(), epsilon = 1e-12);
    }

    #[test]
    fn obb_of_rotated_box_recovers_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r = random_rotation(&mut rng);
        let pose = Pose::new(r, Vec3::new(0.4, -0.2, 1.3)).unwrap();
        let obb = fit_obb(&apply_transform(&pose, &box_corners(0.30, 0.20, 0.02))).unwrap();
        for (k, h) in [0.15, 0.10, 0.01].iter().enumerate() {
            assert_relative_eq!(obb.half_extents[k], h, epsilon = 1e-6);
            // Axis k equals the rotated basis vector up to sign.
            assert_relative_eq!(obb.axes[k].dot(&r.column(k)).abs(), 1.0, epsilon = 1e-6);
        }
        assert_relative_eq!(obb.center, Point3::new(0.4, -0.2, 1.3), epsilon = 1e-9);
    }

    #[test]
    fn obb_of_planar_rectangle_has_zero_thickness() {
        let obb = fit_obb(&cloud(&[
            [-0.15, -0.1, 0.0],
            [0.15, -0.1, 0.0],
            [0.15, 0.1, 0.0],
            [-0.15, 0.1, 0.0],
        ]))
        .unwrap();
        assert_relative_eq!(obb.half_extents[2], 0.0, epsilon = 1e-12);
        assert_relative_eq!(obb.half_extents[0], 0.15, epsilon = 1e-12);
    }

    #[test]
    fn obb_rejects_collinear_points() {
        let c = cloud(&[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [2.0, 2.0, 2.0]]);
        assert!(matches!(fit_obb(&c), Err(Error::DegenerateCloud(_))));
        assert!(fit_obb(&cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])).is_err());
    }

    #[test]
    fn obb_axes_have_canonical_sign() {
        let obb = fit_obb(&box_corners(0.3, 0.2, 0.02)).unwrap();
        for a in obb.axes {
            let max = a
                .iter()
                .copied()
                .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(max > 0.0);
        }
    }

    #[test]
    fn signed_angle_cases() {
        let n = Vec3::z();
        let a = signed_angle_in_plane(&Vec3::x(), &Vec3::y(), &n).unwrap();
        assert_relative_eq!(a, FRAC_PI_2, epsilon = 1e-15);
        assert_eq!(signed_angle_in_plane(&Vec3::x(), &Vec3::x(), &n).unwrap(), 0.0);
        let theta = 2.47f64.to_radians();
        let v = rot_z(theta) * Vec3::new(0.3, 0.1, 0.0);
        let a = signed_angle_in_plane(&Vec3::new(0.3, 0.1, 0.0), &v, &n).unwrap();
        assert_relative_eq!(a, theta, epsilon = 1e-9);
        // Opposite directions map to +π, never −π.
        assert_eq!(signed_angle_in_plane(&Vec3::x(), &-Vec3::x(), &n).unwrap(), PI);
    }

    #[test]
    fn signed_angle_degenerate() {
        assert!(matches!(
            signed_angle_in_plane(&Vec3::z(), &Vec3::x(), &Vec3::z()),
            Err(Error::DegenerateDirection)
        ));
    }

    #[test]
    fn plane_fit_faces_camera() {
        let c = cloud(&[[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 1.0]]);
        let plane = fit_plane(&c).unwrap();
        assert_relative_eq!(plane.normal, -Vec3::z(), epsilon = 1e-12);
        let hit = plane.intersect_ray(&Vec3::new(0.5, 0.0, 1.0)).unwrap();
        assert_relative_eq!(hit, Point3::new(0.5, 0.0, 1.0), epsilon = 1e-12);
    }

    #[test]
    fn rectangle_error_ignores_flips() {
        let gt = Pose::new(rot_x(0.2), Vec3::zeros()).unwrap();
        let flipped = gt.compose(&Pose::rot_z(PI));
        assert!(rectangle_rotation_error(&flipped, &gt) < 1e-9);
        let off = gt.compose(&Pose::rot_z(0.01));
        assert_relative_eq!(rectangle_rotation_error(&off, &gt), 0.01, epsilon = 1e-9);
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (-PI..PI, -PI..PI, -PI..PI, prop::array::uniform3(-2.0f64..2.0))
            .prop_map(|(a, b, c, t)| Pose::new(rot_z(a) * rot_y(b) * rot_x(c), Vec3::from(t)).unwrap())
    }

    fn arb_cloud() -> impl Strategy<Value = PointCloud> {
        prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 3..40).prop_map(|pts| cloud(&pts))
    }

    proptest! {
        #[test]
        fn composition_matches_sequential(p1 in arb_pose(), p2 in arb_pose(), c in arb_cloud()) {
            let seq = apply_transform(&p2, &apply_transform(&p1, &c));
            let once = apply_transform(&p2.compose(&p1), &c);
            for (a, b) in seq.points.iter().zip(&once.points) {
                prop_assert!((a - b).norm() < 1e-9);
            }
        }

        #[test]
        fn centroid_commutes_with_transform(p in arb_pose(), c in arb_cloud()) {
            let lhs = centroid(&apply_transform(&p, &c)).unwrap();
            let rhs = p.transform_point(&centroid(&c).unwrap());
            prop_assert!((lhs - rhs).norm() < 1e-9);
        }

        #[test]
        fn obb_extents_rigid_invariant(p in arb_pose(), w in 0.05f64..0.5, h in 0.05f64..0.5) {
            // Well-separated extents keep the eigenbasis stable.
            let c = box_corners(w + 0.6, h, 0.01);
            let a = fit_obb(&c).unwrap();
            let b = fit_obb(&apply_transform(&p, &c)).unwrap();
            for k in 0..3 {
                prop_assert!((a.half_extents[k] - b.half_extents[k]).abs() < 1e-6);
            }
        }

        #[test]
        fn signed_angle_antisymmetric(a in -PI..PI, b in -PI..PI) {
            let n = Vec3::z();
            let u = Vec3::new(a.cos(), a.sin(), 0.3);
            let v = Vec3::new(b.cos(), b.sin(), -0.2);
            let uv = signed_angle_in_plane(&u, &v, &n).unwrap();
            let vu = signed_angle_in_plane(&v, &u, &n).unwrap();
            if uv == PI {
                prop_assert_eq!(vu, PI);
            } else {
                prop_assert!((uv + vu).abs() < 1e-12);
            }
        }

        #[test]
        fn inverse_composes_to_identity(p in arb_pose()) {
            let id = p.compose(&p.inverse());
            prop_assert!((id.to_matrix() - Matrix4::identity()).abs().max() < 1e-12);
        }
    }
}

//! Point cloud preprocessing: passthrough crop, voxel-grid downsampling,
//! statistical outlier removal, normal estimation and moving-least-squares
//! smoothing.
//!
//! Neighborhood queries build a [`KdTree`] inside each call.

use std::collections::HashMap;

use nalgebra::{SMatrix, SVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{covariance, sorted_eigen, Point3, PointCloud, Vec3};
use crate::spatial::KdTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            _ => Err(Error::Config(format!("unknown axis `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterParams {
    pub passthrough: Option<(Axis, f64, f64)>,
    pub voxel_leaf: f64,
    pub sor_k: usize,
    pub sor_stddev_mult: f64,
    pub normal_radius: f64,
    pub mls_radius: f64,
    pub mls_order: u8,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            passthrough: None,
            voxel_leaf: 0.005,
            sor_k: 50,
            sor_stddev_mult: 1.0,
            normal_radius: 0.015,
            mls_radius: 0.02,
            mls_order: 1,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        if let Some((_, lo, hi)) = self.passthrough {
            if !(lo < hi) {
                return Err(Error::InvalidParameter("passthrough needs min < max".into()));
            }
        }
        if !(self.voxel_leaf > 0.0) {
            return Err(Error::InvalidParameter("voxel leaf must be positive".into()));
        }
        if self.sor_k < 3 {
            return Err(Error::InvalidParameter("SOR needs k >= 3".into()));
        }
        if !(self.normal_radius > 0.0 && self.mls_radius > 0.0) {
            return Err(Error::InvalidParameter("radii must be positive".into()));
        }
        if !matches!(self.mls_order, 1 | 2) {
            return Err(Error::InvalidParameter("MLS order must be 1 or 2".into()));
        }
        Ok(())
    }
}

/// Keeps points whose coordinate on `axis` lies in `[min, max]`.
pub fn passthrough(cloud: &PointCloud, axis: Axis, min: f64, max: f64) -> PointCloud {
    let k = axis.index();
    let keep: Vec<usize> = (0..cloud.len())
        .filter(|&i| {
            let v = cloud.points[i][k];
            v >= min && v <= max
        })
        .collect();
    cloud.select(&keep)
}

/// Replaces the points of every occupied voxel by their centroid. The grid
/// is anchored at the origin and output follows first-occupancy order.
/// Colors are averaged; normals are dropped and must be re-estimated.
pub fn voxel_downsample(cloud: &PointCloud, leaf: f64) -> Result<PointCloud> {
    if !(leaf > 0.0) {
        return Err(Error::InvalidParameter("voxel leaf must be positive".into()));
    }
    let mut slot_of: HashMap<[i64; 3], usize> = HashMap::with_capacity(cloud.len() / 4 + 1);
    let mut sums: Vec<(Vec3, [u32; 3], u32)> = Vec::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let key = voxel_key(p, leaf);
        let slot = *slot_of.entry(key).or_insert_with(|| {
            sums.push((Vec3::zeros(), [0; 3], 0));
            sums.len() - 1
        });
        let acc = &mut sums[slot];
        acc.0 += p.coords;
        if let Some(colors) = &cloud.colors {
            for (sum, &v) in acc.1.iter_mut().zip(&colors[i]) {
                *sum += v as u32;
            }
        }
        acc.2 += 1;
    }
    let points = sums.iter().map(|(s, _, n)| Point3::from(s / *n as f64)).collect();
    let mut out = PointCloud::new(points);
    if cloud.colors.is_some() {
        out.colors = Some(
            sums.iter()
                .map(|(_, c, n)| c.map(|v| ((v as f64) / (*n as f64)).round() as u8))
                .collect(),
        );
    }
    Ok(out)
}

pub(crate) fn voxel_key(p: &Point3, leaf: f64) -> [i64; 3] {
    [
        (p.x / leaf).floor() as i64,
        (p.y / leaf).floor() as i64,
        (p.z / leaf).floor() as i64,
    ]
}

/// Indices of points whose mean distance to their `k` nearest neighbors is
/// at most `mean + stddev_mult * stddev` of that statistic over the cloud.
pub fn statistical_outlier_inliers(cloud: &PointCloud, k: usize, stddev_mult: f64) -> Result<Vec<usize>> {
    if cloud.len() <= k {
        return Err(Error::TooFewPoints {
            needed: k,
            got: cloud.len(),
        });
    }
    let tree = KdTree::build(&cloud.points);
    let mean_dists: Vec<f64> = cloud
        .points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let nn = tree.knn(p, k + 1);
            let sum: f64 = nn.iter().filter(|(j, _)| *j != i).take(k).map(|(_, d)| d).sum();
            sum / k as f64
        })
        .collect();
    let n = mean_dists.len() as f64;
    let mean = mean_dists.iter().sum::<f64>() / n;
    let var = mean_dists.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let threshold = mean + stddev_mult * var.sqrt();
    Ok((0..cloud.len()).filter(|&i| mean_dists[i] <= threshold).collect())
}

pub fn statistical_outlier_removal(cloud: &PointCloud, k: usize, stddev_mult: f64) -> Result<PointCloud> {
    Ok(cloud.select(&statistical_outlier_inliers(cloud, k, stddev_mult)?))
}

/// Output of [`estimate_normals`]. Points with fewer than three neighbors
/// inside the radius are left out of `cloud` and listed in `flagged`.
#[derive(Debug, Clone)]
pub struct NormalEstimation {
    pub cloud: PointCloud,
    /// Surface variation λ_min / (λ0 + λ1 + λ2), parallel to `cloud`.
    pub curvature: Vec<f64>,
    /// Index into the input cloud of each output point.
    pub source_indices: Vec<usize>,
    pub flagged: Vec<usize>,
}

/// Smallest-eigenvalue eigenvector of each radius neighborhood, oriented
/// toward the camera origin.
pub fn estimate_normals(cloud: &PointCloud, radius: f64) -> Result<NormalEstimation> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter("normal radius must be positive".into()));
    }
    let tree = KdTree::build(&cloud.points);
    let fits: Vec<Option<(Vec3, f64)>> = cloud
        .points
        .par_iter()
        .map(|p| {
            let nb = tree.within(p, radius);
            if nb.len() < 3 {
                return None;
            }
            let pts: Vec<Point3> = nb.iter().map(|&j| cloud.points[j]).collect();
            let (_, cov) = covariance(&pts).ok()?;
            let (values, axes) = sorted_eigen(&cov);
            let total = values.iter().sum::<f64>();
            let mut n = axes[2];
            if n.dot(&(-p.coords)) < 0.0 {
                n = -n;
            }
            let curvature = if total > 0.0 { values[2].max(0.0) / total } else { 0.0 };
            Some((n, curvature))
        })
        .collect();

    let mut kept = Vec::new();
    let mut flagged = Vec::new();
    for (i, f) in fits.iter().enumerate() {
        match f {
            Some(_) => kept.push(i),
            None => flagged.push(i),
        }
    }
    if kept.is_empty() && !cloud.is_empty() {
        return Err(Error::InsufficientNeighbors { count: flagged.len() });
    }
    let mut out = cloud.select(&kept);
    out.normals = Some(kept.iter().map(|&i| fits[i].unwrap().0).collect());
    Ok(NormalEstimation {
        curvature: kept.iter().map(|&i| fits[i].unwrap().1).collect(),
        cloud: out,
        source_indices: kept,
        flagged,
    })
}

#[derive(Debug, Clone)]
pub struct MlsResult {
    pub cloud: PointCloud,
    /// Points with too few neighbors for a fit; passed through unchanged.
    pub flagged: Vec<usize>,
}

/// Projects each point onto a polynomial surface fitted over its radius
/// neighborhood: a plane for order 1, a quadric height field for order 2.
pub fn mls_smooth(cloud: &PointCloud, radius: f64, order: u8) -> Result<MlsResult> {
    if !matches!(order, 1 | 2) {
        return Err(Error::InvalidParameter("MLS order must be 1 or 2".into()));
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter("MLS radius must be positive".into()));
    }
    let tree = KdTree::build(&cloud.points);
    let smoothed: Vec<Option<Point3>> = cloud
        .points
        .par_iter()
        .map(|p| {
            let nb = tree.within(p, radius);
            if nb.len() < 3 {
                return None;
            }
            let pts: Vec<Point3> = nb.iter().map(|&j| cloud.points[j]).collect();
            let (c, cov) = covariance(&pts).ok()?;
            let (values, axes) = sorted_eigen(&cov);
            if values[1] <= 1e-12 * values[0].max(f64::MIN_POSITIVE) {
                return None;
            }
            let (u, v, n) = (axes[0], axes[1], axes[2]);
            let d = p - c;
            let (x, y) = (d.dot(&u), d.dot(&v));
            let height = if order == 2 && pts.len() >= 6 {
                quadric_height(&pts, &c, &u, &v, &n, x, y).unwrap_or(0.0)
            } else {
                0.0
            };
            Some(c + u * x + v * y + n * height)
        })
        .collect();

    let mut out = cloud.clone();
    let mut flagged = Vec::new();
    for (i, s) in smoothed.into_iter().enumerate() {
        match s {
            Some(p) => out.points[i] = p,
            None => flagged.push(i),
        }
    }
    Ok(MlsResult { cloud: out, flagged })
}

/// Least-squares fit of h(x, y) = a + bx + cy + dx² + exy + fy² in the local
/// frame, evaluated at (x, y).
fn quadric_height(pts: &[Point3], c: &Point3, u: &Vec3, v: &Vec3, n: &Vec3, x: f64, y: f64) -> Option<f64> {
    let mut ata = SMatrix::<f64, 6, 6>::zeros();
    let mut atb = SVector::<f64, 6>::zeros();
    for p in pts {
        let d = p - c;
        let (px, py, pz) = (d.dot(u), d.dot(v), d.dot(n));
        let row = SVector::<f64, 6>::from([1.0, px, py, px * px, px * py, py * py]);
        ata += row * row.transpose();
        atb += row * pz;
    }
    let coef = ata.cholesky()?.solve(&atb);
    Some(coef.dot(&SVector::<f64, 6>::from([1.0, x, y, x * x, x * y, y * y])))
}

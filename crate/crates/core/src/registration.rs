//! Rigid registration: planar four-point congruent-set search for a global
//! initial alignment, and point-to-point ICP for local refinement.

use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Rotation3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::filters::voxel_downsample;
use crate::geometry::{covariance, fit_obb, orthonormalize, sorted_eigen, Point3, PointCloud, Pose, Vec3};
use crate::spatial::KdTree;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationResult {
    /// Maps source coordinates into the target frame.
    pub pose: Pose,
    /// Fraction of source points with a target neighbor within the inlier
    /// distance.
    pub score: f64,
    pub elapsed: Duration,
    pub iterations: usize,
}

/// Index pairs `(i, j)`, `i < j`, with `r − eps < ‖pᵢ − pⱼ‖ < r + eps`, sorted.
pub fn pairs_in_range(points: &[Point3], r: f64, eps: f64) -> Result<Vec<(usize, usize)>> {
    if !(eps > 0.0 && r > eps) {
        return Err(Error::InvalidParameter(format!(
            "need r > eps > 0, got r={r}, eps={eps}"
        )));
    }
    Ok(pairs_with_tree(&KdTree::build(points), points, r, eps))
}

fn pairs_with_tree(tree: &KdTree, points: &[Point3], r: f64, eps: f64) -> Vec<(usize, usize)> {
    let (lo, hi) = (r - eps, r + eps);
    let mut out = Vec::new();
    let mut near = Vec::new();
    for (i, p) in points.iter().enumerate() {
        near.clear();
        tree.within_into(p, hi, &mut near);
        let start = out.len();
        out.extend(near.iter().filter(|&&j| j > i).filter_map(|&j| {
            let d = (points[j] - p).norm();
            (d > lo && d < hi).then_some((i, j))
        }));
        out[start..].sort_unstable();
    }
    out
}

/// Least-squares rigid transform taking `src[k]` onto `dst[k]`, with the
/// reflection guard on the SVD.
pub fn kabsch(src: &[Point3], dst: &[Point3]) -> Result<Pose> {
    if src.len() != dst.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} vs {} points",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 3 {
        return Err(Error::TooFewPoints {
            needed: 3,
            got: src.len(),
        });
    }
    let n = src.len() as f64;
    let cs = src.iter().map(|p| p.coords).sum::<Vec3>() / n;
    let cd = dst.iter().map(|p| p.coords).sum::<Vec3>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (d.coords - cd) * (s.coords - cs).transpose();
    }
    let r = orthonormalize(&h);
    Ok(Pose::from_approx(r, cd - r * cs))
}

/// Fraction of `source` points that land within `inlier_dist` of a
/// `target` point under `pose`.
pub fn lcp_score(source: &PointCloud, target: &PointCloud, pose: &Pose, inlier_dist: f64) -> Result<f64> {
    if !(inlier_dist > 0.0) {
        return Err(Error::InvalidParameter("inlier_dist must be positive".into()));
    }
    if source.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let tree = KdTree::build(&target.points);
    Ok(lcp_with_tree(&tree, &source.points, pose, inlier_dist, 0.0))
}

/// LCP over `points`, giving up (and returning 0) once it cannot reach
/// `must_beat`.
fn lcp_with_tree(tree: &KdTree, points: &[Point3], pose: &Pose, inlier_dist: f64, must_beat: f64) -> f64 {
    let n = points.len();
    let allowed_misses = ((1.0 - must_beat) * n as f64).floor() as usize;
    let mut misses = 0;
    for p in points {
        if tree.nearest(&pose.transform_point(p), inlier_dist).is_none() {
            misses += 1;
            if must_beat > 0.0 && misses > allowed_misses {
                return 0.0;
            }
        }
    }
    (n - misses) as f64 / n as f64
}

/// Four coplanar source points `a, b, c, d` whose segments ab and cd cross
/// at `a + r1·(b − a) = c + r2·(d − c)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourPointBase {
    /// Indices into the downsampled search cloud.
    pub indices: [usize; 4],
    pub points: [Point3; 4],
    /// |ab|, |cd|, |ac|, |ad|, |bc|, |bd|.
    pub distances: [f64; 6],
    pub r1: f64,
    pub r2: f64,
}

impl FourPointBase {
    fn from_points(indices: [usize; 4], points: [Point3; 4], r1: f64, r2: f64) -> Self {
        let [a, b, c, d] = points;
        Self {
            indices,
            points,
            distances: [
                (b - a).norm(),
                (d - c).norm(),
                (c - a).norm(),
                (d - a).norm(),
                (c - b).norm(),
                (d - b).norm(),
            ],
            r1,
            r2,
        }
    }
}

/// Closest-approach parameters of lines a + s(b − a) and c + u(d − c), and
/// the gap between them.
fn crossing(a: &Point3, b: &Point3, c: &Point3, d: &Point3) -> Option<(f64, f64, f64)> {
    let (e, f, w) = (b - a, d - c, a - c);
    let (ee, ff, ef) = (e.dot(&e), f.dot(&f), e.dot(&f));
    let denom = ee * ff - ef * ef;
    if denom <= 1e-12 * ee * ff {
        return None;
    }
    let s = (ef * f.dot(&w) - ff * e.dot(&w)) / denom;
    let u = (ee * f.dot(&w) - ef * e.dot(&w)) / denom;
    let gap = ((a + e * s) - (c + f * u)).norm();
    Some((s, u, gap))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseParams {
    /// Distance tolerance for congruent pairs, meters.
    pub eps: f64,
    pub inlier_dist: f64,
    pub max_bases: usize,
    pub early_exit: f64,
    pub min_score: f64,
    pub seed: u64,
    /// Voxel size of the clouds searched for bases and congruent sets.
    pub search_leaf: f64,
    /// Both base diagonals span at least this fraction of the source OBB
    /// diagonal.
    pub base_min_frac: f64,
    /// Source points used to score candidates.
    pub lcp_samples: usize,
    /// Outline-snapping passes applied to the best candidate.
    pub refine_iters: usize,
}

impl Default for CoarseParams {
    fn default() -> Self {
        Self {
            eps: 0.004,
            inlier_dist: 0.008,
            max_bases: 200,
            early_exit: 0.9,
            min_score: 0.3,
            seed: 0,
            search_leaf: 0.01,
            base_min_frac: 0.6,
            lcp_samples: 500,
            refine_iters: 2,
        }
    }
}

impl CoarseParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.eps > 0.0
            && self.inlier_dist > 0.0
            && self.max_bases > 0
            && (0.0..=1.0).contains(&self.early_exit)
            && (0.0..=1.0).contains(&self.min_score)
            && self.search_leaf >= 0.0
            && (0.0..1.0).contains(&self.base_min_frac)
            && self.lcp_samples > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("bad registration parameters {self:?}")))
        }
    }
}

fn sample_base(rng: &mut ChaCha8Rng, pts: &[Point3], min_len: f64, eps: f64) -> Option<FourPointBase> {
    let n = pts.len();
    let cos_min_angle = 30f64.to_radians().cos();
    for _ in 0..200 {
        let (ia, ib) = (rng.random_range(0..n), rng.random_range(0..n));
        let (a, b) = (pts[ia], pts[ib]);
        if (b - a).norm() < min_len {
            continue;
        }
        for _ in 0..100 {
            let (ic, id) = (rng.random_range(0..n), rng.random_range(0..n));
            let (c, d) = (pts[ic], pts[id]);
            if (d - c).norm() < min_len {
                continue;
            }
            let cos = ((b - a).normalize().dot(&(d - c).normalize())).abs();
            if cos > cos_min_angle {
                continue;
            }
            let Some((r1, r2, gap)) = crossing(&a, &b, &c, &d) else {
                continue;
            };
            if gap < eps && (0.2..=0.8).contains(&r1) && (0.2..=0.8).contains(&r2) {
                return Some(FourPointBase::from_points([ia, ib, ic, id], [a, b, c, d], r1, r2));
            }
        }
    }
    None
}

/// Ordered target quadruples whose pair distances and crossing point match
/// `base`.
fn congruent_sets(base: &FourPointBase, pts: &[Point3], tree: &KdTree, eps: f64) -> Vec<[usize; 4]> {
    let [d_ab, d_cd, ..] = base.distances;
    let (Some(p1), Some(p2)) = (
        (d_ab > eps).then(|| pairs_with_tree(tree, pts, d_ab, eps)),
        (d_cd > eps).then(|| pairs_with_tree(tree, pts, d_cd, eps)),
    ) else {
        return Vec::new();
    };
    let oriented = |pairs: &[(usize, usize)]| -> Vec<(usize, usize)> {
        pairs.iter().flat_map(|&(i, j)| [(i, j), (j, i)]).collect()
    };
    let (p1, p2) = (oriented(&p1), oriented(&p2));
    let cross_pts: Vec<Point3> = p2.iter().map(|&(u, v)| pts[u] + (pts[v] - pts[u]) * base.r2).collect();
    let cross_tree = KdTree::build(&cross_pts);
    let tol = 2.0 * eps;
    let mut out = Vec::new();
    let mut near = Vec::new();
    for &(p, q) in &p1 {
        let e = pts[p] + (pts[q] - pts[p]) * base.r1;
        near.clear();
        cross_tree.within_into(&e, eps, &mut near);
        near.sort_unstable();
        for &k in &near {
            let (u, v) = p2[k];
            if u == p || u == q || v == p || v == q {
                continue;
            }
            let d = |i: usize, j: usize| (pts[i] - pts[j]).norm();
            let ok = (d(p, u) - base.distances[2]).abs() < tol
                && (d(p, v) - base.distances[3]).abs() < tol
                && (d(q, u) - base.distances[4]).abs() < tol
                && (d(q, v) - base.distances[5]).abs() < tol;
            if ok {
                out.push([p, q, u, v]);
            }
        }
    }
    out
}

fn stride_sample(points: &[Point3], n: usize) -> Vec<Point3> {
    if points.len() <= n {
        return points.to_vec();
    }
    (0..n).map(|k| points[k * points.len() / n]).collect()
}

type P2 = nalgebra::Vector2<f64>;

/// Centroid and orthonormal frame of the best-fit plane; the third axis is
/// the normal.
fn plane_frame(points: &[Point3]) -> Option<(Point3, [Vec3; 3])> {
    let (c, cov) = covariance(points).ok()?;
    let (_, e) = sorted_eigen(&cov);
    Some((c, [e[0], e[1], e[0].cross(&e[1])]))
}

fn hull_2d(mut pts: Vec<P2>) -> Vec<P2> {
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let turn = |o: P2, a: P2, b: P2| (a - o).perp(&(b - o));
    let mut hull: Vec<P2> = Vec::with_capacity(pts.len() + 1);
    for pass in 0..2 {
        let start = hull.len();
        let ordered: Vec<P2> = if pass == 0 {
            pts.clone()
        } else {
            pts.iter().rev().copied().collect()
        };
        for p in ordered {
            while hull.len() >= start + 2 && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Minimum-area enclosing rectangle: center, direction of the longer side
/// in radians, and (long, short) side lengths.
struct OutlineRect {
    center: P2,
    angle: f64,
    extents: [f64; 2],
}

fn min_area_rect(pts: Vec<P2>) -> Option<OutlineRect> {
    let hull = hull_2d(pts);
    if hull.len() < 3 {
        return None;
    }
    let mut best: Option<(f64, OutlineRect)> = None;
    for i in 0..hull.len() {
        let edge = hull[(i + 1) % hull.len()] - hull[i];
        if edge.norm() == 0.0 {
            continue;
        }
        let dir = edge.normalize();
        let perp = P2::new(-dir.y, dir.x);
        let (mut lo, mut hi) = (P2::repeat(f64::INFINITY), P2::repeat(f64::NEG_INFINITY));
        for p in &hull {
            let q = P2::new(p.dot(&dir), p.dot(&perp));
            lo = lo.inf(&q);
            hi = hi.sup(&q);
        }
        let size = hi - lo;
        let area = size.x * size.y;
        if best.as_ref().is_none_or(|(a, _)| area < *a) {
            let mid = (lo + hi) / 2.0;
            let center = dir * mid.x + perp * mid.y;
            let (angle, extents) = if size.x >= size.y {
                (dir.y.atan2(dir.x), [size.x, size.y])
            } else {
                (perp.y.atan2(perp.x), [size.y, size.x])
            };
            best = Some((area, OutlineRect { center, angle, extents }));
        }
    }
    best.map(|(_, r)| r)
}

/// Outline of the source in its own plane frame.
struct SourceOutline {
    center: Point3,
    frame: [Vec3; 3],
    rect: OutlineRect,
}

impl SourceOutline {
    fn new(points: &[Point3]) -> Option<Self> {
        let (center, frame) = plane_frame(points)?;
        let flat = points
            .iter()
            .map(|p| P2::new((p - center).dot(&frame[0]), (p - center).dot(&frame[1])))
            .collect();
        Some(Self {
            center,
            frame,
            rect: min_area_rect(flat)?,
        })
    }
}

/// Snaps `pose` so the target's plane and in-plane bounding rectangle
/// coincide with the source's. Point-to-point fits barely move a plane
/// sliding within itself, and scores such as LCP are flat there; the
/// bounding rectangle is pinned by the long straight edges, which survive
/// missing corners. Returns `None` when the outlines do not agree in size.
fn refine_by_outline(src: &SourceOutline, target: &[Point3], pose: &Pose) -> Option<Pose> {
    use std::f64::consts::{FRAC_PI_2, PI};
    let inv = pose.inverse();
    let local: Vec<Point3> = target.iter().map(|p| inv.transform_point(p)).collect();
    let (ct, ft) = plane_frame(&local)?;
    let [u, v, ns] = src.frame;
    let nt = if ft[2].dot(&ns) < 0.0 { -ft[2] } else { ft[2] };
    let tilt = *Rotation3::rotation_between(&nt, &ns)?.matrix();
    let flat = local
        .iter()
        .map(|q| {
            let l = tilt * (q - ct);
            P2::new(l.dot(&u), l.dot(&v))
        })
        .collect();
    let rect = min_area_rect(flat)?;
    for k in 0..2 {
        let (a, b) = (src.rect.extents[k], rect.extents[k]);
        if (a - b).abs() > 0.1 * a {
            return None;
        }
    }
    let mut delta = (src.rect.angle - rect.angle).rem_euclid(PI);
    if delta > FRAC_PI_2 {
        delta -= PI;
    }
    let spin = *Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(ns), delta).matrix();
    let to_3d = |c: P2| u * c.x + v * c.y;
    let r = spin * tilt;
    let t = src.center.coords + to_3d(src.rect.center) - spin * to_3d(rect.center) - r * ct.coords;
    // Maps target-in-local coordinates onto the source.
    let d = Pose::from_approx(r, t);
    Some(pose.compose(&d.inverse()))
}

/// Global alignment of `source` onto `target` from any starting pose.
///
/// Bases are drawn from a voxelized copy of the source; congruent sets are
/// found in a voxelized target via [`pairs_in_range`] and matched on their
/// crossing points. Candidates are ranked by LCP on a fixed source sample,
/// ties by mean inlier distance, then by discovery order; the search stops at
/// the first candidate reaching `early_exit`. The winner is snapped onto the
/// target's plane and in-plane bounding rectangle.
pub fn coarse_register(source: &PointCloud, target: &PointCloud, params: &CoarseParams) -> Result<RegistrationResult> {
    params.validate()?;
    let start = Instant::now();
    for c in [source, target] {
        if c.len() < 50 {
            return Err(Error::TooFewPoints {
                needed: 50,
                got: c.len(),
            });
        }
    }
    let (src_s, tgt_s) = if params.search_leaf > 0.0 {
        (
            voxel_downsample(source, params.search_leaf)?,
            voxel_downsample(target, params.search_leaf)?,
        )
    } else {
        (source.clone(), target.clone())
    };
    let diag = 2.0 * Vec3::from(fit_obb(&src_s)?.half_extents).norm();
    let min_len = params.base_min_frac * diag;
    let tgt_s_tree = KdTree::build(&tgt_s.points);
    let target_tree = KdTree::build(&target.points);
    let sample = stride_sample(&source.points, params.lcp_samples);

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    // (score, mean inlier distance, pose)
    let mut best: Option<(f64, f64, Pose)> = None;
    let mut bases_tried = 0;
    'bases: for _ in 0..params.max_bases {
        let Some(base) = sample_base(&mut rng, &src_s.points, min_len, params.eps) else {
            break;
        };
        bases_tried += 1;
        for set in congruent_sets(&base, &tgt_s.points, &tgt_s_tree, params.eps) {
            let dst = set.map(|i| tgt_s.points[i]);
            let Ok(pose) = kabsch(&base.points, &dst) else { continue };
            let rms = (base
                .points
                .iter()
                .zip(&dst)
                .map(|(s, d)| (pose.transform_point(s) - d).norm_squared())
                .sum::<f64>()
                / 4.0)
                .sqrt();
            if rms > 2.0 * params.eps {
                continue;
            }
            let floor = best.map_or(0.0, |(s, _, _)| s);
            let score = lcp_with_tree(&target_tree, &sample, &pose, params.inlier_dist, floor);
            if score < floor || score == 0.0 {
                continue;
            }
            let spread = mean_inlier_distance(&target_tree, &sample, &pose, params.inlier_dist);
            let better = match best {
                None => true,
                Some((s, m, _)) => score > s || (score == s && spread < m),
            };
            if better {
                best = Some((score, spread, pose));
            }
            if score >= params.early_exit {
                break 'bases;
            }
        }
    }

    let (mut score, _, mut pose) = best.ok_or(Error::RegistrationFailed {
        score: 0.0,
        min_score: params.min_score,
    })?;
    if let Some(outline) = SourceOutline::new(&source.points) {
        for _ in 0..params.refine_iters {
            let Some(next) = refine_by_outline(&outline, &target.points, &pose) else {
                break;
            };
            let next_score = lcp_with_tree(&target_tree, &sample, &next, params.inlier_dist, 0.0);
            if next_score + 0.01 < score {
                break;
            }
            pose = next;
            score = next_score;
        }
    }
    if score < params.min_score {
        return Err(Error::RegistrationFailed {
            score,
            min_score: params.min_score,
        });
    }
    Ok(RegistrationResult {
        pose,
        score,
        elapsed: start.elapsed(),
        iterations: bases_tried,
    })
}

fn mean_inlier_distance(tree: &KdTree, points: &[Point3], pose: &Pose, dist: f64) -> f64 {
    let (sum, n) = points
        .iter()
        .filter_map(|p| tree.nearest(&pose.transform_point(p), dist))
        .fold((0.0, 0usize), |(s, n), (_, d)| (s + d, n + 1));
    if n == 0 {
        f64::INFINITY
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpParams {
    pub max_iter: usize,
    /// Stop once the mean correspondence distance changes by less than this.
    pub converge_eps: f64,
    /// Correspondences farther apart than this are ignored.
    pub max_corr_dist: f64,
    /// Inlier distance for the reported LCP score.
    pub inlier_dist: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iter: 60,
            converge_eps: 1e-6,
            max_corr_dist: f64::INFINITY,
            inlier_dist: 0.008,
        }
    }
}

/// Point-to-point ICP from `initial`. Each iteration pairs every source
/// point with its nearest target point and solves the rigid fit in closed
/// form. An iteration that lowers the LCP score is rolled back and ends the
/// loop, so the score never decreases.
pub fn icp_refine(
    source: &PointCloud,
    target: &PointCloud,
    initial: &Pose,
    params: &IcpParams,
) -> Result<RegistrationResult> {
    if params.max_iter == 0
        || !(params.converge_eps >= 0.0)
        || !(params.max_corr_dist > 0.0)
        || !(params.inlier_dist > 0.0)
    {
        return Err(Error::InvalidParameter(format!("bad ICP parameters {params:?}")));
    }
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let start = Instant::now();
    let tree = KdTree::build(&target.points);
    let mut pose = *initial;
    let mut prev: Option<(f64, f64, Pose)> = None;
    let mut src = Vec::with_capacity(source.len());
    let mut dst = Vec::with_capacity(source.len());
    let mut iterations = 0;
    loop {
        src.clear();
        dst.clear();
        let mut sum = 0.0;
        let mut inl = 0usize;
        for p in &source.points {
            if let Some((j, d)) = tree.nearest(&pose.transform_point(p), params.max_corr_dist) {
                src.push(*p);
                dst.push(target.points[j]);
                sum += d;
                if d <= params.inlier_dist {
                    inl += 1;
                }
            }
        }
        if src.len() < 3 {
            return Err(Error::NoCorrespondences(params.max_corr_dist));
        }
        let mean = sum / src.len() as f64;
        let score = inl as f64 / source.len() as f64;
        if let Some((prev_score, prev_mean, prev_pose)) = prev {
            if score < prev_score {
                pose = prev_pose;
                return Ok(RegistrationResult {
                    pose,
                    score: prev_score,
                    elapsed: start.elapsed(),
                    iterations,
                });
            }
            if (prev_mean - mean).abs() < params.converge_eps || iterations >= params.max_iter {
                return Ok(RegistrationResult {
                    pose,
                    score,
                    elapsed: start.elapsed(),
                    iterations,
                });
            }
        }
        prev = Some((score, mean, pose));
        pose = kabsch(&src, &dst)?;
        iterations += 1;
    }
}

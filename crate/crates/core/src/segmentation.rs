//! Face segmentation: HSV color masks, region-growing plane clusters,
//! quadrilateral fitting over a mask, dimension-gated ROI selection, and the
//! T1/T2 reference points on the target face.

use std::collections::VecDeque;

use nalgebra::Vector2;

use crate::camera::{inverse_project_subpixel, CameraIntrinsics, DepthImage, MaskImage, RgbImage};
use crate::error::{Error, Result};
use crate::geometry::{fit_obb, Obb, Plane, Point3, PointCloud};
use crate::spatial::KdTree;

pub type Pixel = Vector2<f64>;

/// Hue bounds in degrees (wrapping when `lo > hi`), saturation and value in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HsvRange {
    pub h: [f64; 2],
    pub s: [f64; 2],
    pub v: [f64; 2],
}

impl HsvRange {
    /// Saturated reds on either side of 0°.
    pub fn red() -> Self {
        Self {
            h: [340.0, 20.0],
            s: [0.5, 1.0],
            v: [0.25, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |r: [f64; 2]| (0.0..=1.0).contains(&r[0]) && (0.0..=1.0).contains(&r[1]);
        let hue_ok = self.h.iter().all(|h| (0.0..=360.0).contains(h));
        if !hue_ok || !in_unit(self.s) || !in_unit(self.v) || self.s[0] > self.s[1] || self.v[0] > self.v[1] {
            return Err(Error::InvalidParameter(format!("bad HSV range {self:?}")));
        }
        Ok(())
    }

    pub fn contains(&self, hsv: [f64; 3]) -> bool {
        let [h, s, v] = hsv;
        let hue = if self.h[0] <= self.h[1] {
            h >= self.h[0] && h <= self.h[1]
        } else {
            h >= self.h[0] || h <= self.h[1]
        };
        hue && s >= self.s[0] && s <= self.s[1] && v >= self.v[0] && v <= self.v[1]
    }
}

/// Hexcone HSV: h in [0, 360), s and v in [0, 1].
pub fn rgb_to_hsv(rgb: [u8; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(|c| c as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    [if h >= 360.0 { h - 360.0 } else { h }, s, max]
}

pub fn hsv_threshold(rgb: &RgbImage, range: &HsvRange) -> MaskImage {
    MaskImage {
        width: rgb.width,
        height: rgb.height,
        data: rgb
            .data
            .iter()
            .map(|&c| if range.contains(rgb_to_hsv(c)) { 255 } else { 0 })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionGrowingParams {
    pub angle_thresh_deg: f64,
    pub curvature_thresh: f64,
    pub min_cluster: usize,
    /// Neighborhood size for growth.
    pub neighbors: usize,
}

impl Default for RegionGrowingParams {
    fn default() -> Self {
        Self {
            angle_thresh_deg: 5.0,
            curvature_thresh: 0.03,
            min_cluster: 200,
            neighbors: 30,
        }
    }
}

/// Smoothness-constrained region growing. Seeds are taken in ascending
/// curvature order (ties by index); a neighbor joins when its normal is
/// within the angle threshold of the current point's, and continues the
/// growth when its own curvature is below the curvature threshold.
pub fn region_growing(cloud: &PointCloud, curvature: &[f64], params: &RegionGrowingParams) -> Result<Vec<Vec<usize>>> {
    let normals = cloud.normals.as_ref().ok_or(Error::MissingNormals)?;
    if curvature.len() != cloud.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} curvature values for {} points",
            curvature.len(),
            cloud.len()
        )));
    }
    let cos_thresh = params.angle_thresh_deg.to_radians().cos();
    let tree = KdTree::build(&cloud.points);
    let mut seeds: Vec<usize> = (0..cloud.len()).collect();
    seeds.sort_by(|&a, &b| curvature[a].total_cmp(&curvature[b]).then(a.cmp(&b)));

    let mut label = vec![usize::MAX; cloud.len()];
    let mut clusters = Vec::new();
    for &seed in &seeds {
        if label[seed] != usize::MAX {
            continue;
        }
        let id = clusters.len();
        let mut members = vec![seed];
        label[seed] = id;
        let mut queue = VecDeque::from([seed]);
        while let Some(cur) = queue.pop_front() {
            for (nb, _) in tree.knn(&cloud.points[cur], params.neighbors + 1) {
                if label[nb] != usize::MAX {
                    continue;
                }
                if normals[cur].dot(&normals[nb]).abs() < cos_thresh {
                    continue;
                }
                label[nb] = id;
                members.push(nb);
                if curvature[nb] <= params.curvature_thresh {
                    queue.push_back(nb);
                }
            }
        }
        clusters.push(members);
    }
    Ok(clusters
        .into_iter()
        .filter(|c| c.len() >= params.min_cluster)
        .map(|mut c| {
            c.sort_unstable();
            c
        })
        .collect())
}

/// Convex quadrilateral in pixel coordinates. Corners have positive
/// signed area in (x, y) order and start at the corner closest to the image
/// origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrilateral2D {
    pub corners: [Pixel; 4],
}

impl Quadrilateral2D {
    /// Length of edge i, running from corner i to corner i + 1.
    pub fn edge_lengths(&self) -> [f64; 4] {
        std::array::from_fn(|i| (self.corners[(i + 1) % 4] - self.corners[i]).norm())
    }

    pub fn area(&self) -> f64 {
        polygon_area(&self.corners)
    }

    /// Intersection of the diagonals: the image of the face center under
    /// perspective projection.
    pub fn center(&self) -> Pixel {
        let [a, b, c, d] = self.corners;
        line_intersection(a, c - a, b, d - b).unwrap_or((a + b + c + d) / 4.0)
    }

    /// Indices of the two opposite edges with the smaller summed length.
    /// Equal pairs resolve to edges (0, 2).
    pub fn short_edge_pair(&self) -> [usize; 2] {
        short_pair(self.edge_lengths())
    }

    pub fn edge_midpoint(&self, i: usize) -> Pixel {
        (self.corners[i] + self.corners[(i + 1) % 4]) / 2.0
    }
}

fn short_pair(len: [f64; 4]) -> [usize; 2] {
    if len[0] + len[2] <= len[1] + len[3] {
        [0, 2]
    } else {
        [1, 3]
    }
}

fn cross(a: Pixel, b: Pixel) -> f64 {
    a.x * b.y - a.y * b.x
}

fn polygon_area(pts: &[Pixel]) -> f64 {
    let n = pts.len();
    (0..n).map(|i| cross(pts[i], pts[(i + 1) % n])).sum::<f64>() / 2.0
}

/// Intersection of lines p + s·d and q + u·e.
fn line_intersection(p: Pixel, d: Pixel, q: Pixel, e: Pixel) -> Option<Pixel> {
    let denom = cross(d, e);
    if denom.abs() < 1e-12 {
        return None;
    }
    Some(p + d * (cross(q - p, e) / denom))
}

/// Pixels of the largest 8-connected nonzero component.
fn largest_component(mask: &MaskImage) -> Vec<(usize, usize)> {
    let (w, h) = (mask.width, mask.height);
    let mut seen = vec![false; w * h];
    let mut best: Vec<(usize, usize)> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if mask.data[start] == 0 || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            comp.push((x, y));
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask.data[j] != 0 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if comp.len() > best.len() {
            best = comp;
        }
    }
    best
}

/// Component pixels with at least one 4-neighbor outside the component.
fn outer_boundary(mask: &MaskImage, comp: &[(usize, usize)]) -> Vec<(i64, i64)> {
    let (w, h) = (mask.width, mask.height);
    let mut inside = vec![false; w * h];
    for &(x, y) in comp {
        inside[y * w + x] = true;
    }
    let is_in =
        |x: i64, y: i64| x >= 0 && y >= 0 && x < w as i64 && y < h as i64 && inside[y as usize * w + x as usize];
    comp.iter()
        .map(|&(x, y)| (x as i64, y as i64))
        .filter(|&(x, y)| !(is_in(x - 1, y) && is_in(x + 1, y) && is_in(x, y - 1) && is_in(x, y + 1)))
        .collect()
}

/// Monotone-chain convex hull with collinear points removed, positive
/// orientation.
fn convex_hull(mut pts: Vec<(i64, i64)>) -> Vec<(i64, i64)> {
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let turn = |o: (i64, i64), a: (i64, i64), b: (i64, i64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(i64, i64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(i64, i64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Shrinks a convex polygon to four vertices by repeatedly collapsing the
/// edge whose removal (extending both neighboring edges to their
/// intersection) adds the least area. The result encloses the input.
fn reduce_to_quad(mut poly: Vec<Pixel>) -> Option<Vec<Pixel>> {
    while poly.len() > 4 {
        let n = poly.len();
        let mut best: Option<(f64, usize, Pixel)> = None;
        for i in 0..n {
            let prev = poly[(i + n - 1) % n];
            let a = poly[i];
            let b = poly[(i + 1) % n];
            let next = poly[(i + 2) % n];
            let (d1, d2) = (a - prev, b - next);
            // The extended edges must meet beyond the removed edge.
            if cross(d1, -d2) <= 0.0 {
                continue;
            }
            let Some(p) = line_intersection(a, d1, b, d2) else {
                continue;
            };
            if (p - a).dot(&d1) < 0.0 || (p - b).dot(&d2) < 0.0 {
                continue;
            }
            let added = cross(p - a, b - a).abs() / 2.0;
            if best.is_none_or(|(area, _, _)| added < area) {
                best = Some((added, i, p));
            }
        }
        let (_, i, p) = best?;
        poly[i] = p;
        poly.remove((i + 1) % n);
    }
    (poly.len() == 4).then_some(poly)
}

/// Largest area growth from hull to quadrilateral that still counts as a
/// quadrilateral-like region.
pub const MAX_QUAD_AREA_GROWTH: f64 = 0.15;

/// Fits the enclosing quadrilateral of the largest mask component: outer
/// boundary, convex hull, then least-area edge collapses down to four
/// corners.
pub fn fit_quadrilateral(mask: &MaskImage) -> Result<Quadrilateral2D> {
    let comp = largest_component(mask);
    if comp.len() < 100 {
        return Err(Error::NoComponent);
    }
    let hull: Vec<Pixel> = convex_hull(outer_boundary(mask, &comp))
        .into_iter()
        .map(|(x, y)| Pixel::new(x as f64, y as f64))
        .collect();
    if hull.len() < 4 {
        return Err(Error::NotQuadrilateralLike { growth: f64::NAN });
    }
    let hull_area = polygon_area(&hull);
    let quad = reduce_to_quad(hull).ok_or(Error::NotQuadrilateralLike { growth: f64::NAN })?;
    let growth = (polygon_area(&quad) - hull_area) / hull_area;
    if growth > MAX_QUAD_AREA_GROWTH {
        return Err(Error::NotQuadrilateralLike { growth: growth * 100.0 });
    }
    let start = (0..4)
        .min_by(|&a, &b| quad[a].norm_squared().total_cmp(&quad[b].norm_squared()))
        .unwrap();
    Ok(Quadrilateral2D {
        corners: std::array::from_fn(|k| quad[(start + k) % 4]),
    })
}

/// Expected face dimensions for ROI gating.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiSpec {
    pub width: f64,
    pub height: f64,
    pub depth: f64,
    /// Allowed relative deviation of the two in-plane extents.
    pub tolerance: f64,
}

impl RoiSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.width >= self.height && self.height >= self.depth && self.depth > 0.0) {
            return Err(Error::InvalidSpec("need width >= height >= depth > 0".into()));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 0.5) {
            return Err(Error::InvalidSpec("tolerance must be in (0, 0.5)".into()));
        }
        Ok(())
    }

    /// Whether OBB extents pass the dimension gate, and their distance to
    /// the expected face size.
    pub fn score(&self, obb: &Obb) -> Option<f64> {
        let [e0, e1, e2] = obb.extents();
        let ok = (e0 - self.width).abs() <= self.tolerance * self.width
            && (e1 - self.height).abs() <= self.tolerance * self.height
            && e2 <= self.depth;
        ok.then(|| ((e0 - self.width).powi(2) + (e1 - self.height).powi(2)).sqrt())
    }
}

/// Picks the segment whose OBB best matches `spec`. Returns its index and box.
pub fn roi_filter(segments: &[PointCloud], spec: &RoiSpec) -> Result<(usize, Obb)> {
    spec.validate()?;
    let mut best: Option<(f64, usize, Obb)> = None;
    for (i, seg) in segments.iter().enumerate() {
        let Ok(obb) = fit_obb(seg) else { continue };
        if let Some(score) = spec.score(&obb) {
            if best.is_none_or(|(s, _, _)| score < s) {
                best = Some((score, i, obb));
            }
        }
    }
    best.map(|(_, i, obb)| (i, obb)).ok_or(Error::NoRoiMatch)
}

fn order_by_image_x(a: (Pixel, Point3), b: (Pixel, Point3)) -> (Point3, Point3) {
    if (a.0.x, a.0.y) <= (b.0.x, b.0.y) {
        (a.1, b.1)
    } else {
        (b.1, a.1)
    }
}

/// T1 and T2: midpoints of the two shorter quadrilateral edges, inverse
/// projected through the depth image. T1 has the smaller image x.
///
/// When only one midpoint has valid depth nearby, the other is mirrored
/// through the face center along the major axis.
pub fn select_t_points(
    quad: &Quadrilateral2D,
    intr: &CameraIntrinsics,
    depth: &DepthImage,
) -> Result<(Point3, Point3)> {
    let [ea, eb] = quad.short_edge_pair();
    let (ma, mb) = (quad.edge_midpoint(ea), quad.edge_midpoint(eb));
    let lift = |m: Pixel| inverse_project_subpixel(intr, depth, m.x, m.y);
    let (pa, pb) = match (lift(ma), lift(mb)) {
        (Ok(a), Ok(b)) => (a, b),
        (Ok(a), Err(_)) => {
            let c = quad.center();
            let center = inverse_project_subpixel(intr, depth, c.x, c.y)?;
            (a, Point3::from(2.0 * center.coords - a.coords))
        }
        (Err(_), Ok(b)) => {
            let c = quad.center();
            let center = inverse_project_subpixel(intr, depth, c.x, c.y)?;
            (Point3::from(2.0 * center.coords - b.coords), b)
        }
        (Err(e), Err(_)) => return Err(e),
    };
    Ok(order_by_image_x((ma, pa), (mb, pb)))
}

/// Like [`select_t_points`], but depth comes from the fitted face plane: the
/// four corners are lifted onto `plane` along their viewing rays and T1, T2
/// are the 3D midpoints of the shorter edges. This removes per-pixel depth
/// noise and the perspective bias of 2D edge midpoints on tilted faces.
pub fn select_t_points_on_plane(
    quad: &Quadrilateral2D,
    intr: &CameraIntrinsics,
    plane: &Plane,
) -> Result<(Point3, Point3)> {
    let mut corners = [Point3::origin(); 4];
    for (k, c) in quad.corners.iter().enumerate() {
        corners[k] = plane
            .intersect_ray(&intr.ray(c.x, c.y))
            .ok_or(Error::InvalidDepth { x: c.x, y: c.y })?;
    }
    let lengths: [f64; 4] = std::array::from_fn(|i| (corners[(i + 1) % 4] - corners[i]).norm());
    let [ea, eb] = short_pair(lengths);
    let mid3 = |i: usize| Point3::from((corners[i].coords + corners[(i + 1) % 4].coords) / 2.0);
    Ok(order_by_image_x(
        (quad.edge_midpoint(ea), mid3(ea)),
        (quad.edge_midpoint(eb), mid3(eb)),
    ))
}

/// Marks the pixels hit by projecting `cloud` into the image.
pub fn mask_from_cloud(intr: &CameraIntrinsics, cloud: &PointCloud) -> MaskImage {
    let mut mask = MaskImage::filled(intr.width, intr.height, 0);
    for p in &cloud.points {
        if let Ok((x, y, _)) = crate::camera::project(intr, p) {
            let (x, y) = (x.round(), y.round());
            if intr.contains(x, y) {
                mask.set(x as usize, y as usize, 255);
            }
        }
    }
    mask
}

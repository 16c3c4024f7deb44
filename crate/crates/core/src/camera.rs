//! Pinhole camera model, aligned depth/mask/RGB images, and mask-driven
//! point extraction.
//!
//! Pixel coordinates are `(x, y) = (column, row)` with pixel centers at
//! integer coordinates, so depth for pixel `(x, y)` lives at `data[y * width + x]`.

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraIntrinsics {
    /// 1280x720 stream with a ~69° horizontal field of view.
    fn default() -> Self {
        Self {
            fx: 920.0,
            fy: 920.0,
            cx: 640.0,
            cy: 360.0,
            width: 1280,
            height: 720,
        }
    }
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidIntrinsics("focal lengths must be positive".into()));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64) {
            return Err(Error::InvalidIntrinsics("cx outside (0, width)".into()));
        }
        if !(self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(Error::InvalidIntrinsics("cy outside (0, height)".into()));
        }
        Ok(())
    }

    /// Viewing ray through pixel `(x, y)`, scaled so that its z component is 1.
    pub fn ray(&self, x: f64, y: f64) -> Vec3 {
        Vec3::new((x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        Self::new(
            kv.require("fx")?,
            kv.require("fy")?,
            kv.require("cx")?,
            kv.require("cy")?,
            kv.require("width")?,
            kv.require("height")?,
        )
    }

    pub fn to_key_values(&self) -> String {
        format!(
            "fx = {}\nfy = {}\ncx = {}\ncy = {}\nwidth = {}\nheight = {}\n",
            self.fx, self.fy, self.cx, self.cy, self.width, self.height
        )
    }
}

/// Row-major raster with dimensions checked at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

/// Depth in meters, 0 marks an invalid reading.
pub type DepthImage = Image<f64>;
/// Nonzero marks the region of interest.
pub type MaskImage = Image<u8>;
pub type RgbImage = Image<[u8; 3]>;

impl<T: Copy> Image<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn check_dims(&self, intr: &CameraIntrinsics, what: &str) -> Result<()> {
        if self.width != intr.width || self.height != intr.height {
            return Err(Error::DimensionMismatch(format!(
                "{what} is {}x{}, intrinsics are {}x{}",
                self.width, self.height, intr.width, intr.height
            )));
        }
        Ok(())
    }
}

impl MaskImage {
    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

impl DepthImage {
    /// Quantizes to 16-bit millimeters, the on-disk depth representation.
    pub fn quantize_mm(z: f64) -> f64 {
        (z * 1000.0).round().clamp(0.0, u16::MAX as f64) / 1000.0
    }

    pub fn validate(&self) -> Result<()> {
        match self.data.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            Some(i) => Err(Error::DimensionMismatch(format!(
                "invalid depth value {} at index {i}",
                self.data[i]
            ))),
            None => Ok(()),
        }
    }
}

/// Back-projects pixel `(x, y)` at depth `z`:
/// X = (x − cx)·Z/fx, Y = (y − cy)·Z/fy, Z = z.
pub fn inverse_project_at(intr: &CameraIntrinsics, x: f64, y: f64, z: f64) -> Point3 {
    Point3::new((x - intr.cx) * z / intr.fx, (y - intr.cy) * z / intr.fy, z)
}

/// Back-projects an integer pixel using the depth image.
pub fn inverse_project(intr: &CameraIntrinsics, depth: &DepthImage, px: (usize, usize)) -> Result<Point3> {
    let (x, y) = px;
    if x >= depth.width || y >= depth.height {
        return Err(Error::OutOfBounds {
            x: x as f64,
            y: y as f64,
            width: depth.width,
            height: depth.height,
        });
    }
    let z = depth.get(x, y);
    if z <= 0.0 {
        return Err(Error::InvalidDepth {
            x: x as f64,
            y: y as f64,
        });
    }
    Ok(inverse_project_at(intr, x as f64, y as f64, z))
}

/// Pixel coordinate and depth of a camera-frame point.
pub fn project(intr: &CameraIntrinsics, p: &Point3) -> Result<(f64, f64, f64)> {
    if p.z <= 0.0 {
        return Err(Error::BehindCamera(p.z));
    }
    Ok((intr.fx * p.x / p.z + intr.cx, intr.fy * p.y / p.z + intr.cy, p.z))
}

/// Offsets of a 5x5 window sorted by distance from the center, ties by
/// row then column.
fn window_offsets() -> [(i64, i64); 25] {
    let mut offs = [(0i64, 0i64); 25];
    let mut k = 0;
    for dy in -2..=2 {
        for dx in -2..=2 {
            offs[k] = (dx, dy);
            k += 1;
        }
    }
    offs.sort_by_key(|&(dx, dy)| (dx * dx + dy * dy, dy, dx));
    offs
}

/// Depth for a sub-pixel location: the nearest pixel is tried first, then
/// the rest of the surrounding 5x5 window in order of distance.
pub fn nearest_valid_depth(depth: &DepthImage, x: f64, y: f64) -> Option<f64> {
    let (cx, cy) = (x.round() as i64, y.round() as i64);
    window_offsets().iter().find_map(|&(dx, dy)| {
        let (px, py) = (cx + dx, cy + dy);
        if px < 0 || py < 0 || px >= depth.width as i64 || py >= depth.height as i64 {
            return None;
        }
        let z = depth.get(px as usize, py as usize);
        (z > 0.0).then_some(z)
    })
}

/// Back-projects a sub-pixel location using [`nearest_valid_depth`].
pub fn inverse_project_subpixel(intr: &CameraIntrinsics, depth: &DepthImage, x: f64, y: f64) -> Result<Point3> {
    if !intr.contains(x, y) {
        return Err(Error::OutOfBounds {
            x,
            y,
            width: intr.width,
            height: intr.height,
        });
    }
    let z = nearest_valid_depth(depth, x, y).ok_or(Error::InvalidDepth { x, y })?;
    Ok(inverse_project_at(intr, x, y, z))
}

/// One point per nonzero mask pixel with valid depth, in row-major order.
pub fn deproject_mask(intr: &CameraIntrinsics, depth: &DepthImage, mask: &MaskImage) -> Result<PointCloud> {
    depth.check_dims(intr, "depth image")?;
    mask.check_dims(intr, "mask")?;
    let mut points = Vec::new();
    for y in 0..depth.height {
        for x in 0..depth.width {
            let i = y * depth.width + x;
            if mask.data[i] != 0 && depth.data[i] > 0.0 {
                points.push(inverse_project_at(intr, x as f64, y as f64, depth.data[i]));
            }
        }
    }
    Ok(PointCloud::new(points))
}

/// Like [`deproject_mask`] but also carries each pixel's RGB color.
pub fn deproject_mask_colored(
    intr: &CameraIntrinsics,
    depth: &DepthImage,
    mask: &MaskImage,
    rgb: &RgbImage,
) -> Result<PointCloud> {
    rgb.check_dims(intr, "rgb image")?;
    let cloud = deproject_mask(intr, depth, mask)?;
    let colors = (0..depth.data.len())
        .filter(|&i| mask.data[i] != 0 && depth.data[i] > 0.0)
        .map(|i| rgb.data[i])
        .collect();
    cloud.with_colors(colors)
}

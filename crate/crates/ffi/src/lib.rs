//! C ABI over `cuboid_pose`.
//!
//! Clouds and artificial reference clouds are opaque heap handles owned by
//! the caller and released with the matching `*_free`. Poses cross the
//! boundary as 16 row-major doubles. Every fallible call returns a
//! [`CpStatus`]; on failure [`cp_last_error`] describes the cause for the
//! calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use cuboid_pose::camera::{inverse_project_at, project, CameraIntrinsics};
use cuboid_pose::correction::{correct_pose, make_artificial_cloud, ArtificialCloud};
use cuboid_pose::geometry::apply_transform;
use cuboid_pose::registration::{coarse_register, icp_refine, CoarseParams, IcpParams};
use cuboid_pose::{ply, CuboidSpec, Error, Point3, PointCloud, Pose, Vec3};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    Degenerate = 5,
    RegistrationFailed = 6,
    BufferTooSmall = 7,
    Panic = 99,
}

/// Opaque point cloud.
pub struct CpPointCloud(PointCloud);

/// Opaque synthetic reference rectangle used by registration and correction.
pub struct CpArtificialCloud(ArtificialCloud);

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CpIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

/// Estimated error removed by [`cp_correct_pose`].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CpCorrection {
    pub yaw_deg: f64,
    /// Translation error in camera coordinates, millimeters.
    pub dt_mm: [f64; 3],
    pub estimate_ms: f64,
}

/// Global registration parameters; see `cp_coarse_params_default`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CpCoarseParams {
    pub eps: f64,
    pub inlier_dist: f64,
    pub max_bases: usize,
    pub early_exit: f64,
    pub min_score: f64,
    pub seed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> CpStatus {
    match e {
        Error::Parse { .. } | Error::Config(_) => CpStatus::Parse,
        Error::Io(_) => CpStatus::Io,
        Error::RegistrationFailed { .. } | Error::NoCorrespondences(_) => CpStatus::RegistrationFailed,
        Error::DegenerateSegment | Error::DegenerateCloud(_) | Error::DegenerateDirection | Error::EmptyCloud => {
            CpStatus::Degenerate
        }
        _ => CpStatus::InvalidArgument,
    }
}

enum Fail {
    Null,
    Small,
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CpStatus::Ok
        }
        Ok(Err(Fail::Null)) => {
            set_error("null pointer argument");
            CpStatus::NullPointer
        }
        Ok(Err(Fail::Small)) => {
            set_error("output buffer too small");
            CpStatus::BufferTooSmall
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            CpStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null)
}

unsafe fn array<const N: usize>(p: *const f64) -> Result<[f64; N], Fail> {
    if p.is_null() {
        return Err(Fail::Null);
    }
    Ok(std::array::from_fn(|i| *p.add(i)))
}

unsafe fn write_array<const N: usize>(p: *mut f64, v: [f64; N]) -> Result<(), Fail> {
    if p.is_null() {
        return Err(Fail::Null);
    }
    ptr::copy_nonoverlapping(v.as_ptr(), p, N);
    Ok(())
}

unsafe fn point(p: *const f64) -> Result<Point3, Fail> {
    let [x, y, z] = array::<3>(p)?;
    Ok(Point3::new(x, y, z))
}

unsafe fn pose(p: *const f64) -> Result<Pose, Fail> {
    Ok(Pose::from_row_major(&array::<16>(p)?)?)
}

unsafe fn path<'a>(p: *const c_char) -> Result<&'a Path, Fail> {
    if p.is_null() {
        return Err(Fail::Null);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| Fail::Core(Error::InvalidParameter("path is not valid UTF-8".into())))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null);
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn cp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates a cloud from `n` xyz triples.
///
/// # Safety
/// `xyz` must point to `3 * n` doubles (may be null when `n` is 0) and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_cloud_new(xyz: *const f64, n: usize, out: *mut *mut CpPointCloud) -> CpStatus {
    guard(|| {
        if xyz.is_null() && n > 0 {
            return Err(Fail::Null);
        }
        let pts = (0..n)
            .map(|i| Point3::new(*xyz.add(3 * i), *xyz.add(3 * i + 1), *xyz.add(3 * i + 2)))
            .collect();
        put(out, CpPointCloud(PointCloud::new(pts)))
    })
}

/// # Safety
/// `cloud` must come from this library and not be used afterwards. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn cp_cloud_free(cloud: *mut CpPointCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

/// Number of points, or 0 for a null handle.
///
/// # Safety
/// `cloud` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cp_cloud_len(cloud: *const CpPointCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.0.len())
}

/// Copies the points as xyz triples into `xyz`, which holds `capacity` points.
///
/// # Safety
/// `cloud` must be a live handle and `xyz` must hold `3 * capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn cp_cloud_points(cloud: *const CpPointCloud, xyz: *mut f64, capacity: usize) -> CpStatus {
    guard(|| {
        let c = &get(cloud)?.0;
        if xyz.is_null() {
            return Err(Fail::Null);
        }
        if capacity < c.len() {
            return Err(Fail::Small);
        }
        for (i, p) in c.points.iter().enumerate() {
            ptr::copy_nonoverlapping(p.coords.as_ptr(), xyz.add(3 * i), 3);
        }
        Ok(())
    })
}

/// Applies a pose to every point, producing a new cloud.
///
/// # Safety
/// `cloud` must be a live handle, `pose16` must hold 16 doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_cloud_transform(
    cloud: *const CpPointCloud,
    pose16: *const f64,
    out: *mut *mut CpPointCloud,
) -> CpStatus {
    guard(|| {
        let moved = apply_transform(&pose(pose16)?, &get(cloud)?.0);
        put(out, CpPointCloud(moved))
    })
}

/// Reads an ASCII PLY file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_cloud_read_ply(file: *const c_char, out: *mut *mut CpPointCloud) -> CpStatus {
    guard(|| put(out, CpPointCloud(ply::read_ply(path(file)?)?)))
}

/// Writes an ASCII PLY file.
///
/// # Safety
/// `cloud` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cp_cloud_write_ply(cloud: *const CpPointCloud, file: *const c_char) -> CpStatus {
    guard(|| Ok(ply::write_ply(path(file)?, &get(cloud)?.0)?))
}

fn intrinsics(i: &CpIntrinsics) -> Result<CameraIntrinsics, Fail> {
    Ok(CameraIntrinsics::new(i.fx, i.fy, i.cx, i.cy, i.width, i.height)?)
}

/// Back-projects pixel `(x, y)` at depth `z` meters into `out_xyz`.
///
/// # Safety
/// `intr` must be valid and `out_xyz` must hold 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn cp_inverse_project(
    intr: *const CpIntrinsics,
    x: f64,
    y: f64,
    z: f64,
    out_xyz: *mut f64,
) -> CpStatus {
    guard(|| {
        let i = intrinsics(get(intr)?)?;
        if !(z > 0.0) {
            return Err(Fail::Core(Error::InvalidDepth { x, y }));
        }
        let p = inverse_project_at(&i, x, y, z);
        write_array(out_xyz, [p.x, p.y, p.z])
    })
}

/// Projects a camera-frame point to `(u, v, depth)`.
///
/// # Safety
/// `intr` must be valid, `xyz` must hold 3 doubles and `out_uvd` 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn cp_project(intr: *const CpIntrinsics, xyz: *const f64, out_uvd: *mut f64) -> CpStatus {
    guard(|| {
        let (u, v, d) = project(&intrinsics(get(intr)?)?, &point(xyz)?)?;
        write_array(out_uvd, [u, v, d])
    })
}

/// Builds the reference rectangle for a face of `width` x `height` meters
/// sampled every `pitch` meters.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_artificial_new(
    width: f64,
    height: f64,
    depth: f64,
    pitch: f64,
    out: *mut *mut CpArtificialCloud,
) -> CpStatus {
    guard(|| {
        let art = make_artificial_cloud(&CuboidSpec { width, height, depth }, pitch)?;
        put(out, CpArtificialCloud(art))
    })
}

/// # Safety
/// `art` must come from this library and not be used afterwards. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn cp_artificial_free(art: *mut CpArtificialCloud) {
    if !art.is_null() {
        drop(Box::from_raw(art));
    }
}

/// Copies the reference rectangle's points (face frame) into a new cloud.
///
/// # Safety
/// `art` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cp_artificial_cloud(art: *const CpArtificialCloud, out: *mut *mut CpPointCloud) -> CpStatus {
    guard(|| put(out, CpPointCloud(get(art)?.0.cloud.clone())))
}

/// Corrects yaw and translation of `pose16` from the face points `t1`/`t2`.
/// `normal` may be null to use the pose's own z axis.
///
/// # Safety
/// Arrays must hold 16 / 3 / 3 / 3 / 16 doubles; `report` may be null.
#[no_mangle]
pub unsafe extern "C" fn cp_correct_pose(
    pose16: *const f64,
    art: *const CpArtificialCloud,
    t1: *const f64,
    t2: *const f64,
    normal: *const f64,
    out_pose16: *mut f64,
    report: *mut CpCorrection,
) -> CpStatus {
    guard(|| {
        let p = pose(pose16)?;
        let n = if normal.is_null() {
            p.axis(2)
        } else {
            point(normal)?.coords
        };
        let (fixed, r) = correct_pose(&p, &get(art)?.0, &point(t1)?, &point(t2)?, &Vec3::from(n))?;
        write_array(out_pose16, fixed.to_row_major())?;
        if let Some(out) = report.as_mut() {
            *out = CpCorrection {
                yaw_deg: r.yaw_error,
                dt_mm: [r.translation_error.x, r.translation_error.y, r.translation_error.z],
                estimate_ms: r.t_estimate.as_secs_f64() * 1e3,
            };
        }
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn cp_coarse_params_default() -> CpCoarseParams {
    let d = CoarseParams::default();
    CpCoarseParams {
        eps: d.eps,
        inlier_dist: d.inlier_dist,
        max_bases: d.max_bases,
        early_exit: d.early_exit,
        min_score: d.min_score,
        seed: d.seed,
    }
}

/// Globally registers `source` onto `target`. `params` may be null for defaults.
///
/// # Safety
/// Handles must be live, `out_pose16` must hold 16 doubles; `out_score` may be null.
#[no_mangle]
pub unsafe extern "C" fn cp_coarse_register(
    source: *const CpPointCloud,
    target: *const CpPointCloud,
    params: *const CpCoarseParams,
    out_pose16: *mut f64,
    out_score: *mut f64,
) -> CpStatus {
    guard(|| {
        let mut p = CoarseParams::default();
        if let Some(c) = params.as_ref() {
            p = CoarseParams {
                eps: c.eps,
                inlier_dist: c.inlier_dist,
                max_bases: c.max_bases,
                early_exit: c.early_exit,
                min_score: c.min_score,
                seed: c.seed,
                ..p
            };
        }
        let r = coarse_register(&get(source)?.0, &get(target)?.0, &p)?;
        write_array(out_pose16, r.pose.to_row_major())?;
        if let Some(s) = out_score.as_mut() {
            *s = r.score;
        }
        Ok(())
    })
}

/// Point-to-point ICP from `initial16`.
///
/// # Safety
/// Handles must be live, pose arrays must hold 16 doubles; `out_score` may be null.
#[no_mangle]
pub unsafe extern "C" fn cp_icp_refine(
    source: *const CpPointCloud,
    target: *const CpPointCloud,
    initial16: *const f64,
    max_iter: usize,
    converge_eps: f64,
    out_pose16: *mut f64,
    out_score: *mut f64,
) -> CpStatus {
    guard(|| {
        let params = IcpParams {
            max_iter,
            converge_eps,
            ..Default::default()
        };
        let r = icp_refine(&get(source)?.0, &get(target)?.0, &pose(initial16)?, &params)?;
        write_array(out_pose16, r.pose.to_row_major())?;
        if let Some(s) = out_score.as_mut() {
            *s = r.score;
        }
        Ok(())
    })
}

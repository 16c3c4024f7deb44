#ifndef CUBOID_POSE_H
#define CUBOID_POSE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CpStatus {
  CP_STATUS_OK = 0,
  CP_STATUS_NULL_POINTER = 1,
  CP_STATUS_INVALID_ARGUMENT = 2,
  CP_STATUS_PARSE = 3,
  CP_STATUS_IO = 4,
  CP_STATUS_DEGENERATE = 5,
  CP_STATUS_REGISTRATION_FAILED = 6,
  CP_STATUS_BUFFER_TOO_SMALL = 7,
  CP_STATUS_PANIC = 99,
} CpStatus;

// Opaque synthetic reference rectangle used by registration and correction.
typedef struct CpArtificialCloud CpArtificialCloud;

// Opaque point cloud.
typedef struct CpPointCloud CpPointCloud;

typedef struct CpIntrinsics {
  double fx;
  double fy;
  double cx;
  double cy;
  size_t width;
  size_t height;
} CpIntrinsics;

// Estimated error removed by [`cp_correct_pose`].
typedef struct CpCorrection {
  double yaw_deg;
  // Translation error in camera coordinates, millimeters.
  double dt_mm[3];
  double estimate_ms;
} CpCorrection;

// Global registration parameters; see `cp_coarse_params_default`.
typedef struct CpCoarseParams {
  double eps;
  double inlier_dist;
  size_t max_bases;
  double early_exit;
  double min_score;
  uint64_t seed;
} CpCoarseParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *cp_last_error(void);

// Creates a cloud from `n` xyz triples.
//
// # Safety
// `xyz` must point to `3 * n` doubles (may be null when `n` is 0) and `out`
// must be writable.
enum CpStatus cp_cloud_new(const double *xyz, size_t n, struct CpPointCloud **out);

// # Safety
// `cloud` must come from this library and not be used afterwards. Null is a no-op.
void cp_cloud_free(struct CpPointCloud *cloud);

// Number of points, or 0 for a null handle.
//
// # Safety
// `cloud` must be null or a live handle.
size_t cp_cloud_len(const struct CpPointCloud *cloud);

// Copies the points as xyz triples into `xyz`, which holds `capacity` points.
//
// # Safety
// `cloud` must be a live handle and `xyz` must hold `3 * capacity` doubles.
enum CpStatus cp_cloud_points(const struct CpPointCloud *cloud, double *xyz, size_t capacity);

// Applies a pose to every point, producing a new cloud.
//
// # Safety
// `cloud` must be a live handle, `pose16` must hold 16 doubles and `out` must be writable.
enum CpStatus cp_cloud_transform(const struct CpPointCloud *cloud,
                                 const double *pose16,
                                 struct CpPointCloud **out);

// Reads an ASCII PLY file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` must be writable.
enum CpStatus cp_cloud_read_ply(const char *file, struct CpPointCloud **out);

// Writes an ASCII PLY file.
//
// # Safety
// `cloud` must be a live handle and `path` a NUL-terminated string.
enum CpStatus cp_cloud_write_ply(const struct CpPointCloud *cloud, const char *file);

// Back-projects pixel `(x, y)` at depth `z` meters into `out_xyz`.
//
// # Safety
// `intr` must be valid and `out_xyz` must hold 3 doubles.
enum CpStatus cp_inverse_project(const struct CpIntrinsics *intr,
                                 double x,
                                 double y,
                                 double z,
                                 double *out_xyz);

// Projects a camera-frame point to `(u, v, depth)`.
//
// # Safety
// `intr` must be valid, `xyz` must hold 3 doubles and `out_uvd` 3 doubles.
enum CpStatus cp_project(const struct CpIntrinsics *intr, const double *xyz, double *out_uvd);

// Builds the reference rectangle for a face of `width` x `height` meters
// sampled every `pitch` meters.
//
// # Safety
// `out` must be writable.
enum CpStatus cp_artificial_new(double width,
                                double height,
                                double depth,
                                double pitch,
                                struct CpArtificialCloud **out);

// # Safety
// `art` must come from this library and not be used afterwards. Null is a no-op.
void cp_artificial_free(struct CpArtificialCloud *art);

// Copies the reference rectangle's points (face frame) into a new cloud.
//
// # Safety
// `art` must be a live handle and `out` writable.
enum CpStatus cp_artificial_cloud(const struct CpArtificialCloud *art, struct CpPointCloud **out);

// Corrects yaw and translation of `pose16` from the face points `t1`/`t2`.
// `normal` may be null to use the pose's own z axis.
//
// # Safety
// Arrays must hold 16 / 3 / 3 / 3 / 16 doubles; `report` may be null.
enum CpStatus cp_correct_pose(const double *pose16,
                              const struct CpArtificialCloud *art,
                              const double *t1,
                              const double *t2,
                              const double *normal,
                              double *out_pose16,
                              struct CpCorrection *report);

struct CpCoarseParams cp_coarse_params_default(void);

// Globally registers `source` onto `target`. `params` may be null for defaults.
//
// # Safety
// Handles must be live, `out_pose16` must hold 16 doubles; `out_score` may be null.
enum CpStatus cp_coarse_register(const struct CpPointCloud *source,
                                 const struct CpPointCloud *target,
                                 const struct CpCoarseParams *params,
                                 double *out_pose16,
                                 double *out_score);

// Point-to-point ICP from `initial16`.
//
// # Safety
// Handles must be live, pose arrays must hold 16 doubles; `out_score` may be null.
enum CpStatus cp_icp_refine(const struct CpPointCloud *source,
                            const struct CpPointCloud *target,
                            const double *initial16,
                            size_t max_iter,
                            double converge_eps,
                            double *out_pose16,
                            double *out_score);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CUBOID_POSE_H */

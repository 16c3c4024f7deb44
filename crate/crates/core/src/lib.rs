//! Pose estimation for cuboid faces seen by an RGB-D camera, with a
//! constant-time pose error estimate and linear-time correction.

pub mod bench;
pub mod camera;
pub mod config;
pub mod correction;
pub mod error;
pub mod filters;
pub mod geometry;
pub mod imageio;
pub mod pipeline;
pub mod ply;
pub mod registration;
pub mod segmentation;
pub mod spatial;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{CuboidSpec, Obb, Point3, PointCloud, Pose, Vec3};

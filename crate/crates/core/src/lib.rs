//! Bone-surface reconstruction from two radiographs via learned occupancy fields.
//!
//! A CT-trained teacher network supervises a biplanar X-ray student through
//! pseudo-labels and feature distillation. Training data are synthetic knee
//! phantoms with exact analytic ground truth; outputs are per-bone triangle
//! meshes scored by surface-distance and overlap metrics.

pub mod drr;
mod error;
pub mod geometry;
pub mod io;
pub mod isosurface;
pub mod metrics;
pub mod models;
pub mod occupancy;
pub mod phantom;
pub mod training;
pub mod volume;

pub use error::{Error, Result};
pub use geometry::{CameraGeometry, GeometryConfig, PixelCoord, Point3, View};
pub use isosurface::TriangleMesh;
pub use occupancy::{one_hot_inference, BoneClass, OccupancyVector, NUM_CLASSES};
pub use phantom::{PhantomConfig, PhantomScene};
pub use volume::Volume3D;

//! Depth-aware LiDAR point painting.
//!
//! Points are projected into calibrated cameras, painted with pixel
//! coordinates, a visual depth estimate, the depth discrepancy and a sampled
//! texture feature, then embedded by a small fusion network.

pub mod cli;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod imagery;
pub mod io;
pub mod painter;
pub mod synth;

pub use error::{LvicError, Result};
pub use fusion::{fusion_backward, fusion_forward, sgd_step, Activation, FusionGradients, FusionParams};
pub use geometry::{
    back_project, in_bounds, project, transform_point, Camera, CameraIntrinsics, CameraRig,
    PixelCoord, Projection, Se3Transform,
};
pub use imagery::{sample_depth, sample_feature, DepthMap, FeatureMap};
pub use painter::{paint_cloud, PaintLayout, PaintOptions, PaintedCloud, Painter, PointCloud};

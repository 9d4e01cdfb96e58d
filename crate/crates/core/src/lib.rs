//! Photometric alignment of a colored point cloud to a single camera image.
//!
//! The pipeline transforms the cloud by a 6-parameter rigid pose, masks
//! occluded points with a Z-buffer, projects the survivors into the image,
//! samples sub-pixel colors, fits a second-order polynomial color transform
//! between image and cloud colors, and minimizes a t-distribution weighted
//! photometric error with Adam.
//!
//! Modules:
//!
//! - [`geometry`]: pose parameters, rigid transform, projection, Jacobians, Z-buffer.
//! - [`sampler`]: bilinear sampling and the two sub-pixel gradient strategies.
//! - [`colorxform`]: polynomial color lifting and inlier-gated least squares.
//! - [`robustloss`]: residuals, t-distribution weights, scale estimation.
//! - [`aligner`]: forward pass, analytic pose gradient, Adam, the outer loop.
//! - [`synthbench`]: procedural scenes, color effects, pose metrics, benchmark harness.
//! - [`io`]: PLY / PPM / key-value formats and the color-difference heatmap.
//! - [`gradcheck`]: finite-difference checks of every analytic derivative.

pub mod aligner;
pub mod colorxform;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod reduce;
pub mod robustloss;
pub mod sampler;
pub mod synthbench;

pub use aligner::{
    adam_step, align, align_with_observer, forward_pass, pose_gradient, AdamState, AlignConfig,
    AlignResult, AlignState, ColorMode,
};
pub use colorxform::{ColorTransform, InlierSet, KernelOrder, PolyFeatures};
pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, PointCloud, PoseParams, VisibilityMask};
pub use sampler::{GradientStrategy, Image, SubpixelSample};

/// RGB triple, also used for signed color differences and gradients.
pub type Rgb = nalgebra::Vector3<f64>;

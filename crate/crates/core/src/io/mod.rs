//! File formats and visualization: PLY clouds, PPM/PNG images, key-value
//! intrinsics and run configuration, pose files, color-difference heatmaps.

pub mod heatmap;
pub mod image;
pub mod keyvalue;
pub mod ply;
pub mod pose;

pub use heatmap::{colormap, heatmap, heatmap_masked, render_point_cloud};
pub use image::{decode_image, load_image, save_image, ImageCodec, PpmCodec};
#[cfg(feature = "png")]
pub use image::PngCodec;
pub use keyvalue::{load_intrinsics, parse_intrinsics, parse_mode_label, KeyValues, RunConfig};
pub use ply::{load_ply, parse_ply, save_ply, save_ply_binary};
pub use pose::{format_pose, load_pose, parse_pose, save_pose};

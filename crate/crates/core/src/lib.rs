//! Pixel-level online video stabilization: warp fields, robust motion
//! estimation, a forward-only transformer/CNN warp predictor, a sliding-window
//! engine with crop post-processing, and crop/distortion/stability metrics.

pub mod cli;
pub mod error;
pub mod frame;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod motion;
pub mod network;
pub mod stabilizer;
pub mod synth;
pub mod tensor;
pub mod warp;

pub use error::{Error, Result};
pub use frame::{psnr, Frame, FrameSequence, GrayImage};
pub use geometry::{AffineTransform, Homography};
pub use tensor::Tensor;
pub use warp::{affine_to_warp_field, apply_warp, WarpField};

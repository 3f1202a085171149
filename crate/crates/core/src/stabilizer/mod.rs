//! Sliding-window stabilization: window bookkeeping, warp predictors, crop
//! post-processing and the engine that ties them together.

pub mod crop;
pub mod engine;
pub mod predictor;
pub mod window;

pub use crop::{common_valid_mask, compute_crop_region, crop_resize, maximal_rectangle, CropRegion, PixelRect};
pub use engine::{stabilize_sequence, stabilize_with_report, CropMode, FrameDiagnostics, StabilizeReport, StabilizerConfig, Timings};
pub use predictor::{frame_fingerprint, ClassicalPredictor, IdentityPredictor, PredictionDiagnostics, TunetPredictor, WarpPrediction, WarpPredictor, WindowView};
pub use window::{window_trace, SlidingWindow, SlidingWindowConfig};

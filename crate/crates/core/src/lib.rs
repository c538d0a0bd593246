//! Visual model-predictive control for planar pushing.
//!
//! A toy pushing simulator renders grayscale frames. A flow predictor maps
//! frames and candidate actions to per-pixel motion kernels, which advect
//! designated-pixel distributions; a cross-entropy planner picks actions that
//! move those pixels to their goals.

pub mod bench;
pub mod dataset;
pub mod error;
pub mod flow;
pub mod grid;
pub mod planner;
pub mod sim;
pub mod tracker;

pub use error::{Error, Result};
pub use grid::{normalize, FlowField, Image, Pixel, PixelDistribution};

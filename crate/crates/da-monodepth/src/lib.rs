//! Domain-adaptive monocular depth estimation.
//!
//! A compact encoder-decoder depth network trained on an annotated source
//! domain and aligned to an unannotated target domain through a gradient
//! reversal layer and a patch-based domain classifier. A semantic decoder
//! sharing its first block with the depth decoder supplies shape cues during
//! training; only the encoder and depth decoder are needed at inference time.
//!
//! The crate is organized around the training pipeline:
//!
//! - [`nn`]: tensor primitives (convolution, normalization, resampling) with
//!   explicit forward/backward passes,
//! - [`model`]: the encoder, the two decoders, and the domain classifier,
//! - [`loss`]: the photometric, smoothness, segmentation, and adversarial
//!   objectives and the disparity conversions they operate on,
//! - [`data`]: dataset manifests, PNG codecs, preprocessing, and a procedural
//!   two-domain scene generator,
//! - [`train`]: the adversarial multi-task training loop with checkpointing,
//! - [`eval`]: depth metrics, report rendering, and visualization helpers.
//!
//! Data-parallel inner loops run on rayon when the (default) `parallel`
//! feature is enabled and fall back to sequential iteration otherwise; both
//! paths produce bit-identical results because reductions are ordered.

pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod model;
pub mod nn;
pub mod parallel;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

//! Domain adaptation for binary foreground segmentation by foreground-aware
//! stylization and consensus pseudo-labeling.

// 3×3 colour algebra reads better with explicit indices, and `!(x > 0.0)`
// is used on purpose so NaN fails validation.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod adversarial;
pub mod config;
pub mod cpl;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod num;
pub mod pipeline;
pub mod rng;
pub mod stylizer;
pub mod synth;
pub mod types;

pub use config::{ExperimentConfig, LossWeights};
pub use dataset::{DatasetLayout, DatasetSplit, Sample};
pub use error::{Error, Result};
pub use num::Real;
pub use rng::{seeded_rng, SeededRng};
pub use types::{BinaryMask, Image, ProbMap, Region};

/// Single precision working types used by training and the CLI.
pub type Image32 = Image<f32>;
pub type ProbMap32 = ProbMap<f32>;
pub type SegModel32 = nn::SegModel<f32>;

/// Double precision variants for gradient checks and reference maths.
pub type Image64 = Image<f64>;
pub type ProbMap64 = ProbMap<f64>;
pub type SegModel64 = nn::SegModel<f64>;

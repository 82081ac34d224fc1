//! Bridge load-capacity estimation from images.
//!
//! Inventory records are parsed and joined to image manifests, turned into
//! labelled dataset variants, learned by a small convolutional network and
//! scored with multi-class and binarized metrics.

// `!(a < b)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod datasets;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod learner;
pub mod nbi;
pub mod pipeline;
pub mod report;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::{MetricScalar, Real};

/// Training and checkpoint precision.
pub type Network32 = learner::Network<f32>;
/// Gradient-check precision.
pub type Network64 = learner::Network<f64>;
pub type MetricsReport64 = eval::MetricsReport<f64>;
/// Metrics in exact rational arithmetic.
pub type ExactMetricsReport = eval::MetricsReport<num_rational::BigRational>;

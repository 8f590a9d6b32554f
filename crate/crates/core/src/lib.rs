//! Budget-constrained active inference for a population mean using several
//! predictors: per-instance routing to a predictor subset, inverse-propensity
//! label sampling, and weighted combination of predictions.
//!
//! The typical flow is [`optimizer::calibrate`] on a labeled burn-in sample,
//! then [`engine::deploy`] on the unlabeled stream.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod datagen;
pub mod engine;
pub mod error;
pub mod optimizer;
pub mod rng;
pub mod types;
pub mod uncertainty;

pub use error::{Error, Result};
pub use types::*;

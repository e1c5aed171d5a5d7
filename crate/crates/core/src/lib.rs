//! Policy-gradient tuning of the post-processing stack of audio event
//! detectors.
//!
//! A detector emits a posteriorgram per clip (frames × classes). The
//! post-processing stack thresholds every class column, median-filters the
//! binary decisions and decodes the remaining runs into events, which are
//! scored with the collar-based event F1. This crate learns the per-class
//! thresholds and window sizes with a recurrent actor-critic policy, and
//! provides an exhaustive grid search as the comparison point.

// negated comparisons like `!(x > 0.0)` are how NaN gets rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod agent;
pub mod dataset;
pub mod env;
pub mod error;
pub mod eval;
pub mod grid;
pub mod metric;
pub mod ndmath;
pub mod postproc;

pub use error::{Error, Result};

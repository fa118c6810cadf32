//! Watermark-based replay-attack detection for linear Gaussian plants.

// `!(x > 0.0)` style checks are kept on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detector;
pub mod error;
pub mod learning;
pub mod linalg;
pub mod lti;
pub mod scenario;
pub mod watermark;

pub use error::{Error, Result};

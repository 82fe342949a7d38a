//! Multivariate kernel density estimation combining local kernel smoothing
//! with global smoothing from a log-linear model fitted to cell counts.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod casefile;
pub mod error;
pub mod estimator;
pub mod format;
pub mod lattice;
pub mod linalg;
pub mod loglinear;
pub mod simharness;
pub mod skewdist;
pub mod special;
mod stats;

pub use error::{Error, Result};

//! Streaming group-anomaly detection over mixed categorical/continuous event
//! streams.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod detector;
pub mod error;
pub mod harness;
pub mod inference;
pub mod ingest;
pub mod lbfgs;
pub mod model;
pub mod sampling;
pub mod ssm;

pub use error::{Error, Result};

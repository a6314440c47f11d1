//! Stream driver, synthetic data, evaluation and benchmarks.

pub mod bench;
pub mod driver;
pub mod metrics;
pub mod runconfig;
pub mod synth;

//! Command-line orchestration: dataset construction, training, evaluation,
//! prediction reports, corpus statistics and synthetic corpora.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod predict;
pub mod stats;
pub mod synth;
pub mod train;

pub use error::HarnessError;

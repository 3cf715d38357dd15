//! Streaming anomaly detection for evolving cyber-physical-system time
//! series.
//!
//! The library trains a neural state-space model on normal telemetry,
//! adapts it to evolving data with temporal mixup and a one-class
//! meta-learning step, scores query windows with an unscented Bayesian
//! filter, and turns scores into decisions with a label-free
//! low-density-point threshold over a kernel density estimate.

pub mod error;
pub mod eval;
pub mod linalg;
pub mod mixup;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod scoring;
pub mod simulator;
pub mod ssm;
pub mod threshold;
pub mod timeseries;

pub use error::{Error, Result};

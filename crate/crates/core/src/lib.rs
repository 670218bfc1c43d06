//! Time-delay estimation between two noisy, instantaneously mixed series.
//!
//! The crate covers signal synthesis, spectral and bispectral averaging,
//! five families of delay estimators, a segment bootstrap for confidence
//! intervals, and a Monte Carlo harness that sweeps signal-to-noise ratio.

pub mod error;
pub mod estimators;
pub mod siggen;
pub mod spectral;
pub mod bootstrap;
pub mod harness;

pub use error::{Error, Result};

//! Macroeconomic forecasting toolkit.
//!
//! Bayesian VARs with natural-conjugate and asymmetric-conjugate priors, a
//! single-factor direct-forecast model and an AR(1) benchmark, a recursive
//! pseudo out-of-sample harness over FRED-MD-layout panels, forecast
//! evaluation (relative RMSFE, Diebold-Mariano tests, box-plot summaries),
//! and the scaling/patching/quantization codecs used to feed series to
//! time-series foundation models.

pub mod benchmark;
pub mod bvar;
pub mod data;
pub mod error;
pub mod eval;
pub mod factor;
pub mod harness;
pub mod numerics;
pub mod optim;
pub mod tokenize;

pub use error::{Error, Result};

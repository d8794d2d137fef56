//! Population-level topological priors for time-series forecasting.
//!
//! The pipeline turns a panel of series into two frozen conditioning signals:
//! a 125-dimensional persistence-landscape fingerprint of the cross-series
//! correlation manifold, and per-series spectral coordinates from a truncated
//! SVD of the entity-time matrix. Those signals feed either a transformer
//! forecaster through broadcast context injection, or a residual adapter
//! over cached base forecasts.

pub mod ablation;
pub mod adapter;
pub mod artifact;
pub mod backbone;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod forecast;
pub mod landscape;
pub mod manifold;
pub mod nn;
pub mod par;
pub mod persistence;
pub mod screening;
pub mod sheaf;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
pub use par::Execution;

//! DINA cognitive diagnosis model.
//!
//! - [`qmatrix`]: Q-matrix parsing and the identifiability verdict.
//! - [`model`]: parameters, exact pattern probabilities, likelihood, simulation.
//! - [`tmoments`]: T-matrix moments, the empirical moment vector, distribution distance.
//! - [`em`]: multi-start EM maximum likelihood and MSE summaries.
//! - [`witness`]: numerically certified non-identifiability witnesses.
//! - [`experiment`]: seeded Monte Carlo consistency studies.

pub mod em;
pub mod error;
pub mod experiment;
pub mod model;
pub mod order;
pub mod qmatrix;
pub mod seed;
pub mod tmoments;
pub mod witness;

pub use error::{DinaError, Result};
pub use model::{AttributeProfile, ModelParams, ParamsSpec, ResponseDataset};
pub use qmatrix::{IdentifiabilityReport, QMatrix, Verdict};

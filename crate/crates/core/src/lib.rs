//! Surrogate variable analysis for additive gene-expression structural
//! equation models.
//!
//! The pipeline fits each response on a polynomial basis in `y`, factors
//! the residuals, picks the number of factors by parallel analysis and
//! builds surrogates for the unobserved variables from a signature set of
//! responses chosen by local false discovery rates.

pub mod basisfit;
pub mod error;
pub mod evalmetrics;
pub mod experiment;
pub mod factorize;
pub mod fdrkit;
pub mod graphsem;
pub mod linalg;
pub mod par;
pub mod rng;
pub mod surrogate;

pub use error::{Result, SvaError};
pub use experiment::{run_experiment, run_sweep, ExperimentConfig, SweepSpec};
pub use par::Execution;
pub use rng::{seeded, SvaRng};
pub use surrogate::Method;

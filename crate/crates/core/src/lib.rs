//! Quasi-likelihood concentration toolkit.
//!
//! Estimators for canonical generalized linear and single-index models,
//! their rate functions, penalized deviation bounds, chaining entropy
//! estimates and a deterministic Monte Carlo harness that checks the bounds
//! empirically.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chaining;
pub mod concentration;
pub mod efc;
pub mod error;
pub mod glm;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod mc;
pub mod optim;
pub mod penalty;
pub mod quadrature;
pub mod single_index;

pub use efc::{EfcFamily, Interval, NoiseLaw};
pub use error::{QlcError, Result};
pub use grid::{GridDomain, ParamBox};
pub use optim::OptimOptions;

/// Crate version recorded in serialized outputs.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

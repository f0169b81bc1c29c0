//! Sparse quantile regression with l0 penalties and cardinality constraints.
//!
//! The crate provides exact solvers (a mixed-integer formulation solved by
//! branch-and-bound on a dense simplex engine, plus subset enumeration), a
//! smoothed proximal first-order method for larger problems, an l1-penalised
//! comparator, validation-based tuning, split conformal prediction intervals
//! and a Monte Carlo simulation harness.

pub mod conformal;
pub mod data;
pub mod error;
pub mod features;
pub mod io;
pub mod loss;
pub mod lp;
pub mod mio;
pub mod prox;
pub mod select;
pub mod sim;

pub use data::{Dataset, QuantileLevel};
pub use error::{Error, Result};
pub use prox::{FitResult, ProxConfig};

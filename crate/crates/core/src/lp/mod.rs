//! Linear programming: the simplex engine and the quantile-regression LPs it serves.

mod quantile;
mod simplex;

pub use quantile::{l1_pqr_fit, lambda_bc, qr_fit, qr_fit_boxed, L1Options};
pub use simplex::{solve_lp, Direction, LinearProgram, LpLimits, LpSolution, LpStatus, Sense};

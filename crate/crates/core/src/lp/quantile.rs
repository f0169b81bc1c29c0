//! Quantile regression as a linear program.
//!
//! Residuals are split into positive and negative parts `y_i - x_i' theta =
//! r_i - s_i` with `r, s >= 0`, and the check loss becomes the linear objective
//! `(1/n) sum tau r_i + (1 - tau) s_i`.

use std::time::Instant;

use rand::Rng;

use super::simplex::{solve_lp, LinearProgram, LpLimits, LpStatus, Sense};
use crate::data::{support_of, Dataset, QuantileLevel};
use crate::error::{Error, Result};
use crate::loss::empirical_risk;
use crate::prox::FitResult;

/// Options for the l1-penalised fit.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct L1Options {
    /// Leave the all-ones column (if present) out of the penalty.
    pub penalize_intercept: bool,
    /// Weight each coefficient by `sqrt(mean x_ij^2)`.
    pub standardize: bool,
    /// Box half-width on every coefficient.
    pub bound: Option<f64>,
}

impl Default for L1Options {
    fn default() -> Self {
        Self { penalize_intercept: false, standardize: true, bound: Some(10.0) }
    }
}

/// Unrestricted quantile regression on the columns in `support`; zeros elsewhere.
pub fn qr_fit(d: &Dataset, support: &[usize], tau: QuantileLevel) -> Result<Vec<f64>> {
    qr_fit_boxed(d, support, tau, None)
}

/// Quantile regression on `support` with optional `|theta_j| <= bound`.
pub fn qr_fit_boxed(d: &Dataset, support: &[usize], tau: QuantileLevel, bound: Option<f64>) -> Result<Vec<f64>> {
    let p = d.p();
    if support.is_empty() {
        return Err(Error::invalid("qr_fit needs a nonempty support"));
    }
    if let Some(&bad) = support.iter().find(|&&j| j >= p) {
        return Err(Error::invalid(format!("support index {bad} out of range for p = {p}")));
    }
    // A box keeps the LP bounded even for collinear columns.
    if bound.is_none() && !full_column_rank(d, support) {
        return Err(Error::RankDeficient { support: support.to_vec() });
    }
    let n = d.n();
    let k = support.len();
    let nvars = k + 2 * n;
    let t = tau.value();
    let mut cost = vec![0.0; nvars];
    for i in 0..n {
        cost[k + i] = t / n as f64;
        cost[k + n + i] = (1.0 - t) / n as f64;
    }
    let mut lp = LinearProgram::new(cost);
    for v in 0..k {
        match bound {
            Some(b) => lp.set_bounds(v, -b, b),
            None => lp.set_bounds(v, f64::NEG_INFINITY, f64::INFINITY),
        }
    }
    let x = d.x();
    let mut row = vec![0.0; nvars];
    for i in 0..n {
        row.iter_mut().for_each(|v| *v = 0.0);
        for (v, &j) in support.iter().enumerate() {
            row[v] = x[[i, j]];
        }
        row[k + i] = 1.0;
        row[k + n + i] = -1.0;
        lp.add_row(&row, Sense::Eq, d.y()[i]);
    }
    let sol = solve_lp(&lp, LpLimits::default());
    if sol.status != LpStatus::Optimal {
        return Err(Error::Lp(sol.status));
    }
    let mut theta = vec![0.0; p];
    for (v, &j) in support.iter().enumerate() {
        theta[j] = sol.x[v];
    }
    Ok(theta)
}

/// Column scales `sqrt(mean_i x_ij^2)`.
pub(crate) fn column_scales(d: &Dataset) -> Vec<f64> {
    let n = d.n() as f64;
    d.x().columns().into_iter().map(|c| (c.iter().map(|v| v * v).sum::<f64>() / n).sqrt()).collect()
}

/// l1-penalised quantile regression
/// `min S(theta) + (lambda / n) sum_j sigma_j |theta_j|` solved as one LP.
///
/// `obj_penalized` in the result holds this l1-penalised value.
pub fn l1_pqr_fit(d: &Dataset, tau: QuantileLevel, lambda: f64, opts: L1Options) -> Result<FitResult> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("l1 penalty must be nonnegative, got {lambda}")));
    }
    let start = Instant::now();
    let (n, p) = (d.n(), d.p());
    let weights = penalty_weights(d, opts);
    let nvars = 2 * p + 2 * n;
    let t = tau.value();
    let nf = n as f64;
    let mut cost = vec![0.0; nvars];
    for j in 0..p {
        cost[j] = lambda * weights[j] / nf;
        cost[p + j] = lambda * weights[j] / nf;
    }
    for i in 0..n {
        cost[2 * p + i] = t / nf;
        cost[2 * p + n + i] = (1.0 - t) / nf;
    }
    let mut lp = LinearProgram::new(cost);
    let ub = opts.bound.unwrap_or(f64::INFINITY);
    for j in 0..2 * p {
        lp.set_bounds(j, 0.0, ub);
    }
    let x = d.x();
    let mut row = vec![0.0; nvars];
    for i in 0..n {
        row.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..p {
            row[j] = x[[i, j]];
            row[p + j] = -x[[i, j]];
        }
        row[2 * p + i] = 1.0;
        row[2 * p + n + i] = -1.0;
        lp.add_row(&row, Sense::Eq, d.y()[i]);
    }
    let sol = solve_lp(&lp, LpLimits::default());
    if sol.status != LpStatus::Optimal {
        return Err(Error::Lp(sol.status));
    }
    let theta: Vec<f64> = (0..p).map(|j| sol.x[j] - sol.x[p + j]).collect();
    let risk = empirical_risk(&theta, d, tau)?;
    let penalty: f64 = theta.iter().zip(&weights).map(|(v, w)| w * v.abs()).sum::<f64>() * lambda / nf;
    Ok(FitResult {
        support: support_of(&theta),
        theta,
        obj_unpenalized: risk,
        obj_penalized: risk + penalty,
        iterations: sol.pivots,
        converged: true,
        wall_seconds: start.elapsed().as_secs_f64(),
        gap: None,
    })
}

fn penalty_weights(d: &Dataset, opts: L1Options) -> Vec<f64> {
    let mut w = if opts.standardize { column_scales(d) } else { vec![1.0; d.p()] };
    if !opts.penalize_intercept {
        if let Some(j) = d.intercept_column() {
            w[j] = 0.0;
        }
    }
    w
}

/// Simulated `(1 - alpha)` quantile of the pivotal score statistic
/// `max_j |sum_i x~_ij (tau - 1{U_i <= tau})|`, `U_i` iid uniform and
/// `x~_ij = x_ij / sigma_j`, conditional on the design.
pub fn lambda_bc<R: Rng + ?Sized>(d: &Dataset, tau: QuantileLevel, alpha: f64, draws: usize, rng: &mut R) -> Result<f64> {
    if draws < 100 {
        return Err(Error::invalid(format!("need at least 100 draws, got {draws}")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let (n, p) = (d.n(), d.p());
    let scales = column_scales(d);
    let x = d.x();
    let mut xt = vec![0.0; n * p];
    for i in 0..n {
        for j in 0..p {
            xt[j * n + i] = if scales[j] > 0.0 { x[[i, j]] / scales[j] } else { 0.0 };
        }
    }
    let t = tau.value();
    let mut signs = vec![0.0; n];
    let mut stats = Vec::with_capacity(draws);
    for _ in 0..draws {
        for s in signs.iter_mut() {
            let u: f64 = rng.random();
            *s = if u <= t { t - 1.0 } else { t };
        }
        let mut best: f64 = 0.0;
        for j in 0..p {
            let col = &xt[j * n..(j + 1) * n];
            let v: f64 = col.iter().zip(&signs).map(|(a, b)| a * b).sum();
            best = best.max(v.abs());
        }
        stats.push(best);
    }
    stats.sort_by(|a, b| a.total_cmp(b));
    let rank = ((1.0 - alpha) * draws as f64).ceil() as usize;
    Ok(stats[rank.clamp(1, draws) - 1])
}

/// Modified Gram-Schmidt rank test on the restricted design.
pub(crate) fn full_column_rank(d: &Dataset, support: &[usize]) -> bool {
    let n = d.n();
    if support.len() > n {
        return false;
    }
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(support.len());
    for &j in support {
        let mut v: Vec<f64> = d.x().column(j).to_vec();
        let norm0 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm0 == 0.0 {
            return false;
        }
        for q in &basis {
            let proj: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= proj * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm <= 1e-10 * norm0 {
            return false;
        }
        v.iter_mut().for_each(|a| *a /= norm);
        basis.push(v);
    }
    true
}

//! Proximal first-order method for l0-penalised and l0-constrained quantile
//! regression.
//!
//! Each iteration takes a gradient step on the smoothed risk with step `1/l`
//! and then solves the l0-penalised, box- and cardinality-constrained
//! projection in closed form. Minimising the quadratic envelope
//! `S(t;d) + g'(theta - t) + (l/2)|theta - t|^2 + lambda |theta|_0`
//! is the same as minimising `|theta - c|^2 + (2 lambda / l) |theta|_0` with
//! `c = t - g / l`, which is why the threshold receives `2 lambda / l`.
//! With `l >= h` every step decreases `S(.;d) + lambda |.|_0`.

use std::cmp::Ordering;
use std::time::Instant;

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{support_of, Dataset, QuantileLevel};
use crate::error::{Error, Result};
use crate::loss::{empirical_risk, lipschitz_h, SmoothedLoss, SmoothingParams};
use crate::lp::{l1_pqr_fit, lambda_bc, qr_fit, L1Options};

/// Tuning and stopping parameters of the first-order solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxConfig {
    /// l0 penalty.
    pub lambda: f64,
    /// Cardinality cap; values above `p` act as `p`.
    pub k0: usize,
    /// Box half-width `B` of the parameter space `[-B, B]^p`.
    pub bound: f64,
    /// Target smoothing tolerance; the smoothing width is `2 eps / c_tau`.
    pub epsilon: f64,
    /// Envelope curvature as a multiple of the Lipschitz constant.
    pub l_factor: f64,
    pub max_iter: usize,
    /// Relative objective decrease below which iteration stops.
    pub conv_tol: f64,
    #[serde(default)]
    pub threshold: ThresholdScale,
}

/// Penalty handed to the thresholding step of [`h_map`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdScale {
    /// `2 lambda / l`: the exact minimiser of the quadratic envelope plus
    /// `lambda |theta|_0`, so every step decreases the penalised objective.
    #[default]
    Envelope,
    /// `lambda` itself. Prunes far more aggressively when `l` is large, but
    /// descent is only guaranteed for the penalty `l lambda / 2`.
    Direct,
}

impl Default for ProxConfig {
    fn default() -> Self {
        Self { lambda: 0.0, k0: 100, bound: 10.0, epsilon: 2e-4, l_factor: 2.0, max_iter: 1000, conv_tol: 1e-8, threshold: ThresholdScale::Envelope }
    }
}

impl ProxConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if !(self.bound > 0.0 && self.bound.is_finite()) {
            return Err(Error::invalid(format!("box half-width must be positive and finite, got {}", self.bound)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if !(self.l_factor >= 1.0) {
            return Err(Error::invalid(format!("l_factor must be >= 1, got {}", self.l_factor)));
        }
        if self.max_iter == 0 || !(self.conv_tol > 0.0) {
            return Err(Error::invalid("max_iter and conv_tol must be positive"));
        }
        Ok(())
    }
}

/// Output of any estimator in this crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta: Vec<f64>,
    /// Sorted indices of nonzero coefficients.
    pub support: Vec<usize>,
    /// `S_n(theta)`.
    pub obj_unpenalized: f64,
    /// `S_n(theta)` plus the estimator's penalty.
    pub obj_penalized: f64,
    pub iterations: usize,
    pub converged: bool,
    pub wall_seconds: f64,
    /// Optimality gap, reported by the exact solvers only.
    pub gap: Option<f64>,
}

impl FitResult {
    /// Scores `theta` under `S_n + lambda |theta|_0`.
    pub fn l0(theta: Vec<f64>, d: &Dataset, tau: QuantileLevel, lambda: f64) -> Result<Self> {
        let risk = empirical_risk(&theta, d, tau)?;
        let support = support_of(&theta);
        Ok(Self {
            obj_penalized: risk + lambda * support.len() as f64,
            obj_unpenalized: risk,
            support,
            theta,
            iterations: 0,
            converged: true,
            wall_seconds: 0.0,
            gap: None,
        })
    }
}

/// Minimiser of `|beta - t|^2 + lambda |beta|_0` over `[-B, B]^p` with at
/// most `k0` nonzeros.
///
/// Ties in `|t_j|` when trimming to `k0` go to the smaller index.
pub fn l0_box_threshold(t: &[f64], lambda: f64, bound: f64, k0: usize) -> Vec<f64> {
    let root = lambda.sqrt();
    let b2 = bound * bound;
    let mut beta: Vec<f64> = t
        .iter()
        .map(|&v| {
            if v > bound {
                if b2 - 2.0 * v * bound + lambda < 0.0 {
                    bound
                } else {
                    0.0
                }
            } else if v < -bound {
                if b2 + 2.0 * v * bound + lambda < 0.0 {
                    -bound
                } else {
                    0.0
                }
            } else if v.abs() > root {
                v
            } else {
                0.0
            }
        })
        .collect();
    let nnz = beta.iter().filter(|v| **v != 0.0).count();
    if nnz > k0 {
        let mut order: Vec<usize> = (0..t.len()).collect();
        order.sort_by(|&a, &b| t[b].abs().partial_cmp(&t[a].abs()).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
        for &j in &order[k0..] {
            beta[j] = 0.0;
        }
    }
    beta
}

/// One proximal step `H_{delta,l}(t)`.
pub fn h_map(t: &[f64], d: &Dataset, tau: QuantileLevel, delta: f64, l: f64, cfg: &ProxConfig) -> Result<Vec<f64>> {
    if !(l > 0.0) {
        return Err(Error::invalid(format!("envelope curvature must be positive, got {l}")));
    }
    d.check_dim(t)?;
    let loss = SmoothedLoss::new(d, tau, delta)?;
    let theta = Array1::from(t.to_vec());
    let (_, g) = loss.value_and_gradient(&theta);
    Ok(prox_step(&theta, &g, l, cfg, d.p()).to_vec())
}

fn prox_step(theta: &Array1<f64>, grad: &Array1<f64>, l: f64, cfg: &ProxConfig, p: usize) -> Array1<f64> {
    let center: Vec<f64> = theta.iter().zip(grad).map(|(t, g)| t - g / l).collect();
    let penalty = match cfg.threshold {
        ThresholdScale::Envelope => 2.0 * cfg.lambda / l,
        ThresholdScale::Direct => cfg.lambda,
    };
    Array1::from(l0_box_threshold(&center, penalty, cfg.bound, cfg.k0.min(p)))
}

/// Objective history of a first-order run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FoTrace {
    /// `Q(theta_m; delta)` for `m = 1..=N+1`.
    pub objectives: Vec<f64>,
    /// `|theta_{m+1} - theta_m|^2` for `m = 1..=N`.
    pub steps_sq: Vec<f64>,
    pub delta: f64,
    pub h: f64,
    pub l: f64,
}

impl FoTrace {
    /// Largest violation of `min_{m<=N} |step_m|^2 <= 2 (Q_1 - Q_{N+1}) / (N (l - h))`
    /// over all prefixes `N`; nonpositive when the rate bound holds everywhere.
    pub fn rate_bound_violation(&self) -> f64 {
        let q1 = self.objectives[0];
        let mut worst = f64::NEG_INFINITY;
        let mut min_step = f64::INFINITY;
        for (k, &s) in self.steps_sq.iter().enumerate() {
            min_step = min_step.min(s);
            let n = (k + 1) as f64;
            let bound = 2.0 * (q1 - self.objectives[k + 1]) / (n * (self.l - self.h));
            worst = worst.max(min_step - bound);
        }
        worst
    }

    /// Largest single-step increase of the smoothed objective.
    pub fn max_increase(&self) -> f64 {
        self.objectives.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Iterates `theta <- H(theta)` from `init` until the smoothed penalised
/// objective stops decreasing.
pub fn fo_solve(d: &Dataset, tau: QuantileLevel, cfg: &ProxConfig, init: &[f64]) -> Result<FitResult> {
    fo_solve_traced(d, tau, cfg, init).map(|(fit, _)| fit)
}

/// [`fo_solve`] that also returns the objective history.
pub fn fo_solve_traced(d: &Dataset, tau: QuantileLevel, cfg: &ProxConfig, init: &[f64]) -> Result<(FitResult, FoTrace)> {
    cfg.validate()?;
    d.check_dim(init)?;
    let start = Instant::now();
    let p = d.p();
    let smoothing = SmoothingParams::from_epsilon(cfg.epsilon, tau)?;
    let delta = smoothing.delta;
    let h = lipschitz_h(d, delta)?;
    let l = cfg.l_factor * h;
    let loss = SmoothedLoss::new(d, tau, delta)?;
    let k0 = cfg.k0.min(p);

    let penalised = |theta: &Array1<f64>, value: f64| value + cfg.lambda * theta.iter().filter(|v| **v != 0.0).count() as f64;

    let mut theta = Array1::from(l0_box_threshold(init, 0.0, cfg.bound, k0));
    let (v, mut grad) = loss.value_and_gradient(&theta);
    let mut q = penalised(&theta, v);
    if !q.is_finite() {
        return Err(Error::NonFiniteObjective { iteration: 0 });
    }
    let mut trace = FoTrace { objectives: vec![q], steps_sq: Vec::new(), delta, h, l };
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        let next = prox_step(&theta, &grad, l, cfg, p);
        iterations += 1;
        let (v, g) = loss.value_and_gradient(&next);
        let q_next = penalised(&next, v);
        if !q_next.is_finite() {
            return Err(Error::NonFiniteObjective { iteration: iterations });
        }
        let step: f64 = next.iter().zip(&theta).map(|(a, b)| (a - b) * (a - b)).sum();
        trace.objectives.push(q_next);
        trace.steps_sq.push(step);
        let decrease = q - q_next;
        theta = next;
        grad = g;
        q = q_next;
        if step == 0.0 || decrease < cfg.conv_tol * q.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    let mut fit = FitResult::l0(theta.to_vec(), d, tau, cfg.lambda)?;
    fit.iterations = iterations;
    fit.converged = converged;
    fit.wall_seconds = start.elapsed().as_secs_f64();
    Ok((fit, trace))
}

/// l0-constrained variant: keep the `q` largest entries of each gradient
/// step, clamped to the box, with no penalty.
pub fn fo_cqr(d: &Dataset, tau: QuantileLevel, q: usize, cfg: &ProxConfig, init: &[f64]) -> Result<FitResult> {
    if q > d.p() {
        return Err(Error::invalid(format!("sparsity level {q} exceeds p = {}", d.p())));
    }
    let constrained = ProxConfig { lambda: 0.0, k0: q, ..*cfg };
    fo_solve(d, tau, &constrained, init)
}

/// Settings of the restart scheme around [`fo_solve`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiStart {
    /// Number of restarts `T`.
    pub restarts: usize,
    /// Options of the l1 fit used as the first guess.
    pub l1: L1Options,
    /// Level of the simulated penalty quantile.
    pub alpha: f64,
    /// Monte Carlo draws for the penalty quantile.
    pub draws: usize,
}

impl Default for MultiStart {
    fn default() -> Self {
        Self { restarts: 50, l1: L1Options::default(), alpha: 0.1, draws: 1000 }
    }
}

/// Restarted first-order solver.
///
/// Restart 1 starts from the l1-penalised fit with penalty `c * Lambda(1 - alpha | X)`;
/// restart `t >= 2` starts from the quantile regression refit on the support
/// selected by restart `t - 1`. Returns the restart with the smallest
/// penalised objective (earliest on ties).
pub fn multi_start_fo(d: &Dataset, tau: QuantileLevel, cfg: &ProxConfig, restarts: usize, c: f64, seed: u64) -> Result<FitResult> {
    let ms = MultiStart { restarts, ..MultiStart::default() };
    let scale = lambda_bc(d, tau, ms.alpha, ms.draws, &mut ChaCha8Rng::seed_from_u64(seed))?;
    multi_start_fo_scaled(d, tau, cfg, &ms, c * scale)
}

/// [`multi_start_fo`] with the l1 penalty value supplied directly.
pub fn multi_start_fo_scaled(d: &Dataset, tau: QuantileLevel, cfg: &ProxConfig, ms: &MultiStart, l1_penalty: f64) -> Result<FitResult> {
    let warm = l1_pqr_fit(d, tau, l1_penalty, ms.l1)?;
    multi_start_from(d, tau, cfg, ms.restarts, warm.theta)
}

/// Restart loop from an arbitrary first guess.
pub fn multi_start_from(d: &Dataset, tau: QuantileLevel, cfg: &ProxConfig, restarts: usize, first: Vec<f64>) -> Result<FitResult> {
    if restarts == 0 {
        return Err(Error::invalid("need at least one restart"));
    }
    let start = Instant::now();
    let mut init = first;
    let mut refit_support: Option<Vec<usize>> = None;
    let mut best: Option<FitResult> = None;
    let mut total_iter = 0;
    for t in 1..=restarts {
        let fit = fo_solve(d, tau, cfg, &init)?;
        total_iter += fit.iterations;
        let support = fit.support.clone();
        if best.as_ref().is_none_or(|b| fit.obj_penalized < b.obj_penalized) {
            best = Some(fit);
        }
        if t == restarts {
            break;
        }
        // The next guess would repeat this restart exactly.
        if refit_support.as_ref() == Some(&support) {
            break;
        }
        match refit(d, tau, &support) {
            Ok(next) => init = next,
            Err(e) => {
                log::debug!("restart {t}: refit on {support:?} failed ({e}); stopping");
                break;
            }
        }
        refit_support = Some(support);
    }
    let mut best = best.expect("at least one restart ran");
    best.iterations = total_iter;
    best.wall_seconds = start.elapsed().as_secs_f64();
    Ok(best)
}

/// Quantile regression refit on `support`; the empty support gives zero,
/// or an intercept-only fit when the design has an all-ones column.
pub(crate) fn refit(d: &Dataset, tau: QuantileLevel, support: &[usize]) -> Result<Vec<f64>> {
    if support.is_empty() {
        return match d.intercept_column() {
            Some(j) => qr_fit(d, &[j], tau),
            None => Ok(vec![0.0; d.p()]),
        };
    }
    qr_fit(d, support, tau)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_interior_kill() {
        let out = l0_box_threshold(&[0.1, 0.3, -0.5], 0.04, 10.0, 3);
        assert_eq!(out, vec![0.0, 0.3, -0.5]);
    }

    #[test]
    fn threshold_upper_branch() {
        assert_eq!(l0_box_threshold(&[12.0], 50.0, 10.0, 1), vec![10.0]);
        assert_eq!(l0_box_threshold(&[12.0], 200.0, 10.0, 1), vec![0.0]);
        assert_eq!(l0_box_threshold(&[-12.0], 50.0, 10.0, 1), vec![-10.0]);
    }

    #[test]
    fn threshold_boundary_and_ties() {
        // |t| == sqrt(lambda) is killed
        assert_eq!(l0_box_threshold(&[0.5], 0.25, 10.0, 1), vec![0.0]);
        // equal magnitudes: smaller index wins
        assert_eq!(l0_box_threshold(&[1.0, -1.0, 1.0], 0.0, 10.0, 2), vec![1.0, -1.0, 0.0]);
        assert_eq!(l0_box_threshold(&[1.0, 2.0], 0.0, 10.0, 0), vec![0.0, 0.0]);
    }

    #[test]
    fn config_validation() {
        assert!(ProxConfig::default().validate().is_ok());
        assert!(ProxConfig { l_factor: 0.5, ..Default::default() }.validate().is_err());
        assert!(ProxConfig { bound: f64::INFINITY, ..Default::default() }.validate().is_err());
        assert!(ProxConfig { lambda: -1.0, ..Default::default() }.validate().is_err());
    }
}

//! Check loss, its empirical risk, and the smoothed surrogate used by the
//! first-order solvers.
//!
//! The empirical risk `S(theta) = mean rho(y_i, x_i' theta)` can be written as
//! a maximum over dual weights `w_i in [tau - 1, tau]` of `mean w_i u_i` with
//! `u_i = y_i - x_i' theta`. Subtracting `(delta / 2) |w|^2` inside that maximum
//! gives a differentiable surrogate whose per-observation maximiser is
//! `clamp(u_i / delta, tau - 1, tau)`. The surrogate undershoots the risk by at
//! most `delta * c_tau / 2`, and its gradient is Lipschitz with constant
//! `trace(X'X) / (n delta)`.

use ndarray::{Array1, ArrayView1};

use crate::data::{Dataset, QuantileLevel};
use crate::error::{Error, Result};

/// Smoothing width together with the tolerance it was derived from.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SmoothingParams {
    pub delta: f64,
    pub c_tau: f64,
    pub epsilon: f64,
}

impl SmoothingParams {
    /// `delta = 2 epsilon / c_tau`, so the smoothing gap is at most `epsilon`.
    pub fn from_epsilon(epsilon: f64, tau: QuantileLevel) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid(format!("smoothing tolerance must be positive, got {epsilon}")));
        }
        let c_tau = tau.c_tau();
        Ok(Self { delta: 2.0 * epsilon / c_tau, c_tau, epsilon })
    }

    /// Upper bound on `S(theta) - S(theta; delta)`.
    pub fn gap_bound(&self) -> f64 {
        self.delta * self.c_tau / 2.0
    }
}

/// `rho(t, u) = (t - u) (tau - 1{t <= u})`.
#[inline]
pub fn check_loss(t: f64, u: f64, tau: QuantileLevel) -> f64 {
    let r = t - u;
    if r > 0.0 {
        r * tau.value()
    } else {
        r * (tau.value() - 1.0)
    }
}

/// Check loss of a residual `u = y - fitted`.
#[inline]
pub(crate) fn residual_loss(u: f64, tau: f64) -> f64 {
    if u > 0.0 {
        u * tau
    } else {
        u * (tau - 1.0)
    }
}

/// Maximiser of `w u - (delta/2) w^2` over `[tau - 1, tau]`.
#[inline]
pub(crate) fn dual_weight(u: f64, tau: f64, delta: f64) -> f64 {
    (u / delta).clamp(tau - 1.0, tau)
}

pub(crate) fn risk_of_residuals(res: ArrayView1<'_, f64>, tau: f64) -> f64 {
    res.iter().map(|&u| residual_loss(u, tau)).sum::<f64>() / res.len() as f64
}

pub(crate) fn smoothed_of_residuals(res: ArrayView1<'_, f64>, tau: f64, delta: f64) -> f64 {
    if delta == 0.0 {
        return risk_of_residuals(res, tau);
    }
    let total: f64 = res
        .iter()
        .map(|&u| {
            let w = dual_weight(u, tau, delta);
            w * u - 0.5 * delta * w * w
        })
        .sum();
    total / res.len() as f64
}

/// Mean check loss of the residuals `y - X theta`.
pub fn empirical_risk(theta: &[f64], d: &Dataset, tau: QuantileLevel) -> Result<f64> {
    let res = d.residuals(theta)?;
    Ok(risk_of_residuals(res.view(), tau.value()))
}

/// Smoothed risk `S(theta; delta)`. `delta = 0` returns the exact risk.
pub fn smoothed_risk(theta: &[f64], d: &Dataset, tau: QuantileLevel, delta: f64) -> Result<f64> {
    check_delta(delta, false)?;
    let res = d.residuals(theta)?;
    Ok(smoothed_of_residuals(res.view(), tau.value(), delta))
}

/// Gradient `-(1/n) sum_i x_i w_i*` of the smoothed risk.
pub fn smoothed_gradient(theta: &[f64], d: &Dataset, tau: QuantileLevel, delta: f64) -> Result<Vec<f64>> {
    check_delta(delta, true)?;
    let res = d.residuals(theta)?;
    Ok(gradient_of_residuals(d, res.view(), tau.value(), delta).to_vec())
}

pub(crate) fn gradient_of_residuals(d: &Dataset, res: ArrayView1<'_, f64>, tau: f64, delta: f64) -> Array1<f64> {
    let w: Array1<f64> = res.mapv(|u| dual_weight(u, tau, delta));
    let mut g = d.x().t().dot(&w);
    g.mapv_inplace(|v| -v / d.n() as f64);
    g
}

/// Lipschitz constant `trace(sum_i x_i x_i') / (n delta)` of the smoothed gradient.
pub fn lipschitz_h(d: &Dataset, delta: f64) -> Result<f64> {
    check_delta(delta, true)?;
    let trace: f64 = d.x().iter().map(|v| v * v).sum();
    Ok(trace / (d.n() as f64 * delta))
}

fn check_delta(delta: f64, strictly_positive: bool) -> Result<()> {
    let ok = delta.is_finite() && if strictly_positive { delta > 0.0 } else { delta >= 0.0 };
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!("invalid smoothing width {delta}")))
    }
}

/// Value and gradient of the smoothed risk evaluated together.
#[derive(Debug, Clone, Copy)]
pub struct SmoothedLoss<'a> {
    pub data: &'a Dataset,
    pub tau: f64,
    pub delta: f64,
}

impl<'a> SmoothedLoss<'a> {
    pub fn new(data: &'a Dataset, tau: QuantileLevel, delta: f64) -> Result<Self> {
        check_delta(delta, true)?;
        Ok(Self { data, tau: tau.value(), delta })
    }

    pub fn residuals(&self, theta: &Array1<f64>) -> Array1<f64> {
        self.data.y() - &self.data.x().dot(theta)
    }

    pub fn value(&self, theta: &Array1<f64>) -> f64 {
        smoothed_of_residuals(self.residuals(theta).view(), self.tau, self.delta)
    }

    pub fn value_and_gradient(&self, theta: &Array1<f64>) -> (f64, Array1<f64>) {
        let res = self.residuals(theta);
        let v = smoothed_of_residuals(res.view(), self.tau, self.delta);
        (v, gradient_of_residuals(self.data, res.view(), self.tau, self.delta))
    }

    /// Exact (unsmoothed) risk at `theta`.
    pub fn exact(&self, theta: &Array1<f64>) -> f64 {
        risk_of_residuals(self.residuals(theta).view(), self.tau)
    }
}

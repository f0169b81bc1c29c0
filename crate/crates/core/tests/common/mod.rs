#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, StudentT};
use sparse_quantile::Dataset;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Intercept plus `p - 1` standard normal columns; `y` depends on the first
/// `active` covariates with heavy-tailed noise.
pub fn sparse_data(n: usize, p: usize, active: usize, rng: &mut impl Rng) -> Dataset {
    let mut x = Array2::<f64>::zeros((n, p));
    let t = StudentT::new(3.0).unwrap();
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        x[[i, 0]] = 1.0;
        for j in 1..p {
            x[[i, j]] = rng.sample(StandardNormal);
        }
        let mut m = 0.5;
        for j in 1..=active.min(p - 1) {
            m += if j % 2 == 0 { -1.0 } else { 1.0 } * x[[i, j]];
        }
        let e: f64 = rng.sample(t);
        y[i] = m + 0.5 * e;
    }
    Dataset::from_arrays(x, y).unwrap()
}

/// Dense Gaussian design without an intercept.
pub fn dense_data(n: usize, p: usize, rng: &mut impl Rng) -> Dataset {
    let x = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal));
    let y = Array1::from_shape_fn(n, |_| 3.0 * rng.sample::<f64, _>(StandardNormal));
    Dataset::from_arrays(x, y).unwrap()
}

pub fn random_theta(p: usize, scale: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..p).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Check loss of a residual, written out independently of the library.
pub fn rho(u: f64, tau: f64) -> f64 {
    if u >= 0.0 {
        tau * u
    } else {
        (tau - 1.0) * u
    }
}

/// Mean check loss by explicit loops.
pub fn naive_risk(theta: &[f64], d: &Dataset, tau: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..d.n() {
        let mut fit = 0.0;
        for j in 0..d.p() {
            fit += d.x()[[i, j]] * theta[j];
        }
        total += rho(d.y()[i] - fit, tau);
    }
    total / d.n() as f64
}

/// Smoothed loss of one residual in its piecewise (Huber-type) form.
pub fn smoothed_rho(u: f64, tau: f64, delta: f64) -> f64 {
    if u > tau * delta {
        tau * u - delta * tau * tau / 2.0
    } else if u < (tau - 1.0) * delta {
        (tau - 1.0) * u - delta * (tau - 1.0) * (tau - 1.0) / 2.0
    } else {
        u * u / (2.0 * delta)
    }
}

pub fn naive_smoothed(theta: &[f64], d: &Dataset, tau: f64, delta: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..d.n() {
        let fit: f64 = (0..d.p()).map(|j| d.x()[[i, j]] * theta[j]).sum();
        total += smoothed_rho(d.y()[i] - fit, tau, delta);
    }
    total / d.n() as f64
}

pub fn nnz(theta: &[f64]) -> usize {
    theta.iter().filter(|v| **v != 0.0).count()
}

//! Observations and the small value types shared by every estimator.

use std::collections::HashSet;

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

/// A design matrix with its response and column labels.
///
/// Rows are observations, column `j` is covariate `j`. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    y: Array1<f64>,
    names: Vec<String>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Array1<f64>, names: Vec<String>) -> Result<Self> {
        let (n, p) = x.dim();
        if n == 0 || p == 0 {
            return Err(Error::invalid(format!("dataset needs n >= 1 and p >= 1, got {n}x{p}")));
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: y.len() });
        }
        if names.len() != p {
            return Err(Error::DimensionMismatch { expected: p, got: names.len() });
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset contains non-finite values"));
        }
        let mut seen = HashSet::with_capacity(p);
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::invalid(format!("duplicate column name {name:?}")));
            }
        }
        Ok(Self { x, y, names })
    }

    /// Builds a dataset with generated names `x1..xp`.
    pub fn from_arrays(x: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        Self::new(x, y, names)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn y(&self) -> &Array1<f64> {
        &self.y
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.x.row(i)
    }

    /// Index of the first column that is identically one, if any.
    pub fn intercept_column(&self) -> Option<usize> {
        (0..self.p()).find(|&j| self.x.column(j).iter().all(|&v| v == 1.0))
    }

    /// Rows `idx` in the given order.
    pub fn subset_rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), idx),
            y: self.y.select(Axis(0), idx),
            names: self.names.clone(),
        }
    }

    /// Residuals `y - X theta`.
    pub fn residuals(&self, theta: &[f64]) -> Result<Array1<f64>> {
        self.check_dim(theta)?;
        let t = ArrayView1::from(theta);
        Ok(&self.y - &self.x.dot(&t))
    }

    /// Fitted values `X theta`.
    pub fn predict(&self, theta: &[f64]) -> Result<Array1<f64>> {
        self.check_dim(theta)?;
        Ok(self.x.dot(&ArrayView1::from(theta)))
    }

    pub(crate) fn check_dim(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.p() {
            return Err(Error::DimensionMismatch { expected: self.p(), got: theta.len() });
        }
        Ok(())
    }
}

/// A quantile level strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau < 1.0 {
            Ok(Self(tau))
        } else {
            Err(Error::InvalidQuantile(tau))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `max(tau^2, (1 - tau)^2)`, the constant in the smoothing gap bound.
    pub fn c_tau(self) -> f64 {
        let t = self.0;
        (t * t).max((1.0 - t) * (1.0 - t))
    }
}

impl TryFrom<f64> for QuantileLevel {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<QuantileLevel> for f64 {
    fn from(q: QuantileLevel) -> f64 {
        q.0
    }
}

/// Number of entries with nonzero value.
pub fn l0_norm(theta: &[f64]) -> usize {
    theta.iter().filter(|v| **v != 0.0).count()
}

/// Sorted indices of nonzero entries.
pub fn support_of(theta: &[f64]) -> Vec<usize> {
    theta.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, _)| j).collect()
}

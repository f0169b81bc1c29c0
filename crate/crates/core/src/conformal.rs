//! Split conformalised quantile regression.
//!
//! Lower and upper quantile fits at levels `alpha/2` and `1 - alpha/2` come
//! from a training sample. Conformity scores
//! `E_i = max(x_i' theta_lo - y_i, y_i - x_i' theta_hi)` on a separate
//! calibration sample give a correction that widens (or narrows) the band so
//! that coverage is at least `1 - alpha` under exchangeability.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::{Dataset, QuantileLevel};
use crate::error::{Error, Result};
use crate::prox::FitResult;
use crate::select::{default_grid, tune, Estimator, Fitter};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalModel {
    pub alpha: f64,
    pub theta_lo: Vec<f64>,
    pub theta_hi: Vec<f64>,
    pub scores: Vec<f64>,
    /// Serialised as `null` when infinite.
    #[serde(serialize_with = "ser_extended", deserialize_with = "de_extended")]
    pub correction: f64,
}

fn ser_extended<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_some(v)
    } else {
        s.serialize_none()
    }
}

fn de_extended<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionInterval {
    pub lower: f64,
    pub upper: f64,
}

impl PredictionInterval {
    pub fn contains(&self, y: f64) -> bool {
        self.lower <= y && y <= self.upper
    }

    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }
}

/// The `ceil(level * m)`-th smallest score, or `+inf` when that rank exceeds `m`.
///
/// `level * m` within `1e-9` of an integer is treated as that integer so that
/// levels like `0.9 * (10 / 9)` land on the intended rank.
pub fn empirical_quantile(scores: &[f64], level: f64) -> f64 {
    let m = scores.len();
    assert!(m > 0, "empirical quantile of an empty sample");
    let x = level * m as f64;
    let rank = if (x - x.round()).abs() < 1e-9 { x.round() } else { x.ceil() };
    if rank > m as f64 {
        return f64::INFINITY;
    }
    let k = (rank.max(1.0) as usize) - 1;
    let mut sorted = scores.to_vec();
    let (_, kth, _) = sorted.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
    *kth
}

/// Fits both quantiles on `train` with `fitter` and calibrates on `calib`.
pub fn fit_conformal<F>(train: &Dataset, calib: &Dataset, alpha: f64, fitter: F) -> Result<ConformalModel>
where
    F: Fn(&Dataset, QuantileLevel) -> Result<FitResult>,
{
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::invalid(format!("miscoverage must lie in (0, 0.5), got {alpha}")));
    }
    if train.p() != calib.p() {
        return Err(Error::DimensionMismatch { expected: train.p(), got: calib.p() });
    }
    let lo = fitter(train, QuantileLevel::new(alpha / 2.0)?)?;
    let hi = fitter(train, QuantileLevel::new(1.0 - alpha / 2.0)?)?;
    calibrate(alpha, lo.theta, hi.theta, calib)
}

/// Scores and correction for given quantile coefficients.
pub fn calibrate(alpha: f64, theta_lo: Vec<f64>, theta_hi: Vec<f64>, calib: &Dataset) -> Result<ConformalModel> {
    let lo = calib.predict(&theta_lo)?;
    let hi = calib.predict(&theta_hi)?;
    let scores: Vec<f64> = (0..calib.n()).map(|i| (lo[i] - calib.y()[i]).max(calib.y()[i] - hi[i])).collect();
    let m = scores.len() as f64;
    let correction = empirical_quantile(&scores, (1.0 - alpha) * (1.0 + 1.0 / m));
    Ok(ConformalModel { alpha, theta_lo, theta_hi, scores, correction })
}

impl ConformalModel {
    pub fn predict_interval(&self, x_new: &[f64]) -> Result<PredictionInterval> {
        let p = self.theta_lo.len();
        if x_new.len() != p {
            return Err(Error::DimensionMismatch { expected: p, got: x_new.len() });
        }
        if self.correction == f64::INFINITY {
            return Ok(PredictionInterval { lower: f64::NEG_INFINITY, upper: f64::INFINITY });
        }
        let dot = |t: &[f64]| x_new.iter().zip(t).map(|(a, b)| a * b).sum::<f64>();
        Ok(PredictionInterval { lower: dot(&self.theta_lo) - self.correction, upper: dot(&self.theta_hi) + self.correction })
    }

    /// `true` where the lower quantile fit lies above the upper one.
    pub fn crosses(&self, x_new: &[f64]) -> bool {
        let dot = |t: &[f64]| x_new.iter().zip(t).map(|(a, b)| a * b).sum::<f64>();
        dot(&self.theta_lo) > dot(&self.theta_hi)
    }

    pub fn intervals(&self, test: &Dataset) -> Result<Vec<PredictionInterval>> {
        (0..test.n()).map(|i| self.predict_interval(test.row(i).as_slice().expect("rows are contiguous"))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub n: usize,
    pub coverage: f64,
    /// Mean over the finite intervals; NaN when there are none.
    pub mean_length: f64,
    pub infinite: usize,
    /// Test points where the quantile fits cross.
    pub crossings: usize,
}

pub fn evaluate_coverage(model: &ConformalModel, test: &Dataset) -> Result<Coverage> {
    if test.n() == 0 {
        return Err(Error::invalid("empty test sample"));
    }
    let intervals = model.intervals(test)?;
    let covered = intervals.iter().zip(test.y()).filter(|(iv, y)| iv.contains(**y)).count();
    let finite: Vec<f64> = intervals.iter().map(|iv| iv.length()).filter(|l| l.is_finite()).collect();
    let crossings = (0..test.n()).filter(|&i| model.crosses(test.row(i).as_slice().unwrap())).count();
    Ok(Coverage {
        n: test.n(),
        coverage: covered as f64 / test.n() as f64,
        mean_length: if finite.is_empty() { f64::NAN } else { finite.iter().sum::<f64>() / finite.len() as f64 },
        infinite: intervals.len() - finite.len(),
        crossings,
    })
}

/// Rows `lower,upper,covered`.
pub fn write_intervals_csv<W: Write>(model: &ConformalModel, test: &Dataset, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["lower", "upper", "covered"]).map_err(|e| Error::Parse(e.to_string()))?;
    for (iv, y) in model.intervals(test)?.iter().zip(test.y()) {
        out.write_record([iv.lower.to_string(), iv.upper.to_string(), (iv.contains(*y) as u8).to_string()])
            .map_err(|e| Error::Parse(e.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

/// Shuffles `0..n` into four parts of sizes differing by at most one; the
/// first `n mod 4` parts get the extra element.
pub fn split_four<R: Rng + ?Sized>(n: usize, rng: &mut R) -> [Vec<usize>; 4] {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let base = n / 4;
    let extra = n % 4;
    let mut parts: [Vec<usize>; 4] = Default::default();
    let mut at = 0;
    for (k, part) in parts.iter_mut().enumerate() {
        let len = base + usize::from(k < extra);
        *part = idx[at..at + len].to_vec();
        at += len;
    }
    parts
}

/// Result of one random four-way split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitOutcome {
    pub model: ConformalModel,
    pub coverage: Coverage,
    /// Tuning values selected for the lower and upper quantile.
    pub candidates: [f64; 2],
    pub sizes: [usize; 4],
}

/// Splits `data` into training, calibration, validation and test parts,
/// tunes each quantile fit on training against validation, calibrates, and
/// scores coverage on the test part.
pub fn run_split<R: Rng + ?Sized>(data: &Dataset, est: &Estimator, alpha: f64, rng: &mut R) -> Result<SplitOutcome> {
    let parts = split_four(data.n(), rng);
    if parts.iter().any(Vec::is_empty) {
        return Err(Error::invalid(format!("{} rows cannot fill four parts", data.n())));
    }
    let [train, calib, valid, test] = parts.map(|idx| data.subset_rows(&idx));
    let grid = default_grid(est.kind(), data.p(), est.prox.k0);
    let chosen = std::cell::RefCell::new(Vec::new());
    let model = fit_conformal(&train, &calib, alpha, |d, tau| {
        let sel = tune(est, &grid, d, &valid, tau)?;
        chosen.borrow_mut().push(sel.candidate);
        Ok(sel.fit)
    })?;
    let coverage = evaluate_coverage(&model, &test)?;
    let chosen = chosen.into_inner();
    Ok(SplitOutcome {
        model,
        coverage,
        candidates: [chosen[0], chosen[1]],
        sizes: [train.n(), calib.n(), valid.n(), test.n()],
    })
}

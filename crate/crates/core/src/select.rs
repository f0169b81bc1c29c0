//! Tuning grids and validation-based selection.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, QuantileLevel};
use crate::error::{Error, Result};
use crate::loss::empirical_risk;
use crate::lp::{l1_pqr_fit, lambda_bc};
use crate::mio::{build_milp, count_supports, solve_bnb, solve_cqr_exact, BnbOptions, EnumOptions};
use crate::prox::{multi_start_fo_scaled, multi_start_from, FitResult, MultiStart, ProxConfig};

/// Family of estimator a grid belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    L0Pqr,
    L0Cqr,
    L1Pqr,
}

/// Estimator and solver. Serialised under the same names the CLI accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// l0-penalised, first-order solver with restarts.
    #[serde(rename = "l0pqr")]
    L0PqrFo,
    /// l0-penalised, branch-and-bound warm-started by the first-order solver.
    #[serde(rename = "l0pqr-mio")]
    L0PqrMio,
    /// l0-constrained, first-order solver with restarts.
    #[serde(rename = "l0cqr")]
    L0CqrFo,
    /// l0-constrained, exact.
    #[serde(rename = "l0cqr-mio")]
    L0CqrMio,
    /// Weighted l1-penalised fit.
    #[serde(rename = "l1pqr")]
    L1Pqr,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::L0PqrFo, Method::L0PqrMio, Method::L0CqrFo, Method::L0CqrMio, Method::L1Pqr];

    pub fn kind(self) -> GridKind {
        match self {
            Method::L0PqrFo | Method::L0PqrMio => GridKind::L0Pqr,
            Method::L0CqrFo | Method::L0CqrMio => GridKind::L0Cqr,
            Method::L1Pqr => GridKind::L1Pqr,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::L0PqrFo => "l0pqr",
            Method::L0PqrMio => "l0pqr-mio",
            Method::L0CqrFo => "l0cqr",
            Method::L0CqrMio => "l0cqr-mio",
            Method::L1Pqr => "l1pqr",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        match norm.as_str() {
            "l0pqr" | "l0pqr-fo" => Ok(Method::L0PqrFo),
            "l0pqr-mio" => Ok(Method::L0PqrMio),
            "l0cqr" | "l0cqr-fo" => Ok(Method::L0CqrFo),
            "l0cqr-mio" => Ok(Method::L0CqrMio),
            "l1pqr" => Ok(Method::L1Pqr),
            _ => Err(Error::Parse(format!("unknown method '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningGrid {
    pub kind: GridKind,
    pub candidates: Vec<f64>,
    pub include_zero: bool,
}

impl TuningGrid {
    /// Validates and, with `include_zero`, prepends 0 unless already present.
    pub fn new(kind: GridKind, mut candidates: Vec<f64>, include_zero: bool) -> Result<Self> {
        if include_zero && candidates.first() != Some(&0.0) {
            candidates.insert(0, 0.0);
        }
        if candidates.is_empty() {
            return Err(Error::invalid("tuning grid is empty"));
        }
        if candidates.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::invalid("tuning candidates must be finite and nonnegative"));
        }
        if candidates.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("tuning candidates must be sorted ascending"));
        }
        if kind == GridKind::L0Cqr && candidates.iter().any(|c| c.fract() != 0.0) {
            return Err(Error::invalid("sparsity levels must be integers"));
        }
        Ok(Self { kind, candidates, include_zero })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Standard grids: `c in {0.1, ..., 2.0}` for penalised fits, with 0 added
/// when `p < k0` (l0) or `p < 100` (l1); `q in {1, ..., min(p, 25)}` otherwise.
pub fn default_grid(kind: GridKind, p: usize, k0: usize) -> TuningGrid {
    let c_grid: Vec<f64> = (1..=20).map(|i| i as f64 / 10.0).collect();
    let (candidates, include_zero) = match kind {
        GridKind::L0Pqr => (c_grid, p < k0),
        GridKind::L1Pqr => (c_grid, p < 100),
        GridKind::L0Cqr => ((1..=p.min(25)).map(|q| q as f64).collect(), false),
    };
    TuningGrid::new(kind, candidates, include_zero).expect("default grid is well formed")
}

/// `lambda = c * mean|y| * ln(p) / n`.
pub fn lambda_from_c(c: f64, d: &Dataset) -> f64 {
    let mean_abs = d.y().iter().map(|v| v.abs()).sum::<f64>() / d.n() as f64;
    c * mean_abs * (d.p() as f64).ln() / d.n() as f64
}

/// Fits one tuning candidate on a training sample.
pub trait Fitter: Sync {
    fn kind(&self) -> GridKind;
    fn fit(&self, train: &Dataset, tau: QuantileLevel, candidate: f64) -> Result<FitResult>;
}

/// Configured estimator; the candidate is `c` for penalised methods and `q`
/// for constrained ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimator {
    pub method: Method,
    pub prox: ProxConfig,
    pub multi: MultiStart,
    /// Seed of the simulated l1 penalty level.
    pub seed: u64,
    pub time_limit_secs: f64,
    pub gap_tol: f64,
    /// Supports an exact constrained fit may enumerate before switching to
    /// branch-and-bound.
    pub enumeration_cap: u128,
}

impl Estimator {
    pub fn new(method: Method) -> Self {
        let bnb = BnbOptions::default();
        Self {
            method,
            prox: ProxConfig::default(),
            multi: MultiStart::default(),
            seed: 0,
            time_limit_secs: bnb.time_limit.as_secs_f64(),
            gap_tol: bnb.gap_tol,
            enumeration_cap: EnumOptions::default().cap,
        }
    }

    fn bnb(&self) -> BnbOptions {
        BnbOptions { time_limit: std::time::Duration::from_secs_f64(self.time_limit_secs), gap_tol: self.gap_tol }
    }

    fn l1_scale(&self, d: &Dataset, tau: QuantileLevel) -> Result<f64> {
        lambda_bc(d, tau, self.multi.alpha, self.multi.draws, &mut ChaCha8Rng::seed_from_u64(self.seed))
    }

    /// Restart scheme for the constrained problem, seeded by the l1 fit at `c = 1`.
    fn cqr_first_order(&self, d: &Dataset, tau: QuantileLevel, q: usize) -> Result<FitResult> {
        let scale = self.l1_scale(d, tau)?;
        let first = l1_pqr_fit(d, tau, scale, self.multi.l1)?;
        let cfg = ProxConfig { lambda: 0.0, k0: q, ..self.prox };
        multi_start_from(d, tau, &cfg, self.multi.restarts, first.theta)
    }

    fn pqr_first_order(&self, d: &Dataset, tau: QuantileLevel, c: f64) -> Result<FitResult> {
        let cfg = ProxConfig { lambda: lambda_from_c(c, d), ..self.prox };
        let scale = self.l1_scale(d, tau)?;
        multi_start_fo_scaled(d, tau, &cfg, &self.multi, c * scale)
    }
}

impl Fitter for Estimator {
    fn kind(&self) -> GridKind {
        self.method.kind()
    }

    fn fit(&self, train: &Dataset, tau: QuantileLevel, candidate: f64) -> Result<FitResult> {
        match self.method {
            Method::L0PqrFo => self.pqr_first_order(train, tau, candidate),
            Method::L0PqrMio => {
                let warm = self.pqr_first_order(train, tau, candidate)?;
                let k0 = self.prox.k0.min(train.p());
                let model = build_milp(train, tau, lambda_from_c(candidate, train), k0, self.prox.bound)?;
                solve_bnb(&model, Some(&warm), self.bnb())
            }
            Method::L0CqrFo => self.cqr_first_order(train, tau, candidate_q(candidate, train)?),
            Method::L0CqrMio => {
                let q = candidate_q(candidate, train)?;
                if count_supports(train.p(), q) <= self.enumeration_cap {
                    solve_cqr_exact(train, tau, q)
                } else {
                    let warm = self.cqr_first_order(train, tau, q)?;
                    let model = build_milp(train, tau, 0.0, q, self.prox.bound)?;
                    solve_bnb(&model, Some(&warm), self.bnb())
                }
            }
            Method::L1Pqr => {
                let scale = self.l1_scale(train, tau)?;
                l1_pqr_fit(train, tau, candidate * scale, self.multi.l1)
            }
        }
    }
}

fn candidate_q(candidate: f64, d: &Dataset) -> Result<usize> {
    if candidate.fract() != 0.0 || candidate < 0.0 || candidate > d.p() as f64 {
        return Err(Error::invalid(format!("sparsity level {candidate} is not an integer in [0, {}]", d.p())));
    }
    Ok(candidate as usize)
}

/// Outcome of one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRow {
    pub candidate: f64,
    pub validation_risk: Option<f64>,
    pub sparsity: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RiskTable {
    pub rows: Vec<RiskRow>,
}

impl RiskTable {
    /// Columns `candidate,validation_risk,sparsity,error`; failed rows leave
    /// risk and sparsity empty.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["candidate", "validation_risk", "sparsity", "error"]).map_err(csv_err)?;
        for r in &self.rows {
            out.write_record([
                r.candidate.to_string(),
                r.validation_risk.map(|v| v.to_string()).unwrap_or_default(),
                r.sparsity.map(|v| v.to_string()).unwrap_or_default(),
                r.error.clone().unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub candidate: f64,
    pub index: usize,
    pub fit: FitResult,
    pub validation_risk: f64,
    pub table: RiskTable,
}

/// Fits every candidate on `train` and keeps the one with the smallest
/// validation risk; ties go to the sparser fit, then to the earlier candidate.
pub fn tune(fitter: &dyn Fitter, grid: &TuningGrid, train: &Dataset, valid: &Dataset, tau: QuantileLevel) -> Result<Selection> {
    tune_with_workers(fitter, grid, train, valid, tau, 1)
}

/// [`tune`] with grid points spread over `workers` threads. The result does
/// not depend on the worker count.
pub fn tune_with_workers(
    fitter: &dyn Fitter,
    grid: &TuningGrid,
    train: &Dataset,
    valid: &Dataset,
    tau: QuantileLevel,
    workers: usize,
) -> Result<Selection> {
    if train.p() != valid.p() {
        return Err(Error::DimensionMismatch { expected: train.p(), got: valid.p() });
    }
    if fitter.kind() != grid.kind {
        return Err(Error::invalid(format!("grid of kind {:?} given to a {:?} fitter", grid.kind, fitter.kind())));
    }
    let m = grid.candidates.len();
    let results: Vec<Mutex<Option<Result<FitResult>>>> = (0..m).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        if i >= m {
            break;
        }
        let r = fitter.fit(train, tau, grid.candidates[i]);
        *results[i].lock().unwrap() = Some(r);
    };
    let workers = workers.clamp(1, m);
    if workers == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(work);
            }
        });
    }

    let mut table = RiskTable::default();
    let mut best: Option<(usize, FitResult, f64)> = None;
    for (i, slot) in results.into_iter().enumerate() {
        let candidate = grid.candidates[i];
        let outcome = slot.into_inner().unwrap().expect("every grid point was visited");
        let scored = outcome.and_then(|fit| empirical_risk(&fit.theta, valid, tau).map(|r| (fit, r)));
        match scored {
            Ok((fit, risk)) => {
                table.rows.push(RiskRow { candidate, validation_risk: Some(risk), sparsity: Some(fit.support.len()), error: None });
                let better = match &best {
                    None => true,
                    Some((_, bf, br)) => {
                        let tol = 1e-12 * br.abs().max(1.0);
                        risk < br - tol || ((risk - br).abs() <= tol && fit.support.len() < bf.support.len())
                    }
                };
                if better {
                    best = Some((i, fit, risk));
                }
            }
            Err(e) => {
                log::warn!("tuning candidate {candidate} failed: {e}");
                table.rows.push(RiskRow { candidate, validation_risk: None, sparsity: None, error: Some(e.to_string()) });
            }
        }
    }
    let (index, fit, validation_risk) = best.ok_or(Error::AllCandidatesFailed(m))?;
    Ok(Selection { candidate: grid.candidates[index], index, fit, validation_risk, table })
}

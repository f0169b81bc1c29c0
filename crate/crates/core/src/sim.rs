//! Simulation design, performance metrics and the replication driver.
//!
//! Covariates follow a stationary Gaussian AR(1) with coefficient `rho`,
//! truncated at `|z| <= truncation`, behind an intercept. The response is
//! `y = x' theta* + x_2 e` with `e ~ N(0, noise_sd^2)`, so the conditional
//! quantiles of `y` fan out with the first covariate.

use std::fmt::Write as _;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, QuantileLevel};
use crate::error::{Error, Result};
use crate::loss::empirical_risk;
use crate::select::{default_grid, tune, Estimator, Fitter, Method};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub p: usize,
    pub s: usize,
    pub rho: f64,
    pub truncation: f64,
    pub noise_sd: f64,
    pub seed: u64,
    /// Zero-based positions of the unit coefficients; `None` uses [`true_support`].
    pub support: Option<Vec<usize>>,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self { n_train: 100, n_valid: 100, n_test: 5000, p: 10, s: 5, rho: 0.5, truncation: 6.0, noise_sd: 0.25, seed: 0, support: None }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s == 0 || self.s > self.p {
            return Err(Error::invalid(format!("need 1 <= s <= p, got s = {}, p = {}", self.s, self.p)));
        }
        if self.p < 2 {
            return Err(Error::invalid("the design needs an intercept and at least one covariate"));
        }
        if self.n_train < 2 || self.n_valid < 1 || self.n_test < 1 {
            return Err(Error::invalid("sample sizes too small"));
        }
        if !(self.rho.abs() < 1.0) || !(self.truncation > 0.0) || !(self.noise_sd >= 0.0) {
            return Err(Error::invalid("need |rho| < 1, truncation > 0, noise_sd >= 0"));
        }
        if let Some(sup) = &self.support {
            if sup.len() != self.s || sup.iter().any(|&j| j >= self.p) {
                return Err(Error::invalid("support override must hold s indices below p"));
            }
        }
        Ok(())
    }

    pub fn theta_star(&self) -> Vec<f64> {
        match &self.support {
            Some(sup) => {
                let mut t = vec![0.0; self.p];
                sup.iter().for_each(|&j| t[j] = 1.0);
                t
            }
            None => true_theta(self.p, self.s),
        }
    }
}

/// Zero-based positions `floor(i p / s)`, `i = 0..s`.
pub fn true_support(p: usize, s: usize) -> Vec<usize> {
    (0..s.min(p)).map(|i| i * p / s).collect()
}

pub fn true_theta(p: usize, s: usize) -> Vec<f64> {
    let mut t = vec![0.0; p];
    for j in true_support(p, s) {
        t[j] = 1.0;
    }
    t
}

/// Draws `n` rows of the design and response.
pub fn dgp_dataset<R: Rng + ?Sized>(cfg: &DgpConfig, theta_star: &[f64], n: usize, rng: &mut R) -> Result<Dataset> {
    let p = cfg.p;
    let innovation = (1.0 - cfg.rho * cfg.rho).sqrt();
    let mut x = Array2::<f64>::zeros((n, p));
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        x[[i, 0]] = 1.0;
        let mut z: f64 = rng.sample(StandardNormal);
        for j in 1..p {
            if j > 1 {
                let eta: f64 = rng.sample(StandardNormal);
                z = cfg.rho * z + innovation * eta;
            }
            x[[i, j]] = if z.abs() <= cfg.truncation { z } else { 0.0 };
        }
        let e: f64 = rng.sample(StandardNormal);
        let mean: f64 = (0..p).map(|j| x[[i, j]] * theta_star[j]).sum();
        y[i] = mean + x[[i, 1]] * cfg.noise_sd * e;
    }
    Dataset::from_arrays(x, y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

/// Independent training, validation and test samples.
pub fn dgp_sample<R: Rng + ?Sized>(cfg: &DgpConfig, rng: &mut R) -> Result<Samples> {
    cfg.validate()?;
    let theta = cfg.theta_star();
    Ok(Samples {
        train: dgp_dataset(cfg, &theta, cfg.n_train, rng)?,
        valid: dgp_dataset(cfg, &theta, cfg.n_valid, rng)?,
        test: dgp_dataset(cfg, &theta, cfg.n_test, rng)?,
    })
}

/// Generator of replication `rep`: its own stream of the seed.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Metrics of one fitted vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Share of the relevant coordinates that were selected.
    pub corr_sel: f64,
    /// 1 when the selected set equals the true support.
    pub orac_sel: f64,
    pub num_irrel: usize,
    pub sparsity: usize,
    pub param_error: f64,
    /// Mean of `(x'(theta_hat - theta*))^2` over the test rows.
    pub fit_error: f64,
    /// `None` when the risk at the truth vanishes.
    pub in_rr: Option<f64>,
    pub out_rr: Option<f64>,
    /// `#{j : |theta_hat_j - theta*_j| > tol} / s`.
    pub hamming: f64,
}

pub fn compute_metrics(
    theta_hat: &[f64],
    theta_star: &[f64],
    test: &Dataset,
    train: &Dataset,
    tau: QuantileLevel,
    select_tol: f64,
) -> Result<Metrics> {
    let p = theta_star.len();
    if theta_hat.len() != p {
        return Err(Error::DimensionMismatch { expected: p, got: theta_hat.len() });
    }
    let selected: Vec<bool> = theta_hat.iter().map(|v| v.abs() > select_tol).collect();
    let relevant: Vec<bool> = theta_star.iter().map(|v| *v != 0.0).collect();
    let s = relevant.iter().filter(|r| **r).count();
    let hits = (0..p).filter(|&j| selected[j] && relevant[j]).count();
    let num_irrel = (0..p).filter(|&j| selected[j] && !relevant[j]).count();
    let diff: Vec<f64> = theta_hat.iter().zip(theta_star).map(|(a, b)| a - b).collect();
    let fitted_gap = test.predict(&diff)?;
    let rr = |d: &Dataset| -> Result<Option<f64>> {
        let base = empirical_risk(theta_star, d, tau)?;
        if base == 0.0 {
            return Ok(None);
        }
        Ok(Some(empirical_risk(theta_hat, d, tau)? / base))
    };
    let changed = diff.iter().filter(|v| v.abs() > select_tol).count();
    Ok(Metrics {
        corr_sel: if s == 0 { 1.0 } else { hits as f64 / s as f64 },
        orac_sel: if selected == relevant { 1.0 } else { 0.0 },
        num_irrel,
        sparsity: hits + num_irrel,
        param_error: diff.iter().map(|v| v * v).sum::<f64>().sqrt(),
        fit_error: fitted_gap.iter().map(|v| v * v).sum::<f64>() / test.n() as f64,
        in_rr: rr(train)?,
        out_rr: rr(test)?,
        hamming: changed as f64 / s.max(1) as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub rep: u64,
    pub method: Method,
    pub candidate: f64,
    pub metrics: Metrics,
    pub support: Vec<usize>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub rep: u64,
    pub method: Method,
    pub error: String,
}

/// Means over the successful replications of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub replications: usize,
    pub corr_sel: f64,
    pub orac_sel: f64,
    pub num_irrel: f64,
    pub avg_sparsity: f64,
    pub param_error: f64,
    pub fit_error: f64,
    pub in_rr: f64,
    pub out_rr: f64,
    pub hamming: f64,
    /// Replications whose relative risk was undefined.
    pub rr_missing: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOptions {
    pub tau: f64,
    pub select_tol: f64,
    pub workers: usize,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self { tau: 0.5, select_tol: 1e-5, workers: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: DgpConfig,
    pub options: StudyOptions,
    pub reps: usize,
    pub seed: u64,
    pub rows: Vec<ReplicationRow>,
    pub failures: Vec<FailureRow>,
    pub summary: Vec<SummaryRow>,
}

pub const SUMMARY_COLUMNS: [&str; 11] = [
    "method",
    "replications",
    "corr_sel",
    "orac_sel",
    "num_irrel",
    "avg_sparsity",
    "param_error",
    "fit_error",
    "in_rr",
    "out_rr",
    "hamming",
];

impl StudyReport {
    pub fn summary_for(&self, method: Method) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.method == method)
    }

    pub fn rows_for(&self, method: Method) -> impl Iterator<Item = &ReplicationRow> {
        self.rows.iter().filter(move |r| r.method == method)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(SUMMARY_COLUMNS).map_err(|e| Error::Parse(e.to_string()))?;
        for r in &self.summary {
            let rec = [
                r.method.to_string(),
                r.replications.to_string(),
                r.corr_sel.to_string(),
                r.orac_sel.to_string(),
                r.num_irrel.to_string(),
                r.avg_sparsity.to_string(),
                r.param_error.to_string(),
                r.fit_error.to_string(),
                r.in_rr.to_string(),
                r.out_rr.to_string(),
                r.hamming.to_string(),
            ];
            out.write_record(rec).map_err(|e| Error::Parse(e.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }

    /// One JSON object per replication row.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.rows {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn pretty_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>4} {:>8} {:>8} {:>9} {:>8} {:>9} {:>9} {:>7} {:>7} {:>7}",
            "method", "reps", "corr_sel", "orac_sel", "num_irrel", "sparsity", "param_err", "fit_err", "in_rr", "out_rr", "hamming"
        );
        for r in &self.summary {
            let _ = writeln!(
                out,
                "{:<10} {:>4} {:>8.3} {:>8.3} {:>9.3} {:>8.3} {:>9.4} {:>9.4} {:>7.4} {:>7.4} {:>7.3}",
                r.method.as_str(),
                r.replications,
                r.corr_sel,
                r.orac_sel,
                r.num_irrel,
                r.avg_sparsity,
                r.param_error,
                r.fit_error,
                r.in_rr,
                r.out_rr,
                r.hamming
            );
        }
        out
    }
}

fn mean<I: Iterator<Item = f64>>(it: I) -> f64 {
    let (sum, count) = it.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

/// Per-method means. Rows are sorted by replication first, so the result does
/// not depend on the order in which replications finished.
pub fn summarize(methods: &[Method], rows: &[ReplicationRow], failures: &[FailureRow]) -> Vec<SummaryRow> {
    methods
        .iter()
        .map(|&method| {
            let mut mine: Vec<&ReplicationRow> = rows.iter().filter(|r| r.method == method).collect();
            mine.sort_by_key(|r| r.rep);
            let m = || mine.iter().map(|r| &r.metrics);
            SummaryRow {
                method,
                replications: mine.len(),
                corr_sel: mean(m().map(|x| x.corr_sel)),
                orac_sel: mean(m().map(|x| x.orac_sel)),
                num_irrel: mean(m().map(|x| x.num_irrel as f64)),
                avg_sparsity: mean(m().map(|x| x.sparsity as f64)),
                param_error: mean(m().map(|x| x.param_error)),
                fit_error: mean(m().map(|x| x.fit_error)),
                in_rr: mean(m().filter_map(|x| x.in_rr)),
                out_rr: mean(m().filter_map(|x| x.out_rr)),
                hamming: mean(m().map(|x| x.hamming)),
                rr_missing: m().filter(|x| x.in_rr.is_none() || x.out_rr.is_none()).count(),
                failures: failures.iter().filter(|f| f.method == method).count(),
            }
        })
        .collect()
}

/// Runs `reps` replications: draw the three samples, tune each estimator on
/// its default grid by validation risk, and score the selected fit.
///
/// Replication `r` uses stream `r` of `seed` for the data, and the estimator's
/// penalty simulation is seeded with `seed + r`, so results are reproducible
/// for any worker count.
pub fn run_study(estimators: &[Estimator], cfg: &DgpConfig, reps: usize, seed: u64, opts: &StudyOptions) -> Result<StudyReport> {
    cfg.validate()?;
    if reps == 0 {
        return Err(Error::invalid("need at least one replication"));
    }
    let tau = QuantileLevel::new(opts.tau)?;
    let theta_star = cfg.theta_star();
    let slots: Vec<Mutex<Vec<std::result::Result<ReplicationRow, FailureRow>>>> = (0..reps).map(|_| Mutex::new(Vec::new())).collect();
    let next = AtomicUsize::new(0);
    let work = || loop {
        let r = next.fetch_add(1, Ordering::Relaxed);
        if r >= reps {
            break;
        }
        let out = run_replication(estimators, cfg, &theta_star, r as u64, seed, tau, opts.select_tol);
        *slots[r].lock().unwrap() = out;
    };
    let workers = opts.workers.clamp(1, reps);
    if workers == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(work);
            }
        });
    }
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for slot in slots {
        for item in slot.into_inner().unwrap() {
            match item {
                Ok(row) => rows.push(row),
                Err(f) => {
                    log::warn!("replication {} failed for {}: {}", f.rep, f.method, f.error);
                    failures.push(f);
                }
            }
        }
    }
    let methods: Vec<Method> = estimators.iter().map(|e| e.method).collect();
    let summary = summarize(&methods, &rows, &failures);
    Ok(StudyReport { config: cfg.clone(), options: opts.clone(), reps, seed, rows, failures, summary })
}

fn run_replication(
    estimators: &[Estimator],
    cfg: &DgpConfig,
    theta_star: &[f64],
    rep: u64,
    seed: u64,
    tau: QuantileLevel,
    select_tol: f64,
) -> Vec<std::result::Result<ReplicationRow, FailureRow>> {
    let mut rng = replication_rng(seed, rep);
    let samples = match dgp_sample(cfg, &mut rng) {
        Ok(s) => s,
        Err(e) => {
            return estimators.iter().map(|est| Err(FailureRow { rep, method: est.method, error: e.to_string() })).collect();
        }
    };
    estimators
        .iter()
        .map(|est| {
            let start = Instant::now();
            let est = Estimator { seed: seed.wrapping_add(rep), ..*est };
            let grid = default_grid(est.kind(), cfg.p, est.prox.k0);
            let outcome = tune(&est, &grid, &samples.train, &samples.valid, tau).and_then(|sel| {
                let metrics = compute_metrics(&sel.fit.theta, theta_star, &samples.test, &samples.train, tau, select_tol)?;
                Ok(ReplicationRow {
                    rep,
                    method: est.method,
                    candidate: sel.candidate,
                    metrics,
                    support: sel.fit.support,
                    wall_seconds: start.elapsed().as_secs_f64(),
                })
            });
            outcome.map_err(|e| FailureRow { rep, method: est.method, error: e.to_string() })
        })
        .collect()
}

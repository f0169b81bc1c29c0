use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sparse_quantile::conformal::{run_split, split_four, write_intervals_csv, Coverage};
use sparse_quantile::io::read_csv;
use sparse_quantile::mio::{build_milp, solve_bnb, solve_enumeration_with, BnbOptions, EnumOptions};
use sparse_quantile::prox::{MultiStart, ProxConfig};
use sparse_quantile::select::{default_grid, lambda_from_c, tune_with_workers, Estimator, Fitter, GridKind, Method, RiskRow};
use sparse_quantile::sim::{replication_rng, run_study, DgpConfig, StudyOptions};
use sparse_quantile::{Dataset, FitResult, QuantileLevel};

use crate::config::RunConfig;
use crate::exit::{CliError, TIME_LIMIT};

fn estimator(cfg: &RunConfig, method: Method) -> Estimator {
    Estimator {
        method,
        prox: ProxConfig {
            lambda: 0.0,
            k0: cfg.k0,
            bound: cfg.bound,
            epsilon: cfg.eps,
            l_factor: cfg.l_factor,
            max_iter: cfg.max_iter,
            conv_tol: cfg.conv_tol,
            threshold: cfg.threshold,
        },
        multi: MultiStart { restarts: cfg.restarts, alpha: cfg.bc_alpha, draws: cfg.bc_draws, ..MultiStart::default() },
        seed: cfg.seed,
        time_limit_secs: cfg.time_limit,
        gap_tol: cfg.gap_tol,
        ..Estimator::new(method)
    }
}

fn read(path: &str, response: &str) -> Result<Dataset, CliError> {
    read_csv(path, response).map_err(|e| match e {
        sparse_quantile::Error::Io(e) => CliError::Io(format!("{path}: {e}")),
        other => other.into(),
    })
}

fn load(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let path = cfg.data.as_deref().ok_or_else(|| CliError::Config("--data is required".into()))?;
    read(path, &cfg.response)
}

fn emit(cfg: &RunConfig, text: &str) -> Result<(), CliError> {
    match &cfg.out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::Io(format!("{path}: {e}")))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Fit fields of the JSON output. Wall time is left out so reruns are byte-identical.
#[derive(Serialize)]
struct FitJson {
    names: Vec<String>,
    theta: Vec<f64>,
    support: Vec<usize>,
    support_names: Vec<String>,
    obj_unpenalized: f64,
    obj_penalized: f64,
    iterations: usize,
    converged: bool,
    gap: Option<f64>,
}

impl FitJson {
    fn new(fit: &FitResult, d: &Dataset) -> Self {
        Self {
            names: d.names().to_vec(),
            theta: fit.theta.clone(),
            support: fit.support.clone(),
            support_names: fit.support.iter().map(|&j| d.names()[j].clone()).collect(),
            obj_unpenalized: fit.obj_unpenalized,
            obj_penalized: fit.obj_penalized,
            iterations: fit.iterations,
            converged: fit.converged,
            gap: fit.gap,
        }
    }
}

fn summary_line(label: &str, fit: &FitResult, d: &Dataset) {
    let names: Vec<&str> = fit.support.iter().map(|&j| d.names()[j].as_str()).collect();
    eprintln!("{label}: |support| = {}, objective = {:.6}, support = [{}]", fit.support.len(), fit.obj_penalized, names.join(", "));
}

fn candidate(cfg: &RunConfig, method: Method) -> Result<f64, CliError> {
    match method.kind() {
        GridKind::L0Cqr => cfg.q.map(|q| q as f64).ok_or_else(|| CliError::Config(format!("--q is required for {method}"))),
        _ => cfg.c.ok_or_else(|| CliError::Config(format!("--c is required for {method}"))),
    }
}

fn exit_for(fit: &FitResult) -> i32 {
    if fit.converged { 0 } else { TIME_LIMIT }
}

#[derive(Serialize)]
struct FitOutput<'a> {
    config: &'a RunConfig,
    method: Method,
    tau: f64,
    candidate: f64,
    lambda: Option<f64>,
    fit: FitJson,
}

pub fn fit(cfg: &RunConfig) -> Result<i32, CliError> {
    let d = load(cfg)?;
    let tau = QuantileLevel::new(cfg.tau)?;
    let cand = candidate(cfg, cfg.method)?;
    let res = estimator(cfg, cfg.method).fit(&d, tau, cand)?;
    let lambda = (cfg.method.kind() == GridKind::L0Pqr).then(|| lambda_from_c(cand, &d));
    summary_line(cfg.method.as_str(), &res, &d);
    let out = FitOutput { config: cfg, method: cfg.method, tau: cfg.tau, candidate: cand, lambda, fit: FitJson::new(&res, &d) };
    emit(cfg, &serde_json::to_string_pretty(&out)?)?;
    Ok(if matches!(cfg.method, Method::L0PqrMio | Method::L0CqrMio) { exit_for(&res) } else { 0 })
}

#[derive(Serialize)]
struct TuneOutput<'a> {
    config: &'a RunConfig,
    method: Method,
    tau: f64,
    candidate: f64,
    validation_risk: f64,
    fit: FitJson,
    table: &'a [RiskRow],
}

fn holdout(d: &Dataset, frac: f64, seed: u64) -> Result<(Dataset, Dataset), CliError> {
    let mut idx: Vec<usize> = (0..d.n()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_valid = ((d.n() as f64) * frac).round() as usize;
    if n_valid == 0 || n_valid >= d.n() {
        return Err(CliError::Config(format!("valid_frac {frac} leaves an empty part of {} rows", d.n())));
    }
    let (v, t) = idx.split_at(n_valid);
    Ok((d.subset_rows(t), d.subset_rows(v)))
}

pub fn tune(cfg: &RunConfig, table: Option<&Path>) -> Result<i32, CliError> {
    let d = load(cfg)?;
    let (train, valid) = match &cfg.valid {
        Some(path) => (d, read(path, &cfg.response)?),
        None => holdout(&d, cfg.valid_frac, cfg.seed)?,
    };
    let tau = QuantileLevel::new(cfg.tau)?;
    let est = estimator(cfg, cfg.method);
    let grid = default_grid(est.kind(), train.p(), cfg.k0);
    let sel = tune_with_workers(&est, &grid, &train, &valid, tau, cfg.workers)?;
    if let Some(path) = table {
        sel.table.write_csv(create(path)?)?;
    }
    eprintln!("selected candidate {} with validation risk {:.6}", sel.candidate, sel.validation_risk);
    summary_line(cfg.method.as_str(), &sel.fit, &train);
    let out = TuneOutput {
        config: cfg,
        method: cfg.method,
        tau: cfg.tau,
        candidate: sel.candidate,
        validation_risk: sel.validation_risk,
        fit: FitJson::new(&sel.fit, &train),
        table: &sel.table.rows,
    };
    emit(cfg, &serde_json::to_string_pretty(&out)?)?;
    Ok(0)
}

#[derive(Serialize)]
struct ExactOutput<'a> {
    config: &'a RunConfig,
    solver: &'a str,
    tau: f64,
    lambda: f64,
    k0: usize,
    status: &'static str,
    fit: FitJson,
}

pub fn exact(cfg: &RunConfig, lp_out: Option<&Path>) -> Result<i32, CliError> {
    let d = load(cfg)?;
    let tau = QuantileLevel::new(cfg.tau)?;
    let lambda = match (cfg.lambda, cfg.c) {
        (Some(l), _) => l,
        (None, Some(c)) => lambda_from_c(c, &d),
        (None, None) => return Err(CliError::Config("exact needs --lambda or --c".into())),
    };
    let k0 = cfg.k0.min(d.p());
    let model = build_milp(&d, tau, lambda, k0, cfg.bound)?;
    if let Some(path) = lp_out {
        create(path)?.write_all(model.to_lp_format().as_bytes())?;
    }
    let res = if cfg.solver == "enumerate" {
        solve_enumeration_with(&d, tau, lambda, k0, EnumOptions { bound: Some(cfg.bound), ..EnumOptions::default() })?
    } else {
        let opts = BnbOptions { time_limit: std::time::Duration::from_secs_f64(cfg.time_limit), gap_tol: cfg.gap_tol };
        solve_bnb(&model, None, opts)?
    };
    summary_line(&cfg.solver, &res, &d);
    let status = if res.converged { "optimal" } else { "time_limit" };
    let out = ExactOutput { config: cfg, solver: &cfg.solver, tau: cfg.tau, lambda, k0, status, fit: FitJson::new(&res, &d) };
    emit(cfg, &serde_json::to_string_pretty(&out)?)?;
    Ok(exit_for(&res))
}

pub fn simulate(cfg: &RunConfig, jsonl: Option<&Path>) -> Result<i32, CliError> {
    let dgp = DgpConfig {
        n_train: cfg.n_train,
        n_valid: cfg.n_valid,
        n_test: cfg.n_test,
        p: cfg.p,
        s: cfg.s,
        seed: cfg.seed,
        ..DgpConfig::default()
    };
    let ests: Vec<Estimator> = cfg.methods.iter().map(|&m| estimator(cfg, m)).collect();
    let opts = StudyOptions { tau: cfg.tau, select_tol: cfg.select_tol, workers: cfg.workers };
    let report = run_study(&ests, &dgp, cfg.reps, cfg.seed, &opts)?;
    if let Some(path) = jsonl {
        report.write_jsonl(create(path)?)?;
    }
    eprintln!("{}", report.pretty_table());
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    match &cfg.out {
        Some(path) => std::fs::write(path, &csv).map_err(|e| CliError::Io(format!("{path}: {e}")))?,
        None => std::io::stdout().write_all(&csv)?,
    }
    Ok(0)
}

#[derive(Serialize)]
struct SplitJson {
    split: usize,
    candidates: [f64; 2],
    sizes: [usize; 4],
    correction: Option<f64>,
    coverage: Coverage,
}

#[derive(Serialize)]
struct ConformalOutput<'a> {
    config: &'a RunConfig,
    mean_coverage: f64,
    splits: Vec<SplitJson>,
}

pub fn conformal(cfg: &RunConfig, intervals: Option<&Path>) -> Result<i32, CliError> {
    let d = load(cfg)?;
    let est = estimator(cfg, cfg.method);
    let mut splits = Vec::with_capacity(cfg.splits);
    for s in 0..cfg.splits {
        let mut rng = replication_rng(cfg.seed, s as u64);
        let test_rows = split_four(d.n(), &mut rng.clone())[3].clone();
        let outcome = run_split(&d, &est, cfg.alpha, &mut rng)?;
        if s == 0 {
            if let Some(path) = intervals {
                write_intervals_csv(&outcome.model, &d.subset_rows(&test_rows), create(path)?)?;
            }
        }
        eprintln!(
            "split {s}: coverage {:.4}, mean length {:.4}, candidates {:?}",
            outcome.coverage.coverage, outcome.coverage.mean_length, outcome.candidates
        );
        splits.push(SplitJson {
            split: s,
            candidates: outcome.candidates,
            sizes: outcome.sizes,
            correction: outcome.model.correction.is_finite().then_some(outcome.model.correction),
            coverage: outcome.coverage,
        });
    }
    let mean_coverage = splits.iter().map(|s| s.coverage.coverage).sum::<f64>() / splits.len() as f64;
    emit(cfg, &serde_json::to_string_pretty(&ConformalOutput { config: cfg, mean_coverage, splits })?)?;
    Ok(0)
}

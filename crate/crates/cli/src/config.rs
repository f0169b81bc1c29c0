use std::path::Path;

use serde::{Deserialize, Serialize};
use sparse_quantile::prox::ThresholdScale;
use sparse_quantile::select::Method;

use crate::exit::CliError;

/// Fully resolved settings of one run. Embedded in every JSON output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub method: Method,
    pub tau: f64,
    pub c: Option<f64>,
    pub q: Option<usize>,
    pub lambda: Option<f64>,
    pub k0: usize,
    #[serde(rename = "box")]
    pub bound: f64,
    pub eps: f64,
    pub l_factor: f64,
    pub max_iter: usize,
    pub conv_tol: f64,
    pub threshold: ThresholdScale,
    pub restarts: usize,
    pub bc_alpha: f64,
    pub bc_draws: usize,
    pub alpha: f64,
    pub seed: u64,
    pub workers: usize,
    pub time_limit: f64,
    pub gap_tol: f64,
    pub solver: String,
    pub data: Option<String>,
    pub response: String,
    pub valid: Option<String>,
    pub valid_frac: f64,
    pub out: Option<String>,
    pub p: usize,
    pub s: usize,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub reps: usize,
    pub methods: Vec<Method>,
    pub select_tol: f64,
    pub splits: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: String::new(),
            method: Method::L0PqrFo,
            tau: 0.5,
            c: None,
            q: None,
            lambda: None,
            k0: 100,
            bound: 10.0,
            eps: 2e-4,
            l_factor: 2.0,
            max_iter: 1000,
            conv_tol: 1e-8,
            threshold: ThresholdScale::Envelope,
            restarts: 50,
            bc_alpha: 0.1,
            bc_draws: 1000,
            alpha: 0.1,
            seed: 0,
            workers: 1,
            time_limit: 600.0,
            gap_tol: 1e-6,
            solver: "bnb".into(),
            data: None,
            response: "y".into(),
            valid: None,
            valid_frac: 0.5,
            out: None,
            p: 10,
            s: 5,
            n_train: 100,
            n_valid: 100,
            n_test: 5000,
            reps: 20,
            methods: vec![Method::L0PqrFo],
            select_tol: 1e-5,
            splits: 1,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value.trim().parse().map_err(|_| CliError::Config(format!("invalid value '{value}' for '{key}'")))
}

fn parse_threshold(value: &str) -> Result<ThresholdScale, CliError> {
    match value.trim() {
        "envelope" => Ok(ThresholdScale::Envelope),
        "direct" => Ok(ThresholdScale::Direct),
        other => Err(CliError::Config(format!("unknown threshold scaling '{other}'"))),
    }
}

impl RunConfig {
    /// Applies one `key=value` setting. Keys may use `-` or `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = key.trim().replace('-', "_");
        let v = value.trim();
        match key.as_str() {
            "method" => self.method = v.parse().map_err(|e: sparse_quantile::Error| CliError::Config(e.to_string()))?,
            "tau" => self.tau = parse(&key, v)?,
            "c" => self.c = Some(parse(&key, v)?),
            "q" => self.q = Some(parse(&key, v)?),
            "lambda" => self.lambda = Some(parse(&key, v)?),
            "k0" => self.k0 = parse(&key, v)?,
            "box" | "bound" => self.bound = parse(&key, v)?,
            "eps" | "epsilon" => self.eps = parse(&key, v)?,
            "l_factor" => self.l_factor = parse(&key, v)?,
            "max_iter" => self.max_iter = parse(&key, v)?,
            "conv_tol" => self.conv_tol = parse(&key, v)?,
            "threshold" => self.threshold = parse_threshold(v)?,
            "restarts" | "t" => self.restarts = parse(&key, v)?,
            "bc_alpha" => self.bc_alpha = parse(&key, v)?,
            "bc_draws" => self.bc_draws = parse(&key, v)?,
            "alpha" => self.alpha = parse(&key, v)?,
            "seed" => self.seed = parse(&key, v)?,
            "workers" => self.workers = parse(&key, v)?,
            "time_limit" => self.time_limit = parse(&key, v)?,
            "gap_tol" => self.gap_tol = parse(&key, v)?,
            "solver" => self.solver = v.to_string(),
            "data" => self.data = Some(v.to_string()),
            "response" => self.response = v.to_string(),
            "valid" => self.valid = Some(v.to_string()),
            "valid_frac" => self.valid_frac = parse(&key, v)?,
            "out" => self.out = Some(v.to_string()),
            "p" => self.p = parse(&key, v)?,
            "s" => self.s = parse(&key, v)?,
            "n_train" | "n" => self.n_train = parse(&key, v)?,
            "n_valid" => self.n_valid = parse(&key, v)?,
            "n_test" => self.n_test = parse(&key, v)?,
            "reps" => self.reps = parse(&key, v)?,
            "methods" => {
                self.methods = v
                    .split(',')
                    .filter(|m| !m.trim().is_empty())
                    .map(|m| m.parse().map_err(|e: sparse_quantile::Error| CliError::Config(e.to_string())))
                    .collect::<Result<_, _>>()?
            }
            "select_tol" => self.select_tol = parse(&key, v)?,
            "splits" => self.splits = parse(&key, v)?,
            _ => return Err(CliError::Config(format!("unknown setting '{key}'"))),
        }
        Ok(())
    }

    /// Reads a flat `key = value` file; blank lines and `#` comments are skipped.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{}:{}: expected key=value", path.display(), no + 1)))?;
            self.set(k, v).map_err(|e| CliError::Config(format!("{}:{}: {e}", path.display(), no + 1)))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad("tau must lie in (0, 1)");
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return bad("alpha must lie in (0, 0.5)");
        }
        if self.restarts == 0 || self.workers == 0 || self.reps == 0 || self.splits == 0 {
            return bad("restarts, workers, reps and splits must be positive");
        }
        if !(self.valid_frac > 0.0 && self.valid_frac < 1.0) {
            return bad("valid_frac must lie in (0, 1)");
        }
        if !(self.time_limit > 0.0) {
            return bad("time_limit must be positive");
        }
        if self.solver != "bnb" && self.solver != "enumerate" {
            return bad("solver must be 'bnb' or 'enumerate'");
        }
        Ok(())
    }
}

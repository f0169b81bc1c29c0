//! `sqr`: sparse quantile regression from the command line.

mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::exit::CliError;

#[derive(Parser)]
#[command(name = "sqr", version, about = "Sparse quantile regression: l0-penalised, l0-constrained and l1-penalised fits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one estimator at a fixed tuning value.
    Fit(Opts),
    /// Select the tuning value on a validation sample.
    Tune(Opts),
    /// Solve the l0-penalised problem exactly.
    Exact(Opts),
    /// Run a simulation study.
    Simulate(Opts),
    /// Split-conformal prediction intervals with a four-way split.
    Conformal(Opts),
}

/// Flags shared by all subcommands. Flags override values from `--config`.
#[derive(Args, Default)]
struct Opts {
    /// Flat key=value settings file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV with a header row.
    #[arg(long)]
    data: Option<String>,
    /// Name of the response column.
    #[arg(long)]
    response: Option<String>,
    /// Validation CSV for `tune`; otherwise `--valid-frac` of the rows are held out.
    #[arg(long)]
    valid: Option<String>,
    #[arg(long)]
    valid_frac: Option<String>,
    /// l0pqr, l0pqr-mio, l0cqr, l0cqr-mio or l1pqr.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    /// Tuning scalar of the penalised methods.
    #[arg(long)]
    c: Option<String>,
    /// Sparsity level of the constrained methods.
    #[arg(long)]
    q: Option<String>,
    /// l0 penalty for `exact`, overriding `--c`.
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    k0: Option<String>,
    /// Half-width of the coefficient box.
    #[arg(long = "box")]
    bound: Option<String>,
    /// Smoothing tolerance.
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    restarts: Option<String>,
    /// Miscoverage level of the conformal intervals.
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    workers: Option<String>,
    /// Seconds allowed for branch-and-bound.
    #[arg(long)]
    time_limit: Option<String>,
    #[arg(long)]
    gap_tol: Option<String>,
    /// envelope or direct.
    #[arg(long)]
    threshold: Option<String>,
    /// bnb or enumerate.
    #[arg(long)]
    solver: Option<String>,
    #[arg(long)]
    reps: Option<String>,
    #[arg(long)]
    splits: Option<String>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<String>,
    /// Write the model in LP format (`exact`).
    #[arg(long)]
    lp_out: Option<PathBuf>,
    /// Validation risk table as CSV (`tune`).
    #[arg(long)]
    table: Option<PathBuf>,
    /// Per-replication rows as JSON lines (`simulate`).
    #[arg(long)]
    jsonl: Option<PathBuf>,
    /// Intervals of the first split as CSV (`conformal`).
    #[arg(long)]
    intervals: Option<PathBuf>,
}

impl Opts {
    fn resolve(&self, command: &str) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig { command: command.to_string(), ..RunConfig::default() };
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let flags: [(&str, &Option<String>); 23] = [
            ("data", &self.data),
            ("response", &self.response),
            ("valid", &self.valid),
            ("valid_frac", &self.valid_frac),
            ("method", &self.method),
            ("tau", &self.tau),
            ("c", &self.c),
            ("q", &self.q),
            ("lambda", &self.lambda),
            ("k0", &self.k0),
            ("box", &self.bound),
            ("eps", &self.eps),
            ("restarts", &self.restarts),
            ("alpha", &self.alpha),
            ("seed", &self.seed),
            ("workers", &self.workers),
            ("time_limit", &self.time_limit),
            ("gap_tol", &self.gap_tol),
            ("threshold", &self.threshold),
            ("solver", &self.solver),
            ("reps", &self.reps),
            ("splits", &self.splits),
            ("out", &self.out),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Fit(o) => commands::fit(&o.resolve("fit")?),
        Command::Tune(o) => commands::tune(&o.resolve("tune")?, o.table.as_deref()),
        Command::Exact(o) => commands::exact(&o.resolve("exact")?, o.lp_out.as_deref()),
        Command::Simulate(o) => commands::simulate(&o.resolve("simulate")?, o.jsonl.as_deref()),
        Command::Conformal(o) => commands::conformal(&o.resolve("conformal")?, o.intervals.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{}", exit::error_record(&e));
            ExitCode::from(e.code() as u8)
        }
    }
}

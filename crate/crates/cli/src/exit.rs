use std::fmt;

use serde::Serialize;
use sparse_quantile::Error;

pub const CONFIG: i32 = 3;
pub const IO: i32 = 4;
pub const DATA: i32 = 5;
pub const INPUT: i32 = 6;
pub const SOLVER: i32 = 7;
pub const ENUMERATION_CAP: i32 = 8;
/// Results were written but the exact solver stopped at its time limit.
pub const TIME_LIMIT: i32 = 9;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Io(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Core(e) => match e {
                Error::Io(_) => "io",
                Error::Csv { .. } | Error::Parse(_) | Error::Json(_) => "data",
                Error::InvalidInput(_) | Error::DimensionMismatch { .. } | Error::InvalidQuantile(_) | Error::ConstantColumn(_) => "input",
                Error::RankDeficient { .. } | Error::Lp(_) | Error::NonFiniteObjective { .. } | Error::AllCandidatesFailed(_) => "solver",
                Error::EnumerationCap { .. } => "enumeration_cap",
            },
        }
    }

    pub fn code(&self) -> i32 {
        match self.kind() {
            "config" => CONFIG,
            "io" => IO,
            "data" => DATA,
            "input" => INPUT,
            "solver" => SOLVER,
            _ => ENUMERATION_CAP,
        }
    }
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    kind: &'a str,
    message: String,
    exit_code: i32,
}

/// One-line JSON error record for stderr.
pub fn error_record(e: &CliError) -> String {
    let rec = serde_json::json!({ "error": ErrorRecord { kind: e.kind(), message: e.to_string(), exit_code: e.code() } });
    rec.to_string()
}

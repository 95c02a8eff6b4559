use thiserror::Error;

use crate::config::ValidationIssue;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("configuration schema error: {0}")]
    Schema(String),
    #[error("invalid configuration: {}", join_issues(.0))]
    Validation(Vec<ValidationIssue>),
}

fn join_issues(issues: &[ValidationIssue]) -> String {
    issues.iter().map(|i| i.message.as_str()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StructureError {
    #[error("explicit expansion refused: {projected} metamers exceed the cap of {cap}")]
    CapExceeded { projected: u64, cap: u64 },
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error("cycle {cycle}: ring biomass {q_rg} g has no internode length to grow on")]
    NoRingSupport { cycle: usize, q_rg: f64 },
    #[error("cycle {cycle}: non-finite value in {what}")]
    NonFinite { cycle: usize, what: &'static str },
}

#[derive(Debug, Error)]
pub enum PatternError {
    #[error("cannot access {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Row { line: usize, message: String },
    #[error("target file: {0}")]
    Format(String),
    #[error("unknown pattern `{0}`")]
    UnknownPattern(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum AllometryError {
    #[error("allometry fit needs at least 3 records, got {0}")]
    TooFewRecords(usize),
    #[error("record {0} has a non-positive biomass or length")]
    NonPositive(usize),
    #[error("log-biomass has zero variance")]
    ZeroVariance,
}

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("invalid fit problem: {0}")]
    Problem(String),
    #[error("{} target rows have no simulated counterpart: {}", .unmatched.len(), .unmatched.join(", "))]
    Alignment { unmatched: Vec<String> },
    #[error("simulation failed: {0}")]
    Simulation(#[from] EngineError),
    #[error("non-identifiable parameters; null-space direction: {}", format_direction(.direction))]
    NonIdentifiable { direction: Vec<(String, f64)> },
}

fn format_direction(direction: &[(String, f64)]) -> String {
    direction
        .iter()
        .map(|(name, c)| format!("{name}={c:+.3}"))
        .collect::<Vec<_>>()
        .join(", ")
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid soil profile: {0}")]
    InvalidProfile(String),

    #[error("sensor depth spans sum to {actual} in, expected root depth {expected} in")]
    SensorLayout { expected: f64, actual: f64 },

    #[error("{path}: row {row}, column `{column}`: {message}")]
    WeatherRow {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("{path}: row {row}: date {date} does not follow {previous}")]
    NonMonotoneDates {
        path: PathBuf,
        row: usize,
        date: String,
        previous: String,
    },

    #[error("need at least {needed} observation rows to fit, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("regressor `{0}` is degenerate (rank-deficient design matrix)")]
    RankDeficient(&'static str),

    #[error("observed v_next is constant; R² and NRMSE are undefined")]
    ConstantTarget,

    #[error("weather covers {available} days, episode needs {needed}")]
    WeatherTooShort { needed: usize, available: usize },

    #[error("episode already ran its {0} steps")]
    EpisodeExhausted(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("network produced a non-finite value ({0}); training has diverged")]
    NonFinite(&'static str),

    #[error("training diverged at iteration {iteration}: {what} is non-finite")]
    Diverged {
        iteration: usize,
        what: &'static str,
        /// Parameters before the failing update, for diagnosis.
        snapshot: Box<crate::agent::PolicySnapshot>,
    },

    #[error("shield has no fitted model for region {0}")]
    UnfittedShield(usize),

    #[error("baseline consumed no water; savings undefined")]
    ZeroBaseline,

    #[error("season lengths differ ({0} vs {1})")]
    SeasonMismatch(usize, usize),

    #[error("bad policy snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("config write error: {0}")]
    TomlWrite(#[from] toml::ser::Error),
}

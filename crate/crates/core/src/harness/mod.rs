//! Season-long experiments: configuration, paired runs of a controller
//! roster, metrics and result files.

mod config;
mod io;
mod season;

pub use config::{
    derive_seed, EnvSection, RunConfig, SeedUse, ShieldModelSource, ShieldSection, WeatherSection,
};
pub use io::{
    load_results, read_manifest, read_summary_csv, write_results, write_summary_csv, Manifest, DAILY_CSV,
    MANIFEST_JSON, SUMMARY_CSV, TRANSITIONS_CSV,
};
pub use season::{
    adversarial, build_roster, format_table, qos, run_experiment, run_roster, run_season, savings_percent, summarize,
    water_savings, ControllerResult, DayRecord, ExperimentResult, Policies, RegionCounts, RosterEntry, SeasonSetup,
    SummaryRow, ROSTER,
};

use crate::agent::{train, TrainOutcome};
use crate::env::RewardKind;
use crate::error::Result;

/// Trains a policy for `reward` on the configuration's training seasons.
pub fn train_policy(cfg: &RunConfig, reward: RewardKind) -> Result<TrainOutcome> {
    let pool = cfg.training_pool(reward)?;
    train(&cfg.trainer, &pool, derive_seed(cfg.seed, SeedUse::Training))
}

/// Trains whichever policies the roster needs.
pub fn train_roster_policies(cfg: &RunConfig) -> Result<Policies> {
    let needs = |names: &[&str]| cfg.controllers.iter().any(|c| names.contains(&c.as_str()));
    let full = if needs(&["DRLIC", "DRLIC_noshield"]) {
        Some(train_policy(cfg, RewardKind::Full)?.policy)
    } else {
        None
    };
    let mad_only = if needs(&["DRLIC_MAD"]) {
        Some(train_policy(cfg, RewardKind::MadOnly)?.policy)
    } else {
        None
    };
    Ok(Policies { full, mad_only })
}

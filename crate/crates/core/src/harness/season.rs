//! Paired whole-season runs and the water and health metrics over them.

use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::config::{derive_seed, RunConfig, SeedUse};
use crate::agent::PolicySnapshot;
use crate::controllers::{Controller, DecisionSource, DrlicController, EtController, ScaledController};
use crate::env::{branch, Branch, EnvConfig, IrrigationEnv};
use crate::error::{Error, Result};
use crate::hydrology::SoilLevels;
use crate::safety::{screen, ShieldConfig};
use crate::weather::WeatherDay;

/// Everything two controllers must share for a paired comparison.
#[derive(Debug, Clone)]
pub struct SeasonSetup {
    /// Episode length equals the season length.
    pub env: EnvConfig,
    /// `days + 1` days of weather.
    pub weather: Arc<[WeatherDay]>,
    /// Seeds the initial soil draw and the process noise.
    pub env_seed: u64,
}

impl SeasonSetup {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        Ok(Self {
            env: cfg.season_env_config()?,
            weather: cfg.evaluation_weather()?.into(),
            env_seed: derive_seed(cfg.seed, SeedUse::EvalEnv),
        })
    }

    pub fn days(&self) -> usize {
        self.env.episode_length
    }

    pub fn levels(&self) -> SoilLevels {
        self.env.levels()
    }
}

/// One executed day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayRecord {
    pub day: usize,
    /// Date of the day the decision was made on.
    pub date: NaiveDate,
    /// Executed (post-shield) action per region.
    pub action: Vec<f64>,
    /// End-of-day soil water per region.
    pub v: Vec<f64>,
    pub source: DecisionSource,
    pub deficit_sum: f64,
    pub triggered: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RegionCounts {
    pub below_mad: usize,
    pub in_band: usize,
    pub above_fc: usize,
}

/// One controller's season.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerResult {
    pub name: String,
    pub days: Vec<DayRecord>,
    /// Water applied per day, summed over regions, inches.
    pub daily_water: Vec<f64>,
    pub total_water: f64,
    /// Days on which any region ended below MAD.
    pub days_below_mad: usize,
    /// Days on which any region ended above FC.
    pub days_above_fc: usize,
    pub shield_trigger_days: usize,
    pub region_counts: Vec<RegionCounts>,
}

impl ControllerResult {
    /// Derives every aggregate from the day log.
    pub fn from_days(name: impl Into<String>, days: Vec<DayRecord>, levels: &SoilLevels) -> Self {
        let daily_water: Vec<f64> = days.iter().map(|d| d.action.iter().sum()).collect();
        let total_water = daily_water.iter().sum();
        let (days_below_mad, days_above_fc) = qos_days(&days, levels);
        let n_regions = days.first().map_or(0, |d| d.v.len());
        let mut region_counts = vec![RegionCounts::default(); n_regions];
        for d in &days {
            for (c, &v) in region_counts.iter_mut().zip(&d.v) {
                match branch(v, levels) {
                    Branch::BelowMad => c.below_mad += 1,
                    Branch::InBand => c.in_band += 1,
                    Branch::AboveFc => c.above_fc += 1,
                }
            }
        }
        Self {
            name: name.into(),
            shield_trigger_days: days.iter().filter(|d| d.triggered).count(),
            days,
            daily_water,
            total_water,
            days_below_mad,
            days_above_fc,
            region_counts,
        }
    }

    pub fn season_length(&self) -> usize {
        self.days.len()
    }

    /// Soil water of one region over the season.
    pub fn soil_series(&self, region: usize) -> Vec<f64> {
        self.days.iter().map(|d| d.v[region]).collect()
    }
}

fn qos_days(days: &[DayRecord], levels: &SoilLevels) -> (usize, usize) {
    let below = days
        .iter()
        .filter(|d| d.v.iter().any(|&v| branch(v, levels) == Branch::BelowMad))
        .count();
    let above = days
        .iter()
        .filter(|d| d.v.iter().any(|&v| branch(v, levels) == Branch::AboveFc))
        .count();
    (below, above)
}

/// Days where any region ends below MAD, and days where any region ends above FC.
pub fn qos(result: &ControllerResult, levels: &SoilLevels) -> (usize, usize) {
    qos_days(&result.days, levels)
}

/// Percentage of the baseline's water the candidate saves; negative when the
/// candidate uses more.
pub fn water_savings(candidate: &ControllerResult, baseline: &ControllerResult) -> Result<f64> {
    if candidate.season_length() != baseline.season_length() {
        return Err(Error::SeasonMismatch(candidate.season_length(), baseline.season_length()));
    }
    savings_percent(candidate.total_water, baseline.total_water)
}

pub fn savings_percent(candidate: f64, baseline: f64) -> Result<f64> {
    if baseline == 0.0 {
        return Err(Error::ZeroBaseline);
    }
    Ok(100.0 * (baseline - candidate) / baseline)
}

/// Runs one controller for the whole season. With a shield, each proposal is
/// screened and the ET baseline takes over on triggered days.
pub fn run_season(
    setup: &SeasonSetup,
    name: &str,
    controller: &dyn Controller,
    shield: Option<&ShieldConfig>,
) -> Result<ControllerResult> {
    let mut env = IrrigationEnv::new(setup.env.clone(), Arc::clone(&setup.weather))?;
    let mut state = env.reset(setup.env_seed)?;
    let fallback = EtController { a_max: setup.env.a_max };
    let mut days = Vec::with_capacity(setup.days());
    while !env.done() {
        let decision = controller.decide(&state)?;
        let (action, source, deficit_sum, triggered) = match shield {
            Some(cfg) => {
                let (action, report) = screen(cfg, &state, &decision.action, &fallback)?;
                let source = if report.triggered {
                    DecisionSource::ShieldFallback
                } else {
                    decision.source
                };
                (action, source, report.deficit_sum, report.triggered)
            }
            None => (decision.action, decision.source, 0.0, false),
        };
        let date = state.weather_today.date;
        let day = state.day_in_episode;
        let t = env.step(&action)?;
        days.push(DayRecord {
            day,
            date,
            action: t.action.0.clone(),
            v: t.next_state.v.clone(),
            source,
            deficit_sum,
            triggered,
        });
        state = t.next_state;
    }
    Ok(ControllerResult::from_days(name, days, &setup.levels()))
}

/// The roster names understood by [`build_roster`].
pub const ROSTER: [&str; 5] = ["ET", "sensor", "DRLIC", "DRLIC_MAD", "DRLIC_noshield"];

/// A controller plus whether it runs behind the shield.
pub struct RosterEntry {
    pub name: String,
    pub controller: Box<dyn Controller>,
    pub shielded: bool,
}

/// Trained policies the DRLIC roster entries draw on.
#[derive(Debug, Clone, Default)]
pub struct Policies {
    pub full: Option<PolicySnapshot>,
    pub mad_only: Option<PolicySnapshot>,
}

pub fn build_roster(cfg: &RunConfig, shield: &ShieldConfig, policies: &Policies) -> Result<Vec<RosterEntry>> {
    let missing = |which: &str| Error::Config(format!("roster needs a trained {which} policy"));
    cfg.controllers
        .iter()
        .map(|name| {
            let (controller, shielded): (Box<dyn Controller>, bool) = match name.as_str() {
                "ET" => (Box::new(EtController { a_max: cfg.env.a_max }), false),
                "sensor" => (Box::new(cfg.sensor_controller(shield)?), false),
                "DRLIC" => (
                    Box::new(DrlicController {
                        policy: policies.full.clone().ok_or_else(|| missing("full-reward"))?,
                    }),
                    true,
                ),
                "DRLIC_MAD" => (
                    Box::new(DrlicController {
                        policy: policies.mad_only.clone().ok_or_else(|| missing("MAD-only"))?,
                    }),
                    true,
                ),
                "DRLIC_noshield" => (
                    Box::new(DrlicController {
                        policy: policies.full.clone().ok_or_else(|| missing("full-reward"))?,
                    }),
                    false,
                ),
                other => return Err(Error::Config(format!("unknown controller `{other}`"))),
            };
            Ok(RosterEntry {
                name: name.clone(),
                controller,
                shielded,
            })
        })
        .collect()
}

/// Results of one roster over one paired season.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub seed: u64,
    pub config_hash: String,
    pub levels: SoilLevels,
    pub entries: Vec<ControllerResult>,
}

impl ExperimentResult {
    pub fn get(&self, name: &str) -> Option<&ControllerResult> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Runs every roster entry on the same weather, initial soil and noise.
/// Entries run in parallel; results keep roster order.
pub fn run_roster(
    setup: &SeasonSetup,
    roster: &[RosterEntry],
    shield: &ShieldConfig,
) -> Result<Vec<ControllerResult>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = roster
            .iter()
            .map(|entry| {
                scope.spawn(move || {
                    let s = entry.shielded.then_some(shield);
                    run_season(setup, &entry.name, entry.controller.as_ref(), s)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("season worker panicked"))
            .collect()
    })
}

pub fn run_experiment(cfg: &RunConfig, policies: &Policies) -> Result<ExperimentResult> {
    let setup = SeasonSetup::from_config(cfg)?;
    let shield = cfg.shield_config()?;
    let roster = build_roster(cfg, &shield, policies)?;
    Ok(ExperimentResult {
        seed: cfg.seed,
        config_hash: cfg.hash()?,
        levels: setup.levels(),
        entries: run_roster(&setup, &roster, &shield)?,
    })
}

/// A policy that irrigates `factor` times what `policy` would.
pub fn adversarial(policy: PolicySnapshot, factor: f64) -> ScaledController<DrlicController> {
    let a_max = policy.a_max;
    ScaledController {
        inner: DrlicController { policy },
        factor,
        a_max,
    }
}

/// Row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub controller: String,
    pub water: f64,
    /// Savings relative to the ET baseline, percent; empty without one.
    pub savings_vs_et: Option<f64>,
    pub days_below_mad: usize,
    pub days_above_fc: usize,
    pub trigger_days: usize,
}

pub fn summarize(result: &ExperimentResult) -> Vec<SummaryRow> {
    let et = result.get("ET");
    result
        .entries
        .iter()
        .map(|e| SummaryRow {
            controller: e.name.clone(),
            water: e.total_water,
            savings_vs_et: et.and_then(|b| water_savings(e, b).ok()),
            days_below_mad: e.days_below_mad,
            days_above_fc: e.days_above_fc,
            trigger_days: e.shield_trigger_days,
        })
        .collect()
}

pub fn format_table(rows: &[SummaryRow]) -> String {
    let mut out = format!(
        "{:<16} {:>10} {:>14} {:>15} {:>14} {:>13}\n",
        "controller", "water", "savings_vs_ET", "days_below_mad", "days_above_fc", "trigger_days"
    );
    for r in rows {
        let savings = r.savings_vs_et.map_or_else(|| "-".to_string(), |s| format!("{s:.2}%"));
        out.push_str(&format!(
            "{:<16} {:>10.3} {:>14} {:>15} {:>14} {:>13}\n",
            r.controller, r.water, savings, r.days_below_mad, r.days_above_fc, r.trigger_days
        ));
    }
    out
}

//! Result files: `daily.csv` (one row per controller, day and region),
//! `transitions.csv` (one row per controller and day with the shield log),
//! `summary.csv` and `manifest.json`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::config::{derive_seed, RunConfig, SeedUse};
use super::season::{summarize, ControllerResult, DayRecord, ExperimentResult, SummaryRow};
use crate::controllers::DecisionSource;
use crate::error::{Error, Result};
use crate::hydrology::SoilLevels;

pub const DAILY_CSV: &str = "daily.csv";
pub const TRANSITIONS_CSV: &str = "transitions.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const MANIFEST_JSON: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DailyRow {
    controller: String,
    day: usize,
    date: NaiveDate,
    region: usize,
    v: f64,
    action: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TransitionRow {
    controller: String,
    day: usize,
    date: NaiveDate,
    water: f64,
    deficit_sum: f64,
    triggered: bool,
    source: DecisionSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub crate_version: String,
    pub config_hash: String,
    pub seed: u64,
    /// Seeds derived from the master seed, by use.
    pub derived_seeds: BTreeMap<String, u64>,
    pub days: usize,
    pub n_regions: usize,
    pub levels: SoilLevels,
    pub controllers: Vec<String>,
}

impl Manifest {
    pub fn new(result: &ExperimentResult, cfg: Option<&RunConfig>) -> Self {
        let mut derived_seeds = BTreeMap::new();
        derived_seeds.insert("eval_weather".into(), derive_seed(result.seed, SeedUse::EvalWeather));
        derived_seeds.insert("eval_env".into(), derive_seed(result.seed, SeedUse::EvalEnv));
        derived_seeds.insert("training".into(), derive_seed(result.seed, SeedUse::Training));
        if let Some(cfg) = cfg {
            for i in 0..cfg.weather.training_seasons {
                derived_seeds.insert(format!("training_weather_{i}"), derive_seed(result.seed, SeedUse::TrainingWeather(i)));
            }
            for i in 0..cfg.env.n_regions {
                derived_seeds.insert(format!("identification_{i}"), derive_seed(result.seed, SeedUse::Identification(i)));
            }
        }
        let first = result.entries.first();
        Self {
            crate_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: result.config_hash.clone(),
            seed: result.seed,
            derived_seeds,
            days: first.map_or(0, |e| e.season_length()),
            n_regions: first.and_then(|e| e.days.first()).map_or(0, |d| d.v.len()),
            levels: result.levels,
            controllers: result.entries.iter().map(|e| e.name.clone()).collect(),
        }
    }
}

/// Writes all result files into `dir`, creating it if needed.
pub fn write_results(dir: impl AsRef<Path>, result: &ExperimentResult, cfg: Option<&RunConfig>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;

    let mut daily = csv::Writer::from_path(dir.join(DAILY_CSV))?;
    let mut transitions = csv::Writer::from_path(dir.join(TRANSITIONS_CSV))?;
    for entry in &result.entries {
        for (d, water) in entry.days.iter().zip(&entry.daily_water) {
            for (region, (v, a)) in d.v.iter().zip(&d.action).enumerate() {
                daily.serialize(DailyRow {
                    controller: entry.name.clone(),
                    day: d.day,
                    date: d.date,
                    region,
                    v: *v,
                    action: *a,
                })?;
            }
            transitions.serialize(TransitionRow {
                controller: entry.name.clone(),
                day: d.day,
                date: d.date,
                water: *water,
                deficit_sum: d.deficit_sum,
                triggered: d.triggered,
                source: d.source,
            })?;
        }
    }
    daily.flush()?;
    transitions.flush()?;

    write_summary_csv(dir.join(SUMMARY_CSV), &summarize(result))?;

    let manifest = Manifest::new(result, cfg);
    serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join(MANIFEST_JSON))?), &manifest)?;
    Ok(())
}

pub fn write_summary_csv(path: impl AsRef<Path>, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary_csv(path: impl AsRef<Path>) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    Ok(serde_json::from_reader(File::open(dir.as_ref().join(MANIFEST_JSON))?)?)
}

/// Rebuilds an [`ExperimentResult`] from the files [`write_results`] wrote.
pub fn load_results(dir: impl AsRef<Path>) -> Result<ExperimentResult> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let mut logs: BTreeMap<String, Vec<DayRecord>> = BTreeMap::new();

    let mut transitions = csv::Reader::from_path(dir.join(TRANSITIONS_CSV))?;
    for row in transitions.deserialize::<TransitionRow>() {
        let row = row?;
        let days = logs.entry(row.controller).or_default();
        if row.day != days.len() {
            return Err(Error::Config(format!("transition log out of order at day {}", row.day)));
        }
        days.push(DayRecord {
            day: row.day,
            date: row.date,
            action: vec![0.0; manifest.n_regions],
            v: vec![0.0; manifest.n_regions],
            source: row.source,
            deficit_sum: row.deficit_sum,
            triggered: row.triggered,
        });
    }

    let mut daily = csv::Reader::from_path(dir.join(DAILY_CSV))?;
    for row in daily.deserialize::<DailyRow>() {
        let row = row?;
        let record = logs
            .get_mut(&row.controller)
            .and_then(|days| days.get_mut(row.day))
            .filter(|_| row.region < manifest.n_regions)
            .ok_or_else(|| {
                Error::Config(format!(
                    "daily row for {} day {} region {} has no transition",
                    row.controller, row.day, row.region
                ))
            })?;
        record.v[row.region] = row.v;
        record.action[row.region] = row.action;
    }

    let entries = manifest
        .controllers
        .iter()
        .map(|name| {
            let days = logs.remove(name).unwrap_or_default();
            ControllerResult::from_days(name.clone(), days, &manifest.levels)
        })
        .collect();
    Ok(ExperimentResult {
        seed: manifest.seed,
        config_hash: manifest.config_hash,
        levels: manifest.levels,
        entries,
    })
}

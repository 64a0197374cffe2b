//! Run configuration, read from TOML.
//!
//! Every table and key is optional; omitted values take the defaults below.
//!
//! ```toml
//! seed = 7
//! days = 246
//! output_dir = "results"
//! controllers = ["ET", "sensor", "DRLIC", "DRLIC_MAD", "DRLIC_noshield"]
//!
//! [env]
//! n_regions = 2
//! process_noise_std = 0.01
//! reward = "full"            # or "mad-only"
//!
//! [weather]
//! # csv = "station.csv"      # otherwise a season is synthesized
//! training_seasons = 10
//! [weather.climate]
//! et_mean = 0.2
//!
//! [trainer]
//! max_iterations = 1000
//!
//! [shield]
//! enabled = true
//! detector_threshold = 0.0
//! model_source = "identified"   # or "truth"
//! top_up = true
//! ```

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{config_hash, SeasonPool, TrainerConfig};
use crate::controllers::{SensorController, SensorControllerConfig};
use crate::env::{default_dynamics, EnvConfig, RewardKind, RewardParams, DEFAULT_A_MAX, DEFAULT_IRRIGATION_RATE};
use crate::error::{Error, Result};
use crate::hydrology::SoilProfile;
use crate::predictor::{fit, synthesize_observations, PredictorModel};
use crate::safety::{DeficitAggregation, ShieldConfig};
use crate::weather::{load_weather_csv_with, synthesize_season, ClimateParams, ForecastNoise, WeatherDay};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub n_regions: usize,
    pub irrigation_rate: f64,
    pub a_max: f64,
    pub episode_length: usize,
    pub process_noise_std: f64,
    pub reward: RewardKind,
    pub lambda1: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub lambda3: f64,
    pub mu3: f64,
    /// Ground-truth dynamics per region; defaults to the testbed trees.
    pub dynamics: Option<Vec<PredictorModel>>,
}

impl Default for EnvSection {
    fn default() -> Self {
        let env = EnvConfig::default();
        let r = env.reward_params;
        Self {
            n_regions: env.n_regions,
            irrigation_rate: DEFAULT_IRRIGATION_RATE,
            a_max: DEFAULT_A_MAX,
            episode_length: env.episode_length,
            process_noise_std: env.process_noise_std,
            reward: RewardKind::Full,
            lambda1: r.lambda1,
            mu1: r.mu1,
            mu2: r.mu2,
            lambda3: r.lambda3,
            mu3: r.mu3,
            dynamics: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeatherSection {
    /// Station log to evaluate on; when absent a season is synthesized.
    pub csv: Option<PathBuf>,
    pub climate: ClimateParams,
    /// Forecast error model; defaults to one scaled to the climate.
    pub forecast_noise: Option<ForecastNoise>,
    /// Synthetic seasons used for training.
    pub training_seasons: usize,
}

impl Default for WeatherSection {
    fn default() -> Self {
        Self {
            csv: None,
            climate: ClimateParams::default(),
            forecast_noise: None,
            training_seasons: 10,
        }
    }
}

impl WeatherSection {
    pub fn noise(&self) -> ForecastNoise {
        self.forecast_noise
            .unwrap_or_else(|| ForecastNoise::for_climate(&self.climate))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShieldModelSource {
    /// Fit each region's model to a synthetic identification log.
    #[default]
    Identified,
    /// Use the environment's ground-truth dynamics.
    Truth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShieldSection {
    pub enabled: bool,
    pub detector_threshold: f64,
    pub aggregation: DeficitAggregation,
    pub model_source: ShieldModelSource,
    /// Raise a fallback that is still predicted below MAD up to MAD, capped
    /// at `a_max`.
    pub top_up: bool,
    /// Days in each region's identification log.
    pub identify_days: usize,
    /// Equation noise of the identification log, inches.
    pub identify_noise_std: f64,
    /// Explicit models, overriding `model_source`.
    pub models: Option<Vec<PredictorModel>>,
}

impl Default for ShieldSection {
    fn default() -> Self {
        Self {
            enabled: true,
            detector_threshold: 0.0,
            aggregation: DeficitAggregation::PositivePart,
            model_source: ShieldModelSource::Identified,
            top_up: true,
            identify_days: 60,
            identify_noise_std: 0.01,
            models: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every stochastic component derives its seed from it.
    pub seed: u64,
    /// Season length in daily decisions.
    pub days: usize,
    pub output_dir: Option<PathBuf>,
    pub controllers: Vec<String>,
    pub profile: SoilProfile,
    pub env: EnvSection,
    pub weather: WeatherSection,
    pub trainer: TrainerConfig,
    pub shield: ShieldSection,
    pub sensor: SensorControllerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            days: 246,
            output_dir: None,
            controllers: super::ROSTER.iter().map(|s| s.to_string()).collect(),
            profile: SoilProfile::default(),
            env: EnvSection::default(),
            weather: WeatherSection::default(),
            trainer: TrainerConfig::default(),
            shield: ShieldSection::default(),
            sensor: SensorControllerConfig::default(),
        }
    }
}

/// Labels for the seeds derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedUse {
    EvalWeather,
    EvalEnv,
    TrainingWeather(usize),
    Training,
    Identification(usize),
    /// Action sampling when a policy is evaluated stochastically.
    PolicySampling,
}

/// Mixes the master seed with a label (SplitMix64 finaliser).
pub fn derive_seed(master: u64, label: SeedUse) -> u64 {
    let tag: u64 = match label {
        SeedUse::EvalWeather => 1,
        SeedUse::EvalEnv => 2,
        SeedUse::Training => 3,
        SeedUse::PolicySampling => 4,
        SeedUse::TrainingWeather(i) => 0x1000 + i as u64,
        SeedUse::Identification(i) => 0x2000 + i as u64,
    };
    let mut z = master ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative weather CSV path resolves against the
    /// config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml_str(&std::fs::read_to_string(path)?)?;
        if let (Some(csv), Some(dir)) = (cfg.weather.csv.as_mut(), path.parent()) {
            if csv.is_relative() {
                *csv = dir.join(&*csv);
            }
        }
        if let Some(csv) = &cfg.weather.csv {
            if !csv.exists() {
                return Err(Error::Config(format!("weather file {} does not exist", csv.display())));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Fifteen summer days: the field-trial preset.
    pub fn field15() -> Self {
        let mut cfg = Self {
            days: 15,
            ..Self::default()
        };
        cfg.weather.climate.start = chrono::NaiveDate::from_ymd_opt(2021, 7, 10).expect("valid date");
        cfg
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "field15" => Ok(Self::field15()),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.days == 0 {
            return Err(Error::Config("season must have at least one day".into()));
        }
        self.profile.validate()?;
        self.env_config()?.validate()?;
        self.trainer.validate()?;
        if self.trainer.episode_length != self.env.episode_length {
            return Err(Error::Config(format!(
                "trainer episode length {} differs from env episode length {}",
                self.trainer.episode_length, self.env.episode_length
            )));
        }
        if self.weather.training_seasons == 0 {
            return Err(Error::Config("need at least one training season".into()));
        }
        if !(self.shield.detector_threshold >= 0.0) {
            return Err(Error::Config("shield detector threshold must be non-negative".into()));
        }
        self.sensor.validate(&self.profile.levels())?;
        for name in &self.controllers {
            if !super::ROSTER.contains(&name.as_str()) {
                return Err(Error::Config(format!(
                    "unknown controller `{name}` (expected one of {:?})",
                    super::ROSTER
                )));
            }
        }
        Ok(())
    }

    pub fn hash(&self) -> Result<String> {
        config_hash(self)
    }

    /// Environment for training episodes (episode length from the config).
    pub fn env_config(&self) -> Result<EnvConfig> {
        let levels = self.profile.levels();
        let e = &self.env;
        let dynamics = match &e.dynamics {
            Some(d) if d.len() == 1 => vec![d[0]; e.n_regions],
            Some(d) => d.clone(),
            None => {
                let trees = default_dynamics(&levels);
                (0..e.n_regions).map(|i| trees[i % trees.len()]).collect()
            }
        };
        Ok(EnvConfig {
            n_regions: e.n_regions,
            irrigation_rate: e.irrigation_rate,
            a_max: e.a_max,
            episode_length: e.episode_length,
            reward_params: RewardParams {
                lambda1: e.lambda1,
                mu1: e.mu1,
                mu2: e.mu2,
                lambda3: e.lambda3,
                mu3: e.mu3,
                levels,
            },
            reward_kind: e.reward,
            profile: self.profile.clone(),
            dynamics,
            process_noise_std: e.process_noise_std,
        })
    }

    /// Environment for a whole-season evaluation run.
    pub fn season_env_config(&self) -> Result<EnvConfig> {
        Ok(EnvConfig {
            episode_length: self.days,
            ..self.env_config()?
        })
    }

    /// Evaluation weather: `days + 1` days, since the last decision also needs
    /// the following day's weather.
    pub fn evaluation_weather(&self) -> Result<Vec<WeatherDay>> {
        let needed = self.days + 1;
        let days = match &self.weather.csv {
            Some(path) => load_weather_csv_with(path, &self.weather.noise(), derive_seed(self.seed, SeedUse::EvalWeather))?,
            None => synthesize_season(
                derive_seed(self.seed, SeedUse::EvalWeather),
                needed,
                &self.weather.climate,
                &self.weather.noise(),
            ),
        };
        if days.len() < needed {
            return Err(Error::WeatherTooShort {
                needed,
                available: days.len(),
            });
        }
        Ok(days[..needed].to_vec())
    }

    /// Training seasons, synthesized independently of the evaluation season.
    pub fn training_weather(&self) -> Vec<Vec<WeatherDay>> {
        (0..self.weather.training_seasons)
            .map(|i| {
                synthesize_season(
                    derive_seed(self.seed, SeedUse::TrainingWeather(i)),
                    self.days.max(self.env.episode_length) + 1,
                    &self.weather.climate,
                    &self.weather.noise(),
                )
            })
            .collect()
    }

    /// Training environment pool for the given reward.
    pub fn training_pool(&self, reward: RewardKind) -> Result<SeasonPool> {
        let mut env = self.env_config()?;
        env.reward_kind = reward;
        SeasonPool::new(env, self.training_weather())
    }

    /// Shield models per region, identified from synthetic logs of the true
    /// dynamics unless configured otherwise.
    pub fn shield_models(&self) -> Result<Vec<PredictorModel>> {
        if let Some(models) = &self.shield.models {
            return Ok(models.clone());
        }
        let env = self.env_config()?;
        let levels = env.levels();
        match self.shield.model_source {
            ShieldModelSource::Truth => Ok(env.dynamics.clone()),
            ShieldModelSource::Identified => env
                .dynamics
                .iter()
                .enumerate()
                .map(|(i, truth)| {
                    let seed = derive_seed(self.seed, SeedUse::Identification(i));
                    let weather = synthesize_season(seed, self.shield.identify_days, &self.weather.climate, &ForecastNoise::NONE);
                    let v0 = 0.5 * (levels.v_mad + levels.v_fc);
                    let rows = synthesize_observations(truth, &weather, v0, env.a_max, self.shield.identify_noise_std, seed);
                    Ok(fit(&rows)?.capped_at_fc(levels.v_fc))
                })
                .collect(),
        }
    }

    pub fn shield_config(&self) -> Result<ShieldConfig> {
        let levels = self.profile.levels();
        Ok(ShieldConfig {
            models: self.shield_models()?,
            detector_threshold: self.shield.detector_threshold,
            enabled: self.shield.enabled,
            aggregation: self.shield.aggregation,
            top_up_cap: self.shield.top_up.then_some(self.env.a_max),
            levels,
        })
    }

    /// The sensor baseline converts its fill target to inches with the shield
    /// model's input coefficient (first region's model).
    pub fn sensor_controller(&self, shield: &ShieldConfig) -> Result<SensorController> {
        let c2 = shield.models.first().ok_or(Error::UnfittedShield(0))?.c2;
        Ok(SensorController {
            config: self.sensor,
            c2,
            a_max: self.env.a_max,
        })
    }

    /// Seeded RNG for one named use.
    pub fn rng(&self, label: SeedUse) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(derive_seed(self.seed, label))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_is_the_default() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::field15();
        cfg.trainer.max_iterations = 12;
        cfg.env.reward = RewardKind::MadOnly;
        cfg.shield.model_source = ShieldModelSource::Truth;
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_toml_overrides() {
        let cfg = RunConfig::from_toml_str(
            "seed = 3\ndays = 20\n[env]\nreward = \"mad-only\"\nprocess_noise_std = 0.0\n[shield]\nenabled = false\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.env.reward, RewardKind::MadOnly);
        assert!(!cfg.shield.enabled);
        assert_eq!(cfg.trainer, TrainerConfig::default());
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(matches!(RunConfig::from_toml_str("bogus = 1"), Err(Error::Toml(_))));
        assert!(matches!(RunConfig::from_toml_str("days = 0"), Err(Error::Config(_))));
        assert!(matches!(
            RunConfig::from_toml_str("controllers = [\"magic\"]"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_toml_str("[shield]\ndetector_threshold = -1.0"),
            Err(Error::Config(_))
        ));
        assert!(RunConfig::from_toml_str("[trainer]\ngamma = 2.0").is_err());
    }

    #[test]
    fn missing_weather_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[weather]\ncsv = \"nope.csv\"\n").unwrap();
        assert!(matches!(RunConfig::load(&path), Err(Error::Config(_))));
    }

    #[test]
    fn derived_seeds_differ_by_use() {
        let uses = [
            SeedUse::EvalWeather,
            SeedUse::EvalEnv,
            SeedUse::Training,
            SeedUse::TrainingWeather(0),
            SeedUse::TrainingWeather(1),
            SeedUse::Identification(0),
        ];
        let seeds: std::collections::HashSet<u64> = uses.iter().map(|u| derive_seed(7, *u)).collect();
        assert_eq!(seeds.len(), uses.len());
        assert_ne!(derive_seed(7, SeedUse::EvalWeather), derive_seed(8, SeedUse::EvalWeather));
    }

    #[test]
    fn evaluation_weather_has_one_extra_day() {
        let cfg = RunConfig::default();
        let w = cfg.evaluation_weather().unwrap();
        assert_eq!(w.len(), 247);
        assert_eq!(w[0].date, chrono::NaiveDate::from_ymd_opt(2021, 3, 1).unwrap());
    }

    #[test]
    fn identified_shield_models_are_close_to_truth() {
        let cfg = RunConfig::default();
        let models = cfg.shield_models().unwrap();
        let truth = cfg.env_config().unwrap().dynamics;
        assert_eq!(models.len(), 2);
        for (m, t) in models.iter().zip(&truth) {
            assert!((m.c2 - t.c2).abs() < 0.05, "{m:?} vs {t:?}");
            assert!(m.ceiling.is_some());
        }
    }

    #[test]
    fn region_dynamics_cycle_through_trees() {
        let mut cfg = RunConfig::default();
        cfg.env.n_regions = 3;
        let env = cfg.env_config().unwrap();
        assert_eq!(env.dynamics.len(), 3);
        assert_eq!(env.dynamics[0], env.dynamics[2]);
    }
}

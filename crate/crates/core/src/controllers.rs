//! Irrigation controllers behind one interface: the trained agent and the two
//! rule-based baselines.

use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::PolicySnapshot;
use crate::env::{normalize, ActionVector, EnvState};
use crate::error::{Error, Result};
use crate::hydrology::SoilLevels;

/// Where an executed action came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionSource {
    Agent,
    EtBaseline,
    SensorBaseline,
    ShieldFallback,
}

impl DecisionSource {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Agent => "agent",
            Self::EtBaseline => "et_baseline",
            Self::SensorBaseline => "sensor_baseline",
            Self::ShieldFallback => "shield_fallback",
        }
    }
}

impl std::fmt::Display for DecisionSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DecisionSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "agent" => Self::Agent,
            "et_baseline" => Self::EtBaseline,
            "sensor_baseline" => Self::SensorBaseline,
            "shield_fallback" => Self::ShieldFallback,
            other => return Err(Error::Config(format!("unknown decision source `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerDecision {
    pub action: ActionVector,
    pub source: DecisionSource,
}

/// A daily irrigation decision rule. Implementations are pure in the state.
pub trait Controller: Send + Sync {
    fn decide(&self, state: &EnvState) -> Result<ControllerDecision>;
}

/// Replaces yesterday's net loss, `ET − precipitation`, uniformly in every
/// region.
pub fn et_controller(state: &EnvState, a_max: f64) -> ActionVector {
    let day = &state.weather_today;
    let a = (day.et - day.precip).clamp(0.0, a_max);
    ActionVector::uniform(state.n_regions(), a)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtController {
    pub a_max: f64,
}

impl Controller for EtController {
    fn decide(&self, state: &EnvState) -> Result<ControllerDecision> {
        Ok(ControllerDecision {
            action: et_controller(state, self.a_max),
            source: DecisionSource::EtBaseline,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorControllerConfig {
    /// Start watering below this level, inches.
    pub lower_threshold: f64,
    /// Fill target, inches.
    pub upper_threshold: f64,
}

impl Default for SensorControllerConfig {
    fn default() -> Self {
        Self {
            lower_threshold: 4.96,
            upper_threshold: 6.97,
        }
    }
}

impl SensorControllerConfig {
    pub fn validate(&self, levels: &SoilLevels) -> Result<()> {
        let (lo, hi) = (self.lower_threshold, self.upper_threshold);
        if !(levels.v_mad <= lo && lo < hi && hi <= levels.v_fc) {
            return Err(Error::Config(format!(
                "sensor thresholds need v_mad {:.3} <= lower {lo} < upper {hi} <= v_fc {:.3}",
                levels.v_mad, levels.v_fc
            )));
        }
        Ok(())
    }
}

/// Per region: below the lower threshold, apply what the assumed input
/// coefficient `c2` says is needed to reach the upper threshold (capped at
/// `a_max`); otherwise apply nothing.
pub fn sensor_controller(state: &EnvState, config: &SensorControllerConfig, c2: f64, a_max: f64) -> ActionVector {
    ActionVector(
        state
            .v
            .iter()
            .map(|&v| {
                if v < config.lower_threshold {
                    let fill = if c2 > 0.0 { (config.upper_threshold - v) / c2 } else { a_max };
                    fill.clamp(0.0, a_max)
                } else {
                    0.0
                }
            })
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorController {
    pub config: SensorControllerConfig,
    /// Input coefficient of the shield's predictor.
    pub c2: f64,
    pub a_max: f64,
}

impl Controller for SensorController {
    fn decide(&self, state: &EnvState) -> Result<ControllerDecision> {
        Ok(ControllerDecision {
            action: sensor_controller(state, &self.config, self.c2, self.a_max),
            source: DecisionSource::SensorBaseline,
        })
    }
}

/// Deterministic deployment action of a trained policy: the squashed mean.
pub fn drlic_controller(policy: &PolicySnapshot, state: &EnvState) -> Result<ActionVector> {
    let obs = normalize(state, &policy.norm)?;
    policy.deterministic_action(&obs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrlicController {
    pub policy: PolicySnapshot,
}

impl Controller for DrlicController {
    fn decide(&self, state: &EnvState) -> Result<ControllerDecision> {
        Ok(ControllerDecision {
            action: drlic_controller(&self.policy, state)?,
            source: DecisionSource::Agent,
        })
    }
}

/// A trained policy run with sampled actions, as during training.
#[derive(Debug)]
pub struct SampledDrlicController {
    pub policy: PolicySnapshot,
    rng: Mutex<ChaCha8Rng>,
}

impl SampledDrlicController {
    pub fn new(policy: PolicySnapshot, seed: u64) -> Self {
        Self {
            policy,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }
}

impl Controller for SampledDrlicController {
    fn decide(&self, state: &EnvState) -> Result<ControllerDecision> {
        let obs = normalize(state, &self.policy.norm)?;
        let mut rng = self.rng.lock().unwrap_or_else(|e| e.into_inner());
        Ok(ControllerDecision {
            action: self.policy.sample_action(&obs, &mut *rng)?.action,
            source: DecisionSource::Agent,
        })
    }
}

/// Scales another controller's actions, e.g. by zero to model an agent that
/// never irrigates.
#[derive(Debug, Clone)]
pub struct ScaledController<C> {
    pub inner: C,
    pub factor: f64,
    pub a_max: f64,
}

impl<C: Controller> Controller for ScaledController<C> {
    fn decide(&self, state: &EnvState) -> Result<ControllerDecision> {
        let d = self.inner.decide(state)?;
        Ok(ControllerDecision {
            action: ActionVector(d.action.iter().map(|a| (a * self.factor).clamp(0.0, self.a_max)).collect()),
            source: d.source,
        })
    }
}

impl Controller for Box<dyn Controller> {
    fn decide(&self, state: &EnvState) -> Result<ControllerDecision> {
        (**self).decide(state)
    }
}

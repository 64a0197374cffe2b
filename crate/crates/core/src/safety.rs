//! One-step safety shield: predict tomorrow's soil water for the proposed
//! action and hand the cycle to a fallback controller when the predicted
//! deficit below MAD exceeds a threshold.

use serde::{Deserialize, Serialize};

use crate::controllers::Controller;
use crate::env::{ActionVector, EnvState};
use crate::error::{Error, Result};
use crate::hydrology::SoilLevels;
use crate::predictor::PredictorModel;

/// How per-region deficits are combined into one detector value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeficitAggregation {
    /// `Σ max(0, v_mad − V̂_i)`: a wet region cannot hide a dry one.
    #[default]
    PositivePart,
    /// `Σ (v_mad − V̂_i)`.
    Signed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShieldConfig {
    /// Shield dynamics, one per region; a single model is shared by all.
    pub models: Vec<PredictorModel>,
    /// Trigger level on the aggregate predicted deficit, inches.
    #[serde(default)]
    pub detector_threshold: f64,
    #[serde(default = "enabled_default")]
    pub enabled: bool,
    #[serde(default)]
    pub aggregation: DeficitAggregation,
    /// When set, a fallback action that still leaves a region predicted
    /// below MAD is raised there to the least action meeting MAD, capped at
    /// this value. Without it the fallback can itself under-water, e.g. on a
    /// dry day after a rainy one.
    #[serde(default)]
    pub top_up_cap: Option<f64>,
    pub levels: SoilLevels,
}

fn enabled_default() -> bool {
    true
}

impl ShieldConfig {
    pub fn new(models: Vec<PredictorModel>, levels: SoilLevels) -> Self {
        Self {
            models,
            detector_threshold: 0.0,
            enabled: true,
            aggregation: DeficitAggregation::PositivePart,
            top_up_cap: None,
            levels,
        }
    }

    pub fn with_top_up(mut self, cap: f64) -> Self {
        self.top_up_cap = Some(cap);
        self
    }

    pub fn disabled(mut self) -> Self {
        self.enabled = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.detector_threshold >= 0.0) {
            return Err(Error::Config(format!(
                "detector threshold must be non-negative, got {}",
                self.detector_threshold
            )));
        }
        if let Some(cap) = self.top_up_cap {
            if !(cap >= 0.0) {
                return Err(Error::Config(format!("top-up cap must be non-negative, got {cap}")));
            }
        }
        Ok(())
    }

    fn model(&self, region: usize) -> Result<&PredictorModel> {
        let m = match self.models.len() {
            1 => &self.models[0],
            _ => self.models.get(region).ok_or(Error::UnfittedShield(region))?,
        };
        let coeffs = [m.c1, m.c2, m.c3, m.b];
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::UnfittedShield(region));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShieldReport {
    pub predicted_v_next: Vec<f64>,
    pub deficit_sum: f64,
    pub triggered: bool,
    pub substituted_action: Option<ActionVector>,
}

/// Predicted soil water after applying `action`, using tomorrow's forecast.
pub fn predict(config: &ShieldConfig, state: &EnvState, action: &ActionVector) -> Result<Vec<f64>> {
    if action.len() != state.n_regions() {
        return Err(Error::Dimension {
            expected: state.n_regions(),
            got: action.len(),
        });
    }
    let f = state.weather_next;
    state
        .v
        .iter()
        .zip(action.iter())
        .enumerate()
        .map(|(i, (&v, &a))| Ok(config.model(i)?.predict_next(v, a, f.precip, f.et)))
        .collect()
}

pub fn deficit(predicted: &[f64], v_mad: f64, aggregation: DeficitAggregation) -> f64 {
    match aggregation {
        DeficitAggregation::PositivePart => predicted.iter().map(|v| (v_mad - v).max(0.0)).sum(),
        DeficitAggregation::Signed => predicted.iter().map(|v| v_mad - v).sum(),
    }
}

fn top_up(config: &ShieldConfig, state: &EnvState, action: &mut ActionVector, cap: f64) -> Result<()> {
    let predicted = predict(config, state, action)?;
    for (i, (a, v_hat)) in action.0.iter_mut().zip(predicted).enumerate() {
        let c2 = config.model(i)?.c2;
        if v_hat < config.levels.v_mad && c2 > 0.0 {
            *a = (*a + (config.levels.v_mad - v_hat) / c2).min(cap).max(*a);
        }
    }
    Ok(())
}

/// Screens `proposed`. On a trigger the fallback's action is returned for this
/// cycle only; the next call screens the agent again. A disabled shield
/// passes every proposal through but still reports the deficit it would have
/// acted on.
pub fn screen<F: Controller + ?Sized>(
    config: &ShieldConfig,
    state: &EnvState,
    proposed: &ActionVector,
    fallback: &F,
) -> Result<(ActionVector, ShieldReport)> {
    config.validate()?;
    let predicted_v_next = predict(config, state, proposed)?;
    let deficit_sum = deficit(&predicted_v_next, config.levels.v_mad, config.aggregation);
    let triggered = config.enabled && deficit_sum > config.detector_threshold;
    let substituted_action = if triggered {
        let mut action = fallback.decide(state)?.action;
        if let Some(cap) = config.top_up_cap {
            top_up(config, state, &mut action, cap)?;
        }
        Some(action)
    } else {
        None
    };
    let action = substituted_action.clone().unwrap_or_else(|| proposed.clone());
    Ok((
        action,
        ShieldReport {
            predicted_v_next,
            deficit_sum,
            triggered,
            substituted_action,
        },
    ))
}

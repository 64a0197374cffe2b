//! Clipped-surrogate policy optimisation primitives.

use serde::{Deserialize, Serialize};

use super::policy::PolicySnapshot;
use crate::env::ActionVector;
use crate::error::{Error, Result};

/// One decision recorded during a rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutStep {
    /// Normalised observation the action was drawn from.
    pub obs: Vec<f64>,
    pub pre_squash: Vec<f64>,
    pub action: ActionVector,
    pub old_log_prob: f64,
    pub reward: f64,
}

/// Steps from complete episodes with their discounted returns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBatch {
    pub steps: Vec<RolloutStep>,
    pub returns: Vec<f64>,
    /// Position of each step within its episode.
    pub step_index: Vec<usize>,
    /// Sum of undiscounted rewards per episode.
    pub episode_totals: Vec<f64>,
}

impl RolloutBatch {
    pub fn from_episodes(episodes: Vec<Vec<RolloutStep>>, gamma: f64) -> Self {
        let mut batch = Self::default();
        for episode in episodes {
            let rewards: Vec<f64> = episode.iter().map(|s| s.reward).collect();
            batch.episode_totals.push(rewards.iter().sum());
            batch.returns.extend(returns_to_go(&rewards, gamma));
            batch.step_index.extend(0..episode.len());
            batch.steps.extend(episode);
        }
        batch
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn mean_episode_reward(&self) -> f64 {
        if self.episode_totals.is_empty() {
            return 0.0;
        }
        self.episode_totals.iter().sum::<f64>() / self.episode_totals.len() as f64
    }
}

/// `R_t = r_t + γ R_{t+1}`, with the return after the last step equal to zero.
pub fn returns_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *o = acc;
    }
    out
}

/// Returns shifted to zero mean and scaled to unit spread. A batch with no
/// spread has nothing to prefer, so every advantage is zero.
pub fn normalized_advantages(returns: &[f64]) -> Vec<f64> {
    let n = returns.len() as f64;
    if returns.is_empty() {
        return Vec::new();
    }
    let mean = returns.iter().sum::<f64>() / n;
    let std = (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std < 1e-12 {
        return vec![0.0; returns.len()];
    }
    returns.iter().map(|r| (r - mean) / std).collect()
}

/// `exp(log π_θ(a|s) − log π_θ_old(a|s))`, with the action given by its
/// pre-squash value.
/// How returns become advantages before the surrogate is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvantageMode {
    /// Batch-normalised returns-to-go.
    Normalized,
    /// Returns-to-go minus the batch mean return at the same step of the
    /// episode, then scaled to unit spread. Removes the spread that comes
    /// only from how many days remain, which no action can influence.
    #[default]
    StepBaseline,
}

/// Returns minus the mean return at the same step index, scaled to unit
/// spread; zero when nothing is left to prefer.
pub fn step_baseline_advantages(returns: &[f64], step_index: &[usize]) -> Vec<f64> {
    let len = step_index.iter().max().map_or(0, |m| m + 1);
    let mut sums = vec![0.0; len];
    let mut counts = vec![0usize; len];
    for (r, &t) in returns.iter().zip(step_index) {
        sums[t] += r;
        counts[t] += 1;
    }
    let centred: Vec<f64> = returns
        .iter()
        .zip(step_index)
        .map(|(r, &t)| r - sums[t] / counts[t] as f64)
        .collect();
    let n = centred.len().max(1) as f64;
    let std = (centred.iter().map(|c| c * c).sum::<f64>() / n).sqrt();
    if std < 1e-12 {
        return vec![0.0; centred.len()];
    }
    centred.iter().map(|c| c / std).collect()
}

impl RolloutBatch {
    pub fn advantages(&self, mode: AdvantageMode) -> Vec<f64> {
        match mode {
            AdvantageMode::Normalized => normalized_advantages(&self.returns),
            AdvantageMode::StepBaseline => step_baseline_advantages(&self.returns, &self.step_index),
        }
    }
}

pub fn importance_ratio(policy: &PolicySnapshot, old_log_prob: f64, obs: &[f64], pre_squash: &[f64]) -> Result<f64> {
    let w = (policy.log_prob(obs, pre_squash)? - old_log_prob).exp();
    if !w.is_finite() {
        return Err(Error::NonFinite("importance ratio"));
    }
    Ok(w)
}

/// `min(w·Â, clip(w, 1−ε, 1+ε)·Â)`.
pub fn clipped_surrogate(w: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = w.clamp(1.0 - epsilon, 1.0 + epsilon);
    (w * advantage).min(clipped * advantage)
}

/// Negative mean clipped surrogate over the whole batch, with advantages
/// normalised across the batch.
pub fn ppo_loss(batch: &RolloutBatch, policy: &PolicySnapshot, epsilon: f64) -> Result<f64> {
    let steps: Vec<&RolloutStep> = batch.steps.iter().collect();
    surrogate_loss(policy, &steps, &normalized_advantages(&batch.returns), epsilon)
}

pub fn ppo_loss_and_grad(batch: &RolloutBatch, policy: &PolicySnapshot, epsilon: f64) -> Result<(f64, Vec<f64>)> {
    let steps: Vec<&RolloutStep> = batch.steps.iter().collect();
    surrogate_loss_and_grad(policy, &steps, &normalized_advantages(&batch.returns), epsilon)
}

/// Negative mean clipped surrogate over `steps` with given advantages.
pub fn surrogate_loss(policy: &PolicySnapshot, steps: &[&RolloutStep], advantages: &[f64], epsilon: f64) -> Result<f64> {
    if steps.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (step, adv) in steps.iter().zip(advantages) {
        total += clipped_surrogate(importance_ratio(policy, step.old_log_prob, &step.obs, &step.pre_squash)?, *adv, epsilon);
    }
    Ok(-total / steps.len() as f64)
}

/// Loss and its gradient with respect to the flat parameters. Samples whose
/// clipped branch is active contribute no gradient.
pub fn surrogate_loss_and_grad(
    policy: &PolicySnapshot,
    steps: &[&RolloutStep],
    advantages: &[f64],
    epsilon: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; policy.theta.len()];
    if steps.is_empty() {
        return Ok((0.0, grad));
    }
    let m = steps.len() as f64;
    let mut total = 0.0;
    for (step, &adv) in steps.iter().zip(advantages) {
        let mut ratio = f64::NAN;
        policy.log_prob_with_grad_by(&step.obs, &step.pre_squash, &mut grad, |lp| {
            let w = (lp - step.old_log_prob).exp();
            ratio = w;
            let unclipped = w * adv;
            let clipped = w.clamp(1.0 - epsilon, 1.0 + epsilon) * adv;
            total += unclipped.min(clipped);
            // d(−w·Â/M)/dθ = −(Â·w/M) · d log π/dθ, zero on the clipped branch.
            if unclipped <= clipped {
                -adv * w / m
            } else {
                0.0
            }
        })?;
        if !ratio.is_finite() {
            return Err(Error::NonFinite("importance ratio"));
        }
    }
    let loss = -total / m;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("policy loss"));
    }
    Ok((loss, grad))
}

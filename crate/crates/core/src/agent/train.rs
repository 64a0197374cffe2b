//! Rollout collection and the clipped-surrogate training loop.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamParams};
use super::persist::config_hash;
use super::policy::PolicySnapshot;
use super::ppo::{surrogate_loss_and_grad, AdvantageMode, RolloutBatch, RolloutStep};
use crate::env::{normalize, EnvConfig, EnvState, IrrigationEnv, NormStats};
use crate::error::{Error, Result};
use crate::weather::WeatherDay;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub clip_epsilon: f64,
    pub minibatch_size: usize,
    pub max_iterations: usize,
    pub workers: usize,
    pub episode_length: usize,
    /// Relative change of the windowed mean reward regarded as converged.
    pub convergence_band: f64,
    /// Iterations per averaging window in the convergence rule.
    pub convergence_window: usize,
    /// Convergence is not declared before this many iterations.
    pub min_iterations: usize,
    pub episodes_per_worker: usize,
    /// Passes over each collected batch.
    pub update_epochs: usize,
    pub advantage: AdvantageMode,
    /// Rescales each minibatch gradient to at most this norm; zero disables.
    pub max_grad_norm: f64,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        let adam = AdamParams::default();
        Self {
            learning_rate: adam.learning_rate,
            gamma: 0.99,
            clip_epsilon: 0.3,
            minibatch_size: 128,
            max_iterations: 1000,
            workers: 2,
            episode_length: 30,
            convergence_band: 0.03,
            convergence_window: 10,
            min_iterations: 100,
            episodes_per_worker: 16,
            update_epochs: 2,
            advantage: AdvantageMode::default(),
            max_grad_norm: 0.5,
            hidden: vec![256, 256],
            init_log_std: -0.5,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_epsilon: adam.epsilon,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.clip_epsilon > 0.0) {
            return bad("clip epsilon must be positive");
        }
        if self.minibatch_size == 0 {
            return bad("minibatch size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.workers == 0 || self.episodes_per_worker == 0 || self.update_epochs == 0 {
            return bad("workers, episodes per worker and update epochs must be at least 1");
        }
        if self.episode_length == 0 || self.convergence_window == 0 {
            return bad("episode length and convergence window must be at least 1");
        }
        if !(self.convergence_band >= 0.0) {
            return bad("convergence band must be non-negative");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }
}

/// Produces a freshly reset environment for one episode.
pub trait EnvFactory: Sync {
    fn observation_stats(&self) -> NormStats;
    fn env_config(&self) -> &EnvConfig;
    fn episode(&self, rng: &mut ChaCha8Rng) -> Result<(IrrigationEnv, EnvState)>;
}

/// Episodes start at a uniformly drawn day of a uniformly drawn season.
#[derive(Debug, Clone)]
pub struct SeasonPool {
    pub config: EnvConfig,
    pub seasons: Vec<Arc<[WeatherDay]>>,
    pub stats: NormStats,
}

impl SeasonPool {
    pub fn new(config: EnvConfig, seasons: Vec<Vec<WeatherDay>>) -> Result<Self> {
        config.validate()?;
        if seasons.is_empty() {
            return Err(Error::Config("season pool is empty".into()));
        }
        let needed = config.episode_length + 1;
        for s in &seasons {
            if s.len() < needed {
                return Err(Error::WeatherTooShort {
                    needed,
                    available: s.len(),
                });
            }
        }
        let corpus: Vec<WeatherDay> = seasons.iter().flatten().cloned().collect();
        let stats = NormStats::from_corpus(&corpus, &config.levels(), config.n_regions);
        Ok(Self {
            config,
            seasons: seasons.into_iter().map(Arc::from).collect(),
            stats,
        })
    }
}

impl EnvFactory for SeasonPool {
    fn observation_stats(&self) -> NormStats {
        self.stats.clone()
    }

    fn env_config(&self) -> &EnvConfig {
        &self.config
    }

    fn episode(&self, rng: &mut ChaCha8Rng) -> Result<(IrrigationEnv, EnvState)> {
        let season = &self.seasons[rng.random_range(0..self.seasons.len())];
        let mut env = IrrigationEnv::new(self.config.clone(), Arc::clone(season))?;
        let start = rng.random_range(0..env.start_positions());
        let state = env.reset_at(rng.random(), start)?;
        Ok((env, state))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    /// Mean undiscounted episode reward collected in this iteration.
    pub total_reward: f64,
    /// Mean minibatch loss over the iteration's updates.
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: PolicySnapshot,
    pub curve: Vec<CurvePoint>,
    /// Iteration at which the convergence rule fired, if it did.
    pub converged_at: Option<usize>,
}

/// Relative change between the mean reward of the last `window` iterations
/// and the `window` before them. `None` until two full windows exist.
pub fn windowed_change(curve: &[CurvePoint], window: usize) -> Option<f64> {
    if window == 0 || curve.len() < 2 * window {
        return None;
    }
    let mean = |s: &[CurvePoint]| s.iter().map(|p| p.total_reward).sum::<f64>() / s.len() as f64;
    let n = curve.len();
    let prev = mean(&curve[n - 2 * window..n - window]);
    let cur = mean(&curve[n - window..]);
    Some((cur - prev).abs() / prev.abs().max(f64::MIN_POSITIVE))
}

pub fn is_converged(curve: &[CurvePoint], config: &TrainerConfig) -> bool {
    curve.len() >= config.min_iterations
        && windowed_change(curve, config.convergence_window).is_some_and(|c| c <= config.convergence_band)
}

fn worker_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs one episode with actions sampled from `policy`.
pub fn collect_episode<F: EnvFactory + ?Sized>(
    policy: &PolicySnapshot,
    factory: &F,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<RolloutStep>> {
    let (mut env, mut state) = factory.episode(rng)?;
    let mut steps = Vec::with_capacity(env.config().episode_length);
    while !env.done() {
        let obs = normalize(&state, &policy.norm)?;
        let sample = policy.sample_action(&obs, rng)?;
        let t = env.step(&sample.action)?;
        steps.push(RolloutStep {
            obs,
            pre_squash: sample.pre_squash,
            action: t.action,
            old_log_prob: sample.log_prob,
            reward: t.reward,
        });
        state = t.next_state;
    }
    Ok(steps)
}

fn collect_batch<F: EnvFactory + ?Sized>(
    policy: &PolicySnapshot,
    factory: &F,
    config: &TrainerConfig,
    seed: u64,
    iteration: usize,
) -> Result<RolloutBatch> {
    let run_worker = |w: usize| -> Result<Vec<Vec<RolloutStep>>> {
        let mut rng = worker_rng(seed, 1 + (iteration * config.workers + w) as u64);
        (0..config.episodes_per_worker)
            .map(|_| collect_episode(policy, factory, &mut rng))
            .collect()
    };
    let per_worker: Vec<Result<Vec<Vec<RolloutStep>>>> = if config.workers == 1 {
        vec![run_worker(0)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..config.workers)
                .map(|w| {
                    let run = &run_worker;
                    scope.spawn(move || run(w))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("rollout worker panicked"))
                .collect()
        })
    };
    let mut episodes = Vec::new();
    for r in per_worker {
        episodes.extend(r?);
    }
    Ok(RolloutBatch::from_episodes(episodes, config.gamma))
}

/// Trains a fresh policy. Workers collect episodes in parallel from an
/// immutable copy of the current parameters; updates run serially.
pub fn train<F: EnvFactory + ?Sized>(config: &TrainerConfig, factory: &F, seed: u64) -> Result<TrainOutcome> {
    train_with(config, factory, seed, |_| {})
}

/// [`train`] with a callback after every iteration.
pub fn train_with<F, C>(config: &TrainerConfig, factory: &F, seed: u64, mut on_iteration: C) -> Result<TrainOutcome>
where
    F: EnvFactory + ?Sized,
    C: FnMut(&CurvePoint),
{
    config.validate()?;
    let env = factory.env_config();
    if env.episode_length != config.episode_length {
        return Err(Error::Config(format!(
            "trainer episode length {} differs from environment's {}",
            config.episode_length, env.episode_length
        )));
    }
    let mut init_rng = worker_rng(seed, 0);
    let mut policy = PolicySnapshot::init(
        env.obs_dim(),
        &config.hidden,
        env.n_regions,
        env.a_max,
        config.init_log_std,
        &mut init_rng,
    )
    .with_norm(factory.observation_stats());
    policy.config_hash = config_hash(&(config, env))?;

    let mut adam = Adam::new(config.adam(), policy.theta.len());
    let mut curve = Vec::new();
    let mut converged_at = None;

    for iteration in 0..config.max_iterations {
        let batch = collect_batch(&policy, factory, config, seed, iteration).map_err(|e| match e {
            Error::NonFinite(what) => Error::Diverged {
                iteration,
                what,
                snapshot: Box::new(policy.clone()),
            },
            other => other,
        })?;
        let advantages = batch.advantages(config.advantage);

        let mut order: Vec<usize> = (0..batch.len()).collect();
        let mut loss_sum = 0.0;
        let mut updates = 0usize;
        for _ in 0..config.update_epochs {
            order.shuffle(&mut init_rng);
            for chunk in order.chunks(config.minibatch_size) {
                let steps: Vec<&RolloutStep> = chunk.iter().map(|&i| &batch.steps[i]).collect();
                let adv: Vec<f64> = chunk.iter().map(|&i| advantages[i]).collect();
                let (loss, grad) =
                    surrogate_loss_and_grad(&policy, &steps, &adv, config.clip_epsilon).map_err(|e| match e {
                        Error::NonFinite(what) => Error::Diverged {
                            iteration,
                            what,
                            snapshot: Box::new(policy.clone()),
                        },
                        other => other,
                    })?;
                let mut grad = grad;
                if config.max_grad_norm > 0.0 {
                    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                    if norm > config.max_grad_norm {
                        grad.iter_mut().for_each(|g| *g *= config.max_grad_norm / norm);
                    }
                }
                adam.step(&mut policy.theta, &grad);
                loss_sum += loss;
                updates += 1;
            }
        }
        if policy.theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Diverged {
                iteration,
                what: "parameters",
                snapshot: Box::new(policy),
            });
        }
        policy.version = iteration as u64 + 1;

        let point = CurvePoint {
            iteration,
            total_reward: batch.mean_episode_reward(),
            loss: loss_sum / updates.max(1) as f64,
        };
        curve.push(point);
        on_iteration(&point);
        if is_converged(&curve, config) {
            converged_at = Some(iteration);
            break;
        }
    }

    Ok(TrainOutcome {
        policy,
        curve,
        converged_at,
    })
}

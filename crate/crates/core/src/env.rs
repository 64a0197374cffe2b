//! Daily irrigation MDP.
//!
//! A state is observed at irrigation time (11 PM). It carries each region's
//! soil water, the weather of the day that just ended together with the
//! forecast for tomorrow, and the calendar month. The action is the depth of
//! water to apply to every region. Stepping consumes tomorrow's actual weather,
//! advances each region through its water-balance model and scores the
//! resulting soil water.

use std::sync::Arc;

use chrono::Datelike;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hydrology::{SoilLevels, SoilProfile};
use crate::predictor::PredictorModel;
use crate::weather::{WeatherDay, WEATHER_CHANNELS};

/// Micro-sprinkler application rate, inches per minute.
pub const DEFAULT_IRRIGATION_RATE: f64 = 0.018;
/// Action ceiling: thirty minutes at the default rate.
pub const DEFAULT_A_MAX: f64 = 0.54;
/// Daily drift of the default regions' dynamics when held at MAD with no
/// inputs, inches/day. Zero makes MAD a fixed point of the idle dynamics: any
/// positive ET then drains a region below it, while replacing net ET holds it.
pub const DEFAULT_MAD_DRIFT: f64 = 0.0;

const BOUND_SLACK: f64 = 1e-9;

/// Penalty weights of the three-branch reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    pub lambda1: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub lambda3: f64,
    pub mu3: f64,
    pub levels: SoilLevels,
}

impl RewardParams {
    /// Grid-searched weights from the almond testbed.
    pub fn tuned(levels: SoilLevels) -> Self {
        Self {
            lambda1: 3.0,
            mu1: 8.0,
            mu2: 3.0,
            lambda3: 10.0,
            mu3: 1.0,
            levels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.lambda1, self.mu1, self.mu2, self.lambda3, self.mu3];
        if w.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::Config(format!("reward weights must be non-negative: {w:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardKind {
    #[default]
    Full,
    /// Only the below-MAD branch is penalised.
    MadOnly,
}

/// Which reward branch a region's soil water falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    AboveFc,
    InBand,
    BelowMad,
}

pub fn branch(v: f64, levels: &SoilLevels) -> Branch {
    if v > levels.v_fc {
        Branch::AboveFc
    } else if v < levels.v_mad {
        Branch::BelowMad
    } else {
        Branch::InBand
    }
}

/// Non-negative penalty for one region. Both boundaries belong to the band.
pub fn region_penalty(v: f64, a: f64, p: &RewardParams) -> f64 {
    let l = &p.levels;
    match branch(v, l) {
        Branch::AboveFc => p.lambda1 * (v - l.v_fc) + p.mu1 * a,
        Branch::InBand => p.mu2 * a,
        Branch::BelowMad => p.lambda3 * (l.v_mad - v) + p.mu3 * a,
    }
}

pub fn reward(v_next: &[f64], a: &ActionVector, params: &RewardParams) -> f64 {
    -v_next
        .iter()
        .zip(a.iter())
        .map(|(&v, &ai)| region_penalty(v, ai, params))
        .sum::<f64>()
}

pub fn reward_mad_only(v_next: &[f64], a: &ActionVector, params: &RewardParams) -> f64 {
    -v_next
        .iter()
        .zip(a.iter())
        .filter(|(&v, _)| branch(v, &params.levels) == Branch::BelowMad)
        .map(|(&v, &ai)| region_penalty(v, ai, params))
        .sum::<f64>()
}

pub fn reward_of(kind: RewardKind, v_next: &[f64], a: &ActionVector, params: &RewardParams) -> f64 {
    match kind {
        RewardKind::Full => reward(v_next, a, params),
        RewardKind::MadOnly => reward_mad_only(v_next, a, params),
    }
}

/// Water to apply to each region, inches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionVector(pub Vec<f64>);

impl ActionVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn uniform(n: usize, a: f64) -> Self {
        Self(vec![a; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn check(&self, n: usize, a_max: f64) -> Result<()> {
        if self.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: self.len(),
            });
        }
        if let Some(a) = self.iter().find(|a| !(**a >= -BOUND_SLACK && **a <= a_max + BOUND_SLACK)) {
            return Err(Error::InvalidAction(format!("amount {a} outside [0, {a_max}]")));
        }
        Ok(())
    }
}

/// Valve-open minutes per region for an action at `rate` inches/minute.
pub fn action_to_duration(a: &ActionVector, rate: f64) -> Vec<f64> {
    a.iter().map(|ai| ai / rate).collect()
}

/// Tomorrow's forecast channels as seen at decision time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub et: f64,
    pub precip: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub v: Vec<f64>,
    pub weather_today: WeatherDay,
    pub weather_next: Forecast,
    /// 1 = January.
    pub month: u32,
    pub day_in_episode: usize,
}

impl EnvState {
    fn at(v: Vec<f64>, today: &WeatherDay, day_in_episode: usize) -> Self {
        Self {
            v,
            weather_today: today.clone(),
            weather_next: Forecast {
                et: today.predicted_et_next,
                precip: today.forecast_precip_next,
            },
            month: today.date.month(),
            day_in_episode,
        }
    }

    pub fn n_regions(&self) -> usize {
        self.v.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: EnvState,
    pub action: ActionVector,
    pub reward: f64,
    pub next_state: EnvState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub n_regions: usize,
    /// Inches per minute.
    pub irrigation_rate: f64,
    /// Inches per day.
    pub a_max: f64,
    /// Days.
    pub episode_length: usize,
    pub reward_params: RewardParams,
    #[serde(default)]
    pub reward_kind: RewardKind,
    pub profile: SoilProfile,
    /// Ground-truth dynamics, one model per region.
    pub dynamics: Vec<PredictorModel>,
    /// Std of Gaussian noise added to every region's daily update, inches.
    pub process_noise_std: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        let profile = SoilProfile::default();
        let levels = profile.levels();
        Self {
            n_regions: 2,
            irrigation_rate: DEFAULT_IRRIGATION_RATE,
            a_max: DEFAULT_A_MAX,
            episode_length: 30,
            reward_params: RewardParams::tuned(levels),
            reward_kind: RewardKind::Full,
            profile,
            dynamics: default_dynamics(&levels),
            process_noise_std: 0.01,
        }
    }
}

/// The two testbed trees' persistence and input coefficients, with each
/// intercept re-anchored so that a region held exactly at MAD with no inputs
/// drifts by [`DEFAULT_MAD_DRIFT`] per day. The published intercepts put the
/// steady state of the second tree below MAD even at the action ceiling.
pub fn default_dynamics(levels: &SoilLevels) -> Vec<PredictorModel> {
    [PredictorModel::tree1(), PredictorModel::tree2()]
        .into_iter()
        .map(|m| anchor_at_mad(m, levels, DEFAULT_MAD_DRIFT))
        .collect()
}

/// Replaces `b` so the no-input drift at `v_mad` equals `drift`, and caps
/// predictions at field capacity plus headroom.
pub fn anchor_at_mad(model: PredictorModel, levels: &SoilLevels, drift: f64) -> PredictorModel {
    PredictorModel {
        b: (1.0 - model.c1) * levels.v_mad + drift,
        ..model
    }
    .capped_at_fc(levels.v_fc)
}

impl EnvConfig {
    pub fn levels(&self) -> SoilLevels {
        self.profile.levels()
    }

    pub fn validate(&self) -> Result<()> {
        self.profile.validate()?;
        self.reward_params.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.n_regions == 0 {
            return bad("n_regions must be at least 1".into());
        }
        if !(self.irrigation_rate > 0.0) {
            return bad(format!("irrigation_rate must be positive, got {}", self.irrigation_rate));
        }
        if !(self.a_max > 0.0) {
            return bad(format!("a_max must be positive, got {}", self.a_max));
        }
        if self.episode_length == 0 {
            return bad("episode_length must be at least 1".into());
        }
        if self.dynamics.len() != self.n_regions {
            return bad(format!(
                "{} dynamics models for {} regions",
                self.dynamics.len(),
                self.n_regions
            ));
        }
        if !(self.process_noise_std >= 0.0) {
            return bad("process_noise_std must be non-negative".into());
        }
        Ok(())
    }

    /// Length of the normalised observation vector.
    pub fn obs_dim(&self) -> usize {
        obs_dim(self.n_regions)
    }
}

pub fn obs_dim(n_regions: usize) -> usize {
    n_regions + WEATHER_CHANNELS + 12
}

/// Single-owner environment over a shared weather sequence.
#[derive(Debug, Clone)]
pub struct IrrigationEnv {
    config: EnvConfig,
    levels: SoilLevels,
    weather: Arc<[WeatherDay]>,
    start: usize,
    state: Option<EnvState>,
    rng: ChaCha8Rng,
}

impl IrrigationEnv {
    pub fn new(config: EnvConfig, weather: impl Into<Arc<[WeatherDay]>>) -> Result<Self> {
        config.validate()?;
        let levels = config.levels();
        Ok(Self {
            config,
            levels,
            weather: weather.into(),
            start: 0,
            state: None,
            rng: ChaCha8Rng::seed_from_u64(0),
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn levels(&self) -> &SoilLevels {
        &self.levels
    }

    pub fn weather(&self) -> &[WeatherDay] {
        &self.weather
    }

    pub fn state(&self) -> Option<&EnvState> {
        self.state.as_ref()
    }

    /// Number of episodes starts available: each episode also needs the day
    /// after its last decision.
    pub fn start_positions(&self) -> usize {
        (self.weather.len() + 1).saturating_sub(self.config.episode_length + 1)
    }

    /// Starts an episode at the first weather day.
    pub fn reset(&mut self, seed: u64) -> Result<EnvState> {
        self.reset_at(seed, 0)
    }

    /// Starts an episode at weather day `start`; each region's soil water is
    /// drawn uniformly between MAD and FC.
    pub fn reset_at(&mut self, seed: u64, start: usize) -> Result<EnvState> {
        let needed = start + self.config.episode_length + 1;
        if self.weather.len() < needed {
            return Err(Error::WeatherTooShort {
                needed,
                available: self.weather.len(),
            });
        }
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = (self.levels.v_mad, self.levels.v_fc);
        let v = (0..self.config.n_regions)
            .map(|_| lo + (hi - lo) * self.rng.random::<f64>())
            .collect();
        self.start = start;
        let state = EnvState::at(v, &self.weather[start], 0);
        self.state = Some(state.clone());
        Ok(state)
    }

    /// Overrides the soil water of the current state (used to pair runs on
    /// identical initial conditions).
    pub fn set_soil(&mut self, v: Vec<f64>) -> Result<()> {
        let state = self.state.as_mut().ok_or(Error::EpisodeExhausted(0))?;
        if v.len() != state.v.len() {
            return Err(Error::Dimension {
                expected: state.v.len(),
                got: v.len(),
            });
        }
        state.v = v;
        Ok(())
    }

    pub fn done(&self) -> bool {
        self.state
            .as_ref()
            .is_none_or(|s| s.day_in_episode >= self.config.episode_length)
    }

    pub fn step(&mut self, action: &ActionVector) -> Result<Transition> {
        let state = match &self.state {
            Some(s) if s.day_in_episode < self.config.episode_length => s.clone(),
            _ => return Err(Error::EpisodeExhausted(self.config.episode_length)),
        };
        action.check(self.config.n_regions, self.config.a_max)?;
        let action = ActionVector(action.iter().map(|a| a.clamp(0.0, self.config.a_max)).collect());

        let next_day = &self.weather[self.start + state.day_in_episode + 1];
        let noise = (self.config.process_noise_std > 0.0)
            .then(|| Normal::new(0.0, self.config.process_noise_std).expect("finite std"));
        let v_next: Vec<f64> = state
            .v
            .iter()
            .zip(action.iter())
            .zip(&self.config.dynamics)
            .map(|((&v, &a), model)| {
                let v = model.predict_next(v, a, next_day.precip, next_day.et);
                let eps = noise.as_ref().map_or(0.0, |n| n.sample(&mut self.rng));
                let v = (v + eps).max(0.0);
                model.ceiling.map_or(v, |cap| v.min(cap))
            })
            .collect();

        let reward = reward_of(self.config.reward_kind, &v_next, &action, &self.config.reward_params);
        let next_state = EnvState::at(v_next, next_day, state.day_in_episode + 1);
        self.state = Some(next_state.clone());
        Ok(Transition {
            state,
            action,
            reward,
            next_state,
        })
    }
}

/// Per-component mean and spread used to centre and scale observations.
///
/// Covers the soil and weather components; the month one-hot is passed
/// through unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(n_regions: usize) -> Self {
        let n = n_regions + WEATHER_CHANNELS;
        Self {
            mean: vec![0.0; n],
            std: vec![1.0; n],
        }
    }

    /// Soil components use the moments of a uniform draw over the management
    /// band; weather components use the corpus moments.
    pub fn from_corpus(weather: &[WeatherDay], levels: &SoilLevels, n_regions: usize) -> Self {
        let band = levels.v_fc - levels.v_mad;
        let mut mean = vec![0.5 * (levels.v_mad + levels.v_fc); n_regions];
        let mut std = vec![band / 12f64.sqrt(); n_regions];
        let n = weather.len().max(1) as f64;
        let mut sums = [0.0; WEATHER_CHANNELS];
        for d in weather {
            for (s, c) in sums.iter_mut().zip(d.channels()) {
                *s += c;
            }
        }
        let wmean: Vec<f64> = sums.iter().map(|s| s / n).collect();
        let mut sq = [0.0; WEATHER_CHANNELS];
        for d in weather {
            for ((s, c), m) in sq.iter_mut().zip(d.channels()).zip(&wmean) {
                *s += (c - m).powi(2);
            }
        }
        mean.extend(wmean);
        std.extend(sq.iter().map(|s| (s / n).sqrt()));
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Raw observation vector:
/// `[v (N), 12 weather channels of today incl. tomorrow's forecast, month one-hot (12)]`.
pub fn features(state: &EnvState) -> Vec<f64> {
    let mut x = Vec::with_capacity(obs_dim(state.n_regions()));
    x.extend_from_slice(&state.v);
    let mut channels = state.weather_today.channels();
    channels[WEATHER_CHANNELS - 2] = state.weather_next.et;
    channels[WEATHER_CHANNELS - 1] = state.weather_next.precip;
    x.extend_from_slice(&channels);
    let mut month = [0.0; 12];
    month[(state.month as usize).clamp(1, 12) - 1] = 1.0;
    x.extend_from_slice(&month);
    x
}

fn scale(x: f64, mean: f64, std: f64) -> f64 {
    if std > 0.0 {
        (x - mean) / std
    } else {
        x - mean
    }
}

fn unscale(z: f64, mean: f64, std: f64) -> f64 {
    if std > 0.0 {
        z * std + mean
    } else {
        z + mean
    }
}

pub fn normalize(state: &EnvState, stats: &NormStats) -> Result<Vec<f64>> {
    normalize_features(&features(state), stats)
}

pub fn normalize_features(raw: &[f64], stats: &NormStats) -> Result<Vec<f64>> {
    let scaled = stats.dim();
    if raw.len() != scaled + 12 {
        return Err(Error::Dimension {
            expected: scaled + 12,
            got: raw.len(),
        });
    }
    let mut out = raw.to_vec();
    for (i, x) in out.iter_mut().take(scaled).enumerate() {
        *x = scale(*x, stats.mean[i], stats.std[i]);
    }
    Ok(out)
}

pub fn denormalize(obs: &[f64], stats: &NormStats) -> Result<Vec<f64>> {
    let scaled = stats.dim();
    if obs.len() != scaled + 12 {
        return Err(Error::Dimension {
            expected: scaled + 12,
            got: obs.len(),
        });
    }
    let mut out = obs.to_vec();
    for (i, x) in out.iter_mut().take(scaled).enumerate() {
        *x = unscale(*x, stats.mean[i], stats.std[i]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weather::{synthesize_season, ClimateParams, ForecastNoise};
    use proptest::prelude::*;

    fn levels() -> SoilLevels {
        SoilProfile::default().levels()
    }

    fn params() -> RewardParams {
        RewardParams::tuned(levels())
    }

    fn season(len: usize) -> Vec<WeatherDay> {
        synthesize_season(2, len, &ClimateParams::default(), &ForecastNoise::default())
    }

    fn one_region(dynamics: PredictorModel, noise: f64) -> EnvConfig {
        EnvConfig {
            n_regions: 1,
            dynamics: vec![dynamics],
            process_noise_std: noise,
            ..EnvConfig::default()
        }
    }

    #[test]
    fn reward_branch_examples() {
        let p = params();
        let r = reward(&[7.5], &ActionVector(vec![0.3]), &p);
        assert!((r - -3.63).abs() < 1e-12, "{r}");
        let r = reward(&[5.5], &ActionVector(vec![0.2]), &p);
        assert!((r - -0.6).abs() < 1e-12, "{r}");
        let r = reward(&[4.5], &ActionVector(vec![0.3]), &p);
        assert!((r - -2.56).abs() < 1e-12, "{r}");
    }

    #[test]
    fn mad_only_reward_examples() {
        let p = params();
        assert_eq!(reward_mad_only(&[5.5], &ActionVector(vec![0.4]), &p), 0.0);
        assert!((reward_mad_only(&[4.5], &ActionVector(vec![0.3]), &p) - -2.56).abs() < 1e-12);
        assert_eq!(reward_mad_only(&[8.0], &ActionVector(vec![1.0]), &p), 0.0);
    }

    #[test]
    fn boundaries_belong_to_band() {
        let l = levels();
        assert_eq!(branch(l.v_fc, &l), Branch::InBand);
        assert_eq!(branch(l.v_mad, &l), Branch::InBand);
    }

    #[test]
    fn reward_continuity_at_boundaries() {
        let p = params();
        let l = levels();
        let h = 1e-9;
        // At zero action the λ terms vanish at both boundaries.
        let zero = ActionVector(vec![0.0]);
        for edge in [l.v_fc, l.v_mad] {
            let lo = reward(&[edge - h], &zero, &p);
            let hi = reward(&[edge + h], &zero, &p);
            assert!((lo - hi).abs() < 1e-7);
        }
        // With irrigation, crossing FC adds (μ1 − μ2)·a and crossing MAD adds (μ3 − μ2)·a.
        let a = ActionVector(vec![0.2]);
        let jump_fc = reward(&[l.v_fc], &a, &p) - reward(&[l.v_fc + h], &a, &p);
        assert!((jump_fc - (p.mu1 - p.mu2) * 0.2).abs() < 1e-7);
        let jump_mad = reward(&[l.v_mad], &a, &p) - reward(&[l.v_mad - h], &a, &p);
        assert!((jump_mad - (p.mu3 - p.mu2) * 0.2).abs() < 1e-7);
    }

    #[test]
    fn deficit_penalised_harder_than_surplus() {
        let p = params();
        let l = levels();
        let zero = ActionVector(vec![0.0]);
        for delta in [0.01, 0.1, 0.5] {
            let below = -reward(&[l.v_mad - delta], &zero, &p);
            let above = -reward(&[l.v_fc + delta], &zero, &p);
            assert!(below > above);
        }
    }

    #[test]
    fn durations() {
        let d = action_to_duration(&ActionVector(vec![0.18, 0.0, 0.54]), 0.018);
        assert!((d[0] - 10.0).abs() < 1e-12);
        assert_eq!(d[1], 0.0);
        assert!((d[2] - 30.0).abs() < 1e-12);
    }

    #[test]
    fn reset_is_deterministic_and_in_band() {
        let mut env = IrrigationEnv::new(EnvConfig::default(), season(60)).unwrap();
        let a = env.reset(42).unwrap();
        let b = env.reset(42).unwrap();
        assert_eq!(a, b);
        let l = levels();
        assert!(a.v.iter().all(|v| *v >= l.v_mad && *v <= l.v_fc));
        assert_eq!(a.day_in_episode, 0);
    }

    #[test]
    fn reset_moments_match_uniform() {
        let mut env = IrrigationEnv::new(one_region(PredictorModel::tree1(), 0.0), season(40)).unwrap();
        let n = 10_000;
        let draws: Vec<f64> = (0..n).map(|s| env.reset(s as u64).unwrap().v[0]).collect();
        let l = levels();
        let lo = draws.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = draws.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo >= 4.726 - 1e-12 && hi <= 7.09 + 1e-12);
        let mean = draws.iter().sum::<f64>() / n as f64;
        // Uniform on [4.726, 7.09]: mean 5.908, sd 2.364/√12.
        let sd = (l.v_fc - l.v_mad) / 12f64.sqrt();
        assert!((mean - 5.908).abs() < 3.0 * sd / (n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn collapsed_band_resets_to_single_value() {
        let mut cfg = one_region(PredictorModel::tree1(), 0.0);
        cfg.profile.alpha = 1.0;
        let mut env = IrrigationEnv::new(cfg, season(40)).unwrap();
        let fc = env.levels().v_fc;
        for s in 0..20 {
            assert_eq!(env.reset(s).unwrap().v[0], fc);
        }
    }

    #[test]
    fn short_weather_is_rejected() {
        let mut env = IrrigationEnv::new(EnvConfig::default(), season(20)).unwrap();
        assert!(matches!(env.reset(1), Err(Error::WeatherTooShort { .. })));
    }

    #[test]
    fn step_reproduces_predictor_example() {
        let mut days = season(40);
        days[1].et = 0.15;
        days[1].precip = 0.0;
        let mut env = IrrigationEnv::new(one_region(PredictorModel::tree1(), 0.0), days).unwrap();
        env.reset(0).unwrap();
        env.set_soil(vec![5.0]).unwrap();
        let t = env.step(&ActionVector(vec![0.3])).unwrap();
        assert!((t.next_state.v[0] - 4.93895).abs() < 1e-12);
        assert_eq!(t.next_state.day_in_episode, 1);
        assert_eq!(t.next_state.month, t.next_state.weather_today.date.month());
    }

    #[test]
    fn idle_regions_dry_out() {
        let mut days = season(40);
        for d in &mut days {
            d.precip = 0.0;
            d.et = d.et.max(0.05);
        }
        let cfg = EnvConfig {
            process_noise_std: 0.0,
            dynamics: vec![PredictorModel::tree1(), PredictorModel::tree2()],
            ..EnvConfig::default()
        };
        let mut env = IrrigationEnv::new(cfg, days).unwrap();
        let mut s = env.reset(3).unwrap();
        for _ in 0..10 {
            let t = env.step(&ActionVector::zeros(2)).unwrap();
            assert!(t.next_state.v.iter().zip(&s.v).all(|(n, o)| n < o));
            s = t.next_state;
        }
    }

    #[test]
    fn rain_and_irrigation_are_interchangeable() {
        let mut wet = season(40);
        wet[1].precip = 0.5;
        let mut drier = wet.clone();
        drier[1].precip = 0.3;
        let cfg = one_region(PredictorModel::tree2(), 0.0);
        let mut a = IrrigationEnv::new(cfg.clone(), wet).unwrap();
        let mut b = IrrigationEnv::new(cfg, drier).unwrap();
        a.reset(5).unwrap();
        b.reset(5).unwrap();
        let ta = a.step(&ActionVector(vec![0.1])).unwrap();
        let tb = b.step(&ActionVector(vec![0.3])).unwrap();
        assert!((ta.next_state.v[0] - tb.next_state.v[0]).abs() < 1e-12);
    }

    #[test]
    fn stepping_past_episode_fails() {
        let cfg = EnvConfig {
            episode_length: 3,
            ..EnvConfig::default()
        };
        let mut env = IrrigationEnv::new(cfg, season(10)).unwrap();
        env.reset(0).unwrap();
        for _ in 0..3 {
            env.step(&ActionVector::zeros(2)).unwrap();
        }
        assert!(env.done());
        assert!(matches!(env.step(&ActionVector::zeros(2)), Err(Error::EpisodeExhausted(3))));
    }

    #[test]
    fn out_of_range_action_rejected() {
        let mut env = IrrigationEnv::new(EnvConfig::default(), season(40)).unwrap();
        env.reset(0).unwrap();
        assert!(env.step(&ActionVector(vec![0.6, 0.0])).is_err());
        assert!(env.step(&ActionVector(vec![0.1])).is_err());
    }

    #[test]
    fn default_dynamics_hold_mad_under_et_replacement() {
        let l = levels();
        for m in default_dynamics(&l) {
            for e in [0.05, 0.2, 0.4] {
                // ET-replacement dose keeps a region sitting at MAD inside the band.
                assert!(m.predict_next(l.v_mad, e, 0.0, e) >= l.v_mad);
            }
            // With no water and typical ET the region falls below MAD.
            assert!(m.predict_next(l.v_mad, 0.0, 0.0, 0.2) < l.v_mad);
        }
    }

    #[test]
    fn normalize_examples() {
        let days = season(60);
        let cfg = EnvConfig::default();
        let stats = NormStats::from_corpus(&days, &cfg.levels(), 2);
        let mut env = IrrigationEnv::new(cfg, days).unwrap();
        let s = env.reset(9).unwrap();
        let z = normalize(&s, &stats).unwrap();
        assert_eq!(z.len(), 2 + 12 + 12);
        let back = denormalize(&z, &stats).unwrap();
        for (a, b) in back.iter().zip(features(&s)) {
            assert!((a - b).abs() < 1e-9);
        }
        // A state sitting on the corpus mean maps to zeros outside the one-hot.
        let z = normalize_features(&{
            let mut x = stats.mean.clone();
            x.extend(features(&s)[stats.dim()..].iter());
            x
        }, &stats)
        .unwrap();
        assert!(z[..stats.dim()].iter().all(|x| x.abs() < 1e-12));
        assert_eq!(z[stats.dim()..].iter().sum::<f64>(), 1.0);

        let id = NormStats::identity(2);
        let once = normalize(&s, &id).unwrap();
        assert_eq!(normalize_features(&once, &id).unwrap(), once);
        assert!(matches!(normalize(&s, &NormStats::identity(3)), Err(Error::Dimension { .. })));
    }

    proptest! {
        #[test]
        fn exactly_one_branch(v in 0.0f64..10.0, a in 0.0f64..0.54) {
            let p = params();
            let pen = region_penalty(v, a, &p);
            let l = levels();
            let candidates = [
                (v > l.v_fc, p.lambda1 * (v - l.v_fc) + p.mu1 * a),
                (v >= l.v_mad && v <= l.v_fc, p.mu2 * a),
                (v < l.v_mad, p.lambda3 * (l.v_mad - v) + p.mu3 * a),
            ];
            let active: Vec<_> = candidates.iter().filter(|c| c.0).collect();
            prop_assert_eq!(active.len(), 1);
            prop_assert!((active[0].1 - pen).abs() < 1e-12);
            prop_assert!(pen >= 0.0);
        }

        #[test]
        fn in_band_reward_decreases_with_water(v in 4.8f64..7.0, a in 0.0f64..0.5, da in 0.001f64..0.04) {
            let p = params();
            prop_assert!(reward(&[v], &ActionVector(vec![a + da]), &p) < reward(&[v], &ActionVector(vec![a]), &p));
            prop_assert!(reward(&[v], &ActionVector(vec![0.0]), &p) >= reward(&[v], &ActionVector(vec![a]), &p));
        }

        #[test]
        fn deficit_reward_increases_with_soil(v in 2.0f64..4.7, dv in 0.001f64..0.02, a in 0.0f64..0.5) {
            let p = params();
            let act = ActionVector(vec![a]);
            prop_assert!(reward(&[v + dv], &act, &p) > reward(&[v], &act, &p));
        }
    }
}

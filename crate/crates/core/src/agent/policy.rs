//! Squashed-Gaussian MLP policy with hand-written backpropagation.
//!
//! The network maps a normalised observation to one pre-squash mean per
//! region. Each region also has a state-independent log standard deviation.
//! Sampling draws `u ~ N(mean, std)` and applies
//! `a = a_max · (1 + tanh u) / 2`, so every action lands in `[0, a_max]`.
//!
//! Parameters live in one flat vector laid out as
//! `[W1, b1, W2, b2, …, W_out, b_out, log_std]`, with each weight matrix
//! stored row-major as `out × in`.

use std::f64::consts::{LN_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::{ActionVector, NormStats};
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    /// Layer widths from input to output, e.g. `[obs_dim, 256, 256, n_regions]`.
    pub sizes: Vec<usize>,
    pub theta: Vec<f64>,
    pub a_max: f64,
    /// Observation normalisation the policy was trained with.
    pub norm: NormStats,
    /// Number of completed training iterations.
    pub version: u64,
    /// Hash of the configuration that produced the snapshot (hex).
    pub config_hash: String,
}

/// One sampled action.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample {
    pub action: ActionVector,
    pub pre_squash: Vec<f64>,
    pub log_prob: f64,
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(1 − tanh²u)`, stable for large `|u|`.
fn log_sech2(u: f64) -> f64 {
    2.0 * (LN_2 - u.abs() - softplus(-2.0 * u.abs()))
}

pub fn squash(u: f64, a_max: f64) -> f64 {
    0.5 * a_max * (1.0 + u.tanh())
}

/// Inverse of [`squash`], with the action pulled slightly inside the open interval.
pub fn unsquash(a: f64, a_max: f64) -> f64 {
    let y = (2.0 * a / a_max - 1.0).clamp(-1.0 + 1e-12, 1.0 - 1e-12);
    y.atanh()
}

/// Log-density of the squashed Gaussian at pre-squash point `u`.
pub fn squashed_log_density(u: f64, mean: f64, log_std: f64, a_max: f64) -> f64 {
    let z = (u - mean) * (-log_std).exp();
    -0.5 * z * z - log_std - 0.5 * (2.0 * PI).ln() - (0.5 * a_max).ln() - log_sech2(u)
}

/// Intermediate activations of one forward pass.
struct Trace {
    /// `acts[0]` is the input, `acts[k]` the output of hidden layer `k`.
    acts: Vec<Vec<f64>>,
    mean: Vec<f64>,
}

impl PolicySnapshot {
    /// Fan-in scaled Gaussian init for hidden layers, near-zero output layer.
    pub fn init<R: Rng + ?Sized>(
        obs_dim: usize,
        hidden: &[usize],
        n_actions: usize,
        a_max: f64,
        init_log_std: f64,
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(n_actions);
        let mut theta = Vec::with_capacity(Self::param_count(&sizes));
        let last = sizes.len() - 2;
        for (k, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = if k == last { 0.01 } else { 1.0 } / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                let z: f64 = StandardNormal.sample(rng);
                theta.push(scale * z);
            }
            theta.extend(std::iter::repeat_n(0.0, fan_out));
        }
        theta.extend(std::iter::repeat_n(init_log_std, n_actions));
        Self {
            sizes,
            theta,
            a_max,
            norm: NormStats::identity(0),
            version: 0,
            config_hash: String::new(),
        }
    }

    /// All-zero weights; actions centre on `a_max / 2`.
    pub fn zeros(obs_dim: usize, hidden: &[usize], n_actions: usize, a_max: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = Self::init(obs_dim, hidden, n_actions, a_max, 0.0, &mut rng);
        p.theta.iter_mut().for_each(|t| *t = 0.0);
        p
    }

    pub fn with_norm(mut self, norm: NormStats) -> Self {
        self.norm = norm;
        self
    }

    pub fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum::<usize>() + sizes.last().copied().unwrap_or(0)
    }

    pub fn obs_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_actions(&self) -> usize {
        *self.sizes.last().expect("non-empty sizes")
    }

    fn log_std_offset(&self) -> usize {
        self.theta.len() - self.n_actions()
    }

    /// Clamped log standard deviations.
    pub fn log_std(&self) -> Vec<f64> {
        self.theta[self.log_std_offset()..]
            .iter()
            .map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect()
    }

    fn check_obs(&self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.obs_dim() {
            return Err(Error::Dimension {
                expected: self.obs_dim(),
                got: obs.len(),
            });
        }
        Ok(())
    }

    fn forward(&self, obs: &[f64]) -> Trace {
        let n_layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(n_layers);
        acts.push(obs.to_vec());
        let mut offset = 0;
        let mut mean = Vec::new();
        for k in 0..n_layers {
            let (n_in, n_out) = (self.sizes[k], self.sizes[k + 1]);
            let w = &self.theta[offset..offset + n_in * n_out];
            let b = &self.theta[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let x = acts.last().expect("input pushed");
            let z: Vec<f64> = (0..n_out)
                .map(|j| {
                    let row = &w[j * n_in..(j + 1) * n_in];
                    b[j] + row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>()
                })
                .collect();
            if k + 1 == n_layers {
                mean = z;
            } else {
                acts.push(z.into_iter().map(f64::tanh).collect());
            }
        }
        Trace { acts, mean }
    }

    /// Adds `∂/∂θ` of `g_mean · mean + g_log_std · log_std` to `grad`.
    pub fn accumulate_grad(&self, obs: &[f64], g_mean: &[f64], g_log_std: &[f64], grad: &mut [f64]) {
        let trace = self.forward(obs);
        self.backward(&trace, g_mean, g_log_std, grad);
    }

    fn backward(&self, trace: &Trace, g_mean: &[f64], g_log_std: &[f64], grad: &mut [f64]) {
        let n_layers = self.sizes.len() - 1;
        let ls = self.log_std_offset();
        for (i, g) in g_log_std.iter().enumerate() {
            let raw = self.theta[ls + i];
            if raw > LOG_STD_MIN && raw < LOG_STD_MAX {
                grad[ls + i] += g;
            }
        }
        let offsets: Vec<usize> = self
            .sizes
            .windows(2)
            .scan(0, |o, w| {
                let here = *o;
                *o += w[0] * w[1] + w[1];
                Some(here)
            })
            .collect();

        let mut delta = g_mean.to_vec();
        for k in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[k], self.sizes[k + 1]);
            let off = offsets[k];
            let x = &trace.acts[k];
            for j in 0..n_out {
                let d = delta[j];
                if d == 0.0 {
                    continue;
                }
                let gw = &mut grad[off + j * n_in..off + (j + 1) * n_in];
                for (g, xi) in gw.iter_mut().zip(x) {
                    *g += d * xi;
                }
                grad[off + n_in * n_out + j] += d;
            }
            if k == 0 {
                break;
            }
            let w = &self.theta[off..off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for j in 0..n_out {
                let d = delta[j];
                if d == 0.0 {
                    continue;
                }
                for (p, wi) in prev.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]) {
                    *p += wi * d;
                }
            }
            // tanh' = 1 − tanh²
            for (p, a) in prev.iter_mut().zip(x) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
    }

    /// Pre-squash Gaussian means.
    pub fn mean(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.check_obs(obs)?;
        let mean = self.forward(obs).mean;
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("policy mean"));
        }
        Ok(mean)
    }

    /// Squashed mean: the deterministic deployment action.
    pub fn deterministic_action(&self, obs: &[f64]) -> Result<ActionVector> {
        Ok(ActionVector(
            self.mean(obs)?.into_iter().map(|m| squash(m, self.a_max)).collect(),
        ))
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<ActionSample> {
        let mean = self.mean(obs)?;
        let log_std = self.log_std();
        let pre_squash: Vec<f64> = mean
            .iter()
            .zip(&log_std)
            .map(|(m, l)| {
                let z: f64 = StandardNormal.sample(rng);
                m + l.exp() * z
            })
            .collect();
        let log_prob = self.log_prob_from_mean(&mean, &log_std, &pre_squash);
        if !log_prob.is_finite() {
            return Err(Error::NonFinite("action log-probability"));
        }
        Ok(ActionSample {
            action: ActionVector(pre_squash.iter().map(|u| squash(*u, self.a_max)).collect()),
            pre_squash,
            log_prob,
        })
    }

    pub fn sample_action_seeded(&self, obs: &[f64], seed: u64) -> Result<ActionSample> {
        self.sample_action(obs, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn log_prob_from_mean(&self, mean: &[f64], log_std: &[f64], pre_squash: &[f64]) -> f64 {
        mean.iter()
            .zip(log_std)
            .zip(pre_squash)
            .map(|((m, l), u)| squashed_log_density(*u, *m, *l, self.a_max))
            .sum()
    }

    /// Log-density of the action whose pre-squash value is `pre_squash`.
    pub fn log_prob(&self, obs: &[f64], pre_squash: &[f64]) -> Result<f64> {
        let mean = self.mean(obs)?;
        Ok(self.log_prob_from_mean(&mean, &self.log_std(), pre_squash))
    }

    pub fn log_prob_of_action(&self, obs: &[f64], action: &ActionVector) -> Result<f64> {
        let u: Vec<f64> = action.iter().map(|a| unsquash(*a, self.a_max)).collect();
        self.log_prob(obs, &u)
    }

    /// Returns the log-probability and adds `coeff · ∂ log π / ∂θ` to `grad`.
    pub fn log_prob_with_grad(&self, obs: &[f64], pre_squash: &[f64], coeff: f64, grad: &mut [f64]) -> f64 {
        self.log_prob_with_grad_by(obs, pre_squash, grad, |_| coeff)
            .unwrap_or(f64::NAN)
    }

    /// Like [`Self::log_prob_with_grad`], with the coefficient chosen from the
    /// log-probability itself so the network runs forward only once.
    pub fn log_prob_with_grad_by<F>(&self, obs: &[f64], pre_squash: &[f64], grad: &mut [f64], coeff: F) -> Result<f64>
    where
        F: FnOnce(f64) -> f64,
    {
        self.check_obs(obs)?;
        let trace = self.forward(obs);
        let log_std = self.log_std();
        let lp = self.log_prob_from_mean(&trace.mean, &log_std, pre_squash);
        let coeff = coeff(lp);
        if coeff != 0.0 && coeff.is_finite() {
            let mut g_mean = Vec::with_capacity(log_std.len());
            let mut g_log_std = Vec::with_capacity(log_std.len());
            for ((m, l), u) in trace.mean.iter().zip(&log_std).zip(pre_squash) {
                let inv_var = (-2.0 * l).exp();
                let d = u - m;
                g_mean.push(coeff * d * inv_var);
                g_log_std.push(coeff * (d * d * inv_var - 1.0));
            }
            self.backward(&trace, &g_mean, &g_log_std, grad);
        }
        Ok(lp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> PolicySnapshot {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = PolicySnapshot::init(3, &[4, 4], 2, 0.54, -0.5, &mut rng);
        // Give the output layer some weight so gradients are not vanishingly small.
        for t in p.theta.iter_mut() {
            *t += 0.1 * (rng.random::<f64>() - 0.5);
        }
        p
    }

    #[test]
    fn param_layout() {
        let p = small(1);
        assert_eq!(p.theta.len(), PolicySnapshot::param_count(&p.sizes));
        assert_eq!(p.theta.len(), (3 * 4 + 4) + (4 * 4 + 4) + (4 * 2 + 2) + 2);
    }

    #[test]
    fn zero_network_centres_actions() {
        let p = PolicySnapshot::zeros(5, &[8, 8], 3, 0.54);
        for obs in [[0.0; 5], [1.0, -2.0, 3.0, 0.5, 9.0]] {
            let a = p.deterministic_action(&obs).unwrap();
            assert!(a.iter().all(|x| (x - 0.27).abs() < 1e-15));
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let p = small(2);
        let obs = [0.3, -0.1, 0.8];
        assert_eq!(p.sample_action_seeded(&obs, 7).unwrap(), p.sample_action_seeded(&obs, 7).unwrap());
        let s = p.sample_action_seeded(&obs, 7).unwrap();
        assert!(s.action.iter().all(|a| (0.0..=0.54).contains(a)));
    }

    #[test]
    fn wrong_observation_length() {
        let p = small(2);
        assert!(matches!(p.mean(&[1.0, 2.0]), Err(Error::Dimension { expected: 3, got: 2 })));
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut p = small(2);
        p.theta[0] = f64::NAN;
        assert!(matches!(p.sample_action_seeded(&[1.0, 1.0, 1.0], 1), Err(Error::NonFinite(_))));
    }

    #[test]
    fn log_prob_round_trips_through_action() {
        let p = small(4);
        let obs = [0.1, 0.2, -0.4];
        let s = p.sample_action_seeded(&obs, 3).unwrap();
        assert!((p.log_prob(&obs, &s.pre_squash).unwrap() - s.log_prob).abs() < 1e-12);
        assert!((p.log_prob_of_action(&obs, &s.action).unwrap() - s.log_prob).abs() < 1e-6);
    }

    fn std_normal_cdf(x: f64) -> f64 {
        // Abramowitz–Stegun 7.1.26 is too coarse here; integrate the density instead.
        let n = 20_000;
        let lo = -12.0;
        let h = (x - lo) / n as f64;
        let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * PI).sqrt();
        (0..n).map(|i| {
            let a = lo + i as f64 * h;
            h / 6.0 * (f(a) + 4.0 * f(a + 0.5 * h) + f(a + h))
        }).sum()
    }

    #[test]
    fn density_integrates_to_gaussian_cdf() {
        // Integrate exp(log π) over an action slice with Simpson's rule and
        // compare with the Gaussian CDF at the unsquashed endpoint.
        let (mean, log_std, a_max) = (0.4, -0.3f64, 0.54);
        let density = |a: f64| squashed_log_density(unsquash(a, a_max), mean, log_std, a_max).exp();
        let simpson = |lo: f64, hi: f64| {
            let n = 20_000;
            let h = (hi - lo) / n as f64;
            (0..n)
                .map(|i| {
                    let a = lo + i as f64 * h;
                    h / 6.0 * (density(a) + 4.0 * density(a + 0.5 * h) + density(a + h))
                })
                .sum::<f64>()
        };
        let eps = 1e-9;
        assert!((simpson(eps, a_max - eps) - 1.0).abs() < 1e-3);
        for x in [0.1, 0.27, 0.45] {
            let want = std_normal_cdf((unsquash(x, a_max) - mean) / log_std.exp());
            assert!((simpson(eps, x) - want).abs() < 1e-3, "{x}");
        }
    }

    #[test]
    fn sample_mean_matches_quadrature() {
        // Analytic mean E[a_max (1 + tanh u)/2] for u ~ N(μ, σ) by quadrature.
        let p = small(9);
        let obs = [0.5, -0.5, 0.25];
        let mean = p.mean(&obs).unwrap();
        let log_std = p.log_std();
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut sums = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..n {
            let s = p.sample_action(&obs, &mut rng).unwrap();
            for i in 0..2 {
                sums[i] += s.action.0[i];
                sq[i] += s.action.0[i].powi(2);
            }
        }
        for i in 0..2 {
            let (m, sd) = (mean[i], log_std[i].exp());
            let steps = 4000;
            let (lo, hi) = (m - 10.0 * sd, m + 10.0 * sd);
            let h = (hi - lo) / steps as f64;
            let f = |u: f64| squash(u, 0.54) * (-0.5 * ((u - m) / sd).powi(2)).exp() / (sd * (2.0 * PI).sqrt());
            let analytic: f64 = (0..steps)
                .map(|k| {
                    let a = lo + k as f64 * h;
                    h / 6.0 * (f(a) + 4.0 * f(a + 0.5 * h) + f(a + h))
                })
                .sum();
            let emp = sums[i] / n as f64;
            let var = sq[i] / n as f64 - emp * emp;
            assert!((emp - analytic).abs() < 3.0 * var.sqrt() / (n as f64).sqrt(), "{emp} vs {analytic}");
        }
    }

    #[test]
    fn log_std_is_clamped() {
        let mut p = small(1);
        let n = p.theta.len();
        p.theta[n - 2] = -9.0;
        p.theta[n - 1] = 4.0;
        assert_eq!(p.log_std(), vec![LOG_STD_MIN, LOG_STD_MAX]);
    }

    #[test]
    fn log_prob_gradient_matches_finite_differences() {
        let p = small(5);
        let obs = [0.2, -0.7, 0.4];
        let u = [0.3, -0.2];
        let mut grad = vec![0.0; p.theta.len()];
        p.log_prob_with_grad(&obs, &u, 1.0, &mut grad);
        let h = 1e-6;
        for j in 0..p.theta.len() {
            let mut plus = p.clone();
            plus.theta[j] += h;
            let mut minus = p.clone();
            minus.theta[j] -= h;
            let fd = (plus.log_prob(&obs, &u).unwrap() - minus.log_prob(&obs, &u).unwrap()) / (2.0 * h);
            assert!((fd - grad[j]).abs() < 1e-6 * (1.0 + fd.abs()), "param {j}: {fd} vs {}", grad[j]);
        }
    }
}

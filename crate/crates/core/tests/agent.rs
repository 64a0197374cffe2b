use drlic::agent::{
    gradient_check, importance_ratio, max_relative_error, ppo_loss, ppo_loss_and_grad, squash, train, windowed_change,
    PolicySnapshot, RolloutBatch, RolloutStep, SeasonPool, TrainerConfig,
};
use drlic::env::{ActionVector, EnvConfig, NormStats};
use drlic::predictor::PredictorModel;
use drlic::weather::{synthesize_season, ClimateParams, ForecastNoise, WeatherDay};
use drlic::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_policy(seed: u64) -> PolicySnapshot {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = PolicySnapshot::init(3, &[4, 4], 2, 0.54, -0.4, &mut rng);
    for t in p.theta.iter_mut() {
        *t += 0.2 * (rng.random::<f64>() - 0.5);
    }
    p
}

fn batch_from(policy: &PolicySnapshot, n: usize, seed: u64) -> RolloutBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps: Vec<RolloutStep> = (0..n)
        .map(|i| {
            let obs: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let s = policy.sample_action(&obs, &mut rng).unwrap();
            RolloutStep {
                obs,
                pre_squash: s.pre_squash,
                action: s.action,
                old_log_prob: s.log_prob,
                reward: (i as f64 * 0.7).sin() * 3.0,
            }
        })
        .collect();
    RolloutBatch::from_episodes(vec![steps], 0.99)
}

#[test]
fn tiny_network_has_at_most_100_parameters() {
    assert!(tiny_policy(0).theta.len() <= 100);
}

#[test]
fn ppo_gradient_matches_finite_differences() {
    let old = tiny_policy(1);
    let batch = batch_from(&old, 8, 2);
    // Evaluate away from θ_old so the ratios are not all one.
    let mut policy = old.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for t in policy.theta.iter_mut() {
        *t += 0.02 * (rng.random::<f64>() - 0.5);
    }
    let err = gradient_check(&policy, &batch, 0.3, 1e-5).unwrap();
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn quadratic_loss_on_linear_policy() {
    // Linear policy (no hidden layer); loss Σ (mean(x) − y)².
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let policy = PolicySnapshot::init(3, &[], 2, 0.54, 0.0, &mut rng);
    let data: Vec<(Vec<f64>, Vec<f64>)> = (0..6)
        .map(|_| {
            let x: Vec<f64> = (0..3).map(|_| rng.random::<f64>() - 0.5).collect();
            let y: Vec<f64> = (0..2).map(|_| rng.random::<f64>()).collect();
            (x, y)
        })
        .collect();
    let loss = |p: &PolicySnapshot| -> f64 {
        data.iter()
            .map(|(x, y)| p.mean(x).unwrap().iter().zip(y).map(|(m, t)| (m - t).powi(2)).sum::<f64>())
            .sum()
    };
    let mut grad = vec![0.0; policy.theta.len()];
    for (x, y) in &data {
        let g: Vec<f64> = policy.mean(x).unwrap().iter().zip(y).map(|(m, t)| 2.0 * (m - t)).collect();
        policy.accumulate_grad(x, &g, &[0.0, 0.0], &mut grad);
    }
    let mut probe = policy.clone();
    let err = max_relative_error(
        |theta| {
            probe.theta.copy_from_slice(theta);
            loss(&probe)
        },
        &policy.theta,
        &grad,
        1e-5,
    );
    assert!(err < 1e-7, "max relative error {err}");
}

#[test]
fn zero_advantage_gives_zero_loss_and_gradient() {
    let policy = tiny_policy(5);
    let mut batch = batch_from(&policy, 8, 6);
    batch.returns.iter_mut().for_each(|r| *r = 4.0);
    let (loss, grad) = ppo_loss_and_grad(&batch, &policy, 0.3).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grad.iter().all(|g| *g == 0.0));
    assert!(gradient_check(&policy, &batch, 0.3, 1e-5).unwrap() == 0.0);
}

#[test]
fn ratio_one_loss_is_minus_mean_advantage() {
    let policy = tiny_policy(7);
    let batch = batch_from(&policy, 16, 8);
    // Normalised advantages have zero mean, so the ratio-one loss vanishes.
    assert!(ppo_loss(&batch, &policy, 0.3).unwrap().abs() < 1e-12);
    for s in &batch.steps {
        assert_eq!(importance_ratio(&policy, s.old_log_prob, &s.obs, &s.pre_squash).unwrap(), 1.0);
    }
    let s = &batch.steps[0];
    let w = importance_ratio(&policy, s.old_log_prob - std::f64::consts::LN_2, &s.obs, &s.pre_squash).unwrap();
    assert!((w - 2.0).abs() < 1e-12);
}

#[test]
fn first_gradient_step_decreases_loss() {
    let policy = tiny_policy(9);
    let batch = batch_from(&policy, 32, 10);
    let (loss0, grad) = ppo_loss_and_grad(&batch, &policy, 0.3).unwrap();
    let norm: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    assert!(norm > 0.0);
    let mut step = 1e-2;
    let mut improved = false;
    for _ in 0..20 {
        let mut p = policy.clone();
        for (t, g) in p.theta.iter_mut().zip(&grad) {
            *t -= step * g / norm;
        }
        if ppo_loss(&batch, &p, 0.3).unwrap() < loss0 {
            improved = true;
            break;
        }
        step *= 0.5;
    }
    assert!(improved);
}

/// One region, no weather inputs, soil that only moves with irrigation.
fn static_pool() -> SeasonPool {
    let mut config = EnvConfig::default();
    config.n_regions = 1;
    config.process_noise_std = 0.0;
    config.dynamics = vec![PredictorModel::new(1.0, 0.288, -0.103, 0.0)];
    let seasons: Vec<Vec<WeatherDay>> = (0..3)
        .map(|s| {
            let mut days = synthesize_season(s, 60, &ClimateParams::default(), &ForecastNoise::NONE);
            for d in &mut days {
                d.et = 0.0;
                d.precip = 0.0;
                d.predicted_et_next = 0.0;
                d.forecast_precip_next = 0.0;
            }
            days
        })
        .collect();
    SeasonPool::new(config, seasons).unwrap()
}

fn toy_trainer() -> TrainerConfig {
    TrainerConfig {
        hidden: vec![16],
        max_iterations: 60,
        min_iterations: 60,
        episodes_per_worker: 2,
        ..TrainerConfig::default()
    }
}

#[test]
fn static_soil_policy_learns_not_to_irrigate() {
    let pool = static_pool();
    let out = train(&toy_trainer(), &pool, 11).unwrap();
    assert!(!out.curve.is_empty());
    let stats = &out.policy.norm;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut env, mut state) = drlic::agent::EnvFactory::episode(&pool, &mut rng).unwrap();
    let mut total = 0.0;
    let mut n = 0.0;
    while !env.done() {
        let obs = drlic::env::normalize(&state, stats).unwrap();
        let a = out.policy.deterministic_action(&obs).unwrap();
        total += a.0[0];
        n += 1.0;
        state = env.step(&a).unwrap().next_state;
    }
    let mean_action = total / n;
    assert!(mean_action < 0.01, "mean action {mean_action}");
    let first = out.curve[0].total_reward;
    let last = out.curve.last().unwrap().total_reward;
    assert!(last > first, "{first} -> {last}");
}

#[test]
fn training_is_bitwise_deterministic() {
    let pool = static_pool();
    let cfg = TrainerConfig {
        max_iterations: 5,
        ..toy_trainer()
    };
    let a = train(&cfg, &pool, 21).unwrap();
    let b = train(&cfg, &pool, 21).unwrap();
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.policy, b.policy);
    let c = train(&cfg, &pool, 22).unwrap();
    assert_ne!(a.curve, c.curve);
}

#[test]
fn declared_convergence_respects_band() {
    let pool = static_pool();
    let cfg = TrainerConfig {
        hidden: vec![8],
        max_iterations: 300,
        min_iterations: 20,
        convergence_window: 5,
        convergence_band: 0.5,
        episodes_per_worker: 1,
        ..TrainerConfig::default()
    };
    let out = train(&cfg, &pool, 5).unwrap();
    if let Some(it) = out.converged_at {
        assert_eq!(it + 1, out.curve.len());
        assert!(windowed_change(&out.curve, cfg.convergence_window).unwrap() <= cfg.convergence_band);
    }
}

#[test]
fn invalid_trainer_configs_are_rejected() {
    let pool = static_pool();
    for cfg in [
        TrainerConfig { gamma: 0.0, ..toy_trainer() },
        TrainerConfig { gamma: 1.5, ..toy_trainer() },
        TrainerConfig { clip_epsilon: 0.0, ..toy_trainer() },
        TrainerConfig { minibatch_size: 0, ..toy_trainer() },
        TrainerConfig { episode_length: 10, ..toy_trainer() },
    ] {
        assert!(matches!(train(&cfg, &pool, 0), Err(Error::Config(_))));
    }
}

#[test]
fn diverged_parameters_abort_with_snapshot() {
    let pool = static_pool();
    let cfg = TrainerConfig {
        learning_rate: f64::MAX,
        max_iterations: 3,
        ..toy_trainer()
    };
    match train(&cfg, &pool, 1) {
        Err(Error::Diverged { snapshot, .. }) => assert!(!snapshot.theta.is_empty()),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn snapshot_carries_normalisation_and_hash() {
    let pool = static_pool();
    let cfg = TrainerConfig {
        max_iterations: 2,
        ..toy_trainer()
    };
    let out = train(&cfg, &pool, 3).unwrap();
    assert_eq!(out.policy.norm, pool.stats);
    assert_eq!(out.policy.version, 2);
    assert_eq!(out.policy.config_hash.len(), 64);
    let identity = NormStats::identity(1);
    assert_ne!(out.policy.norm, identity);
    assert!(squash(-50.0, 0.54) < 1e-12);
    let _ = ActionVector::zeros(1);
}

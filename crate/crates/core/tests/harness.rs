use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use drlic::agent::{EnvFactory, PolicySnapshot};
use drlic::controllers::{Controller, DecisionSource, DrlicController, EtController};
use drlic::env::{obs_dim, RewardKind};
use drlic::harness::{
    load_results, qos, read_manifest, read_summary_csv, run_experiment, run_season, summarize, water_savings,
    write_results, Policies, RunConfig, SeasonSetup, ROSTER, SUMMARY_CSV,
};

/// An untrained but well-formed policy; enough to drive the harness.
fn random_policy(cfg: &RunConfig, seed: u64) -> PolicySnapshot {
    let n = cfg.env.n_regions;
    let stats = cfg.training_pool(RewardKind::Full).unwrap().observation_stats();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PolicySnapshot::init(obs_dim(n), &[16], n, cfg.env.a_max, -0.5, &mut rng).with_norm(stats)
}

fn policies(cfg: &RunConfig) -> Policies {
    Policies {
        full: Some(random_policy(cfg, 1)),
        mad_only: Some(random_policy(cfg, 2)),
    }
}

#[test]
fn full_season_roster_shares_weather() {
    let cfg = RunConfig::default();
    let result = run_experiment(&cfg, &policies(&cfg)).unwrap();
    let names: Vec<&str> = result.entries.iter().map(|e| e.name.as_str()).collect();
    assert_eq!(names, ROSTER);

    let first = &result.entries[0];
    assert_eq!(first.season_length(), 246);
    assert_eq!(first.days[0].date.to_string(), "2021-03-01");
    // March 1 plus 245 days: the 246th day is November 1.
    assert_eq!(first.days[245].date.to_string(), "2021-11-01");
    for e in &result.entries {
        assert_eq!(e.season_length(), 246);
        let dates: Vec<_> = e.days.iter().map(|d| d.date).collect();
        let expect: Vec<_> = first.days.iter().map(|d| d.date).collect();
        assert_eq!(dates, expect, "{}", e.name);
    }

    // Same policy with and without the shield: identical until the first trigger.
    let shielded = result.get("DRLIC").unwrap();
    let bare = result.get("DRLIC_noshield").unwrap();
    let first_trigger = shielded.days.iter().position(|d| d.triggered).unwrap_or(246);
    for d in 0..first_trigger {
        assert_eq!(shielded.days[d].v, bare.days[d].v);
        assert_eq!(shielded.days[d].action, bare.days[d].action);
    }
}

#[test]
fn same_season_same_controller_same_trajectory() {
    let cfg = RunConfig::default();
    let setup = SeasonSetup::from_config(&cfg).unwrap();
    let et = EtController { a_max: cfg.env.a_max };
    let a = run_season(&setup, "ET", &et, None).unwrap();
    let b = run_season(&setup, "ET", &et, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(water_savings(&a, &b).unwrap(), 0.0);

    let mut other = cfg.clone();
    other.seed += 1;
    let c = run_season(&SeasonSetup::from_config(&other).unwrap(), "ET", &et, None).unwrap();
    assert_ne!(a.total_water, c.total_water);
}

#[test]
fn empty_roster_yields_empty_results() {
    let cfg = RunConfig {
        controllers: vec![],
        days: 20,
        ..RunConfig::default()
    };
    let result = run_experiment(&cfg, &Policies::default()).unwrap();
    assert!(result.entries.is_empty());
    assert!(summarize(&result).is_empty());

    let dir = tempfile::tempdir().unwrap();
    write_results(dir.path(), &result, Some(&cfg)).unwrap();
    assert!(load_results(dir.path()).unwrap().entries.is_empty());
}

#[test]
fn roster_without_policy_is_an_error() {
    let cfg = RunConfig {
        days: 20,
        ..RunConfig::default()
    };
    assert!(run_experiment(&cfg, &Policies::default()).is_err());
}

#[test]
fn experiments_are_deterministic() {
    let cfg = RunConfig {
        days: 60,
        ..RunConfig::default()
    };
    let p = policies(&cfg);
    assert_eq!(run_experiment(&cfg, &p).unwrap(), run_experiment(&cfg, &p).unwrap());
}

#[test]
fn results_round_trip_through_csv() {
    let cfg = RunConfig {
        days: 40,
        ..RunConfig::default()
    };
    let result = run_experiment(&cfg, &policies(&cfg)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_results(dir.path(), &result, Some(&cfg)).unwrap();

    assert_eq!(load_results(dir.path()).unwrap(), result);
    assert_eq!(read_summary_csv(dir.path().join(SUMMARY_CSV)).unwrap(), summarize(&result));
    let manifest = read_manifest(dir.path()).unwrap();
    assert_eq!(manifest.seed, cfg.seed);
    assert_eq!(manifest.config_hash, cfg.hash().unwrap());
    assert_eq!(manifest.days, 40);
    assert_eq!(manifest.controllers, ROSTER);
}

#[test]
fn executed_water_is_accounted_after_the_shield() {
    let cfg = RunConfig::default();
    let result = run_experiment(&cfg, &policies(&cfg)).unwrap();
    let levels = result.levels;
    for e in &result.entries {
        let sum: f64 = e.daily_water.iter().sum();
        assert!((e.total_water - sum).abs() < 1e-9);
        for (d, w) in e.days.iter().zip(&e.daily_water) {
            assert!((d.action.iter().sum::<f64>() - w).abs() < 1e-12);
            assert!(d.action.iter().all(|a| (0.0..=cfg.env.a_max).contains(a)));
            assert_eq!(d.triggered, d.source == DecisionSource::ShieldFallback);
        }
        assert_eq!(qos(e, &levels), (e.days_below_mad, e.days_above_fc));
        assert_eq!(e.shield_trigger_days, e.days.iter().filter(|d| d.triggered).count());
        for c in &e.region_counts {
            assert_eq!(c.below_mad + c.in_band + c.above_fc, e.season_length());
        }
    }

    // On triggered days the executed action is not the agent's proposal.
    let shielded = result.get("DRLIC").unwrap();
    let policy = policies(&cfg).full.unwrap();
    let setup = SeasonSetup::from_config(&cfg).unwrap();
    let agent = DrlicController { policy };
    let mut env = drlic::env::IrrigationEnv::new(setup.env.clone(), setup.weather.clone()).unwrap();
    let mut state = env.reset(setup.env_seed).unwrap();
    for d in &shielded.days {
        let proposal = agent.decide(&state).unwrap().action;
        if d.triggered {
            assert!(d.action.iter().zip(proposal.iter()).any(|(a, p)| a != p));
        } else {
            assert_eq!(d.action, proposal.0);
        }
        state = env.step(&drlic::env::ActionVector(d.action.clone())).unwrap().next_state;
    }
}

#[test]
fn deterministic_agent_repeats_its_action() {
    let cfg = RunConfig::default();
    let agent = DrlicController {
        policy: random_policy(&cfg, 5),
    };
    let setup = SeasonSetup::from_config(&cfg).unwrap();
    let mut env = drlic::env::IrrigationEnv::new(setup.env.clone(), setup.weather.clone()).unwrap();
    let state = env.reset(setup.env_seed).unwrap();
    let a = agent.decide(&state).unwrap();
    for _ in 0..10 {
        assert_eq!(agent.decide(&state).unwrap(), a);
    }
    assert_eq!(a.source, DecisionSource::Agent);
}

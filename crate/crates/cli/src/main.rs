use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use drlic::agent::{load_snapshot, save_snapshot, write_curve_csv, PolicySnapshot};
use drlic::controllers::SampledDrlicController;
use drlic::env::RewardKind;
use drlic::harness::{
    build_roster, derive_seed, format_table, run_roster, summarize, train_policy, write_results, ExperimentResult,
    Policies, RunConfig, SeasonSetup, SeedUse,
};
use drlic::predictor::{fit, load_observations};
use drlic::weather::{synthesize_season, write_weather, write_weather_csv};

#[derive(Parser, Debug)]
#[command(name = "drlic", version, about = "Irrigation control with a shielded PPO agent")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Built-in configuration (`default` or `field15`), used when no --config is given
    #[arg(long, global = true)]
    preset: Option<String>,

    /// Master seed, overriding the configuration
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Season length in days, overriding the configuration
    #[arg(long, global = true)]
    days: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the water-balance predictor to an observation CSV
    Identify {
        /// CSV with columns v_t, a_t, p_t, e_t, v_next
        input: PathBuf,
    },
    /// Train a policy and save it with its learning curve
    Train {
        #[arg(long, value_enum, default_value_t = Reward::Full)]
        reward: Reward,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one controller over a season
    Evaluate {
        /// ET, sensor, DRLIC, DRLIC_MAD or DRLIC_noshield
        #[arg(long)]
        controller: String,
        #[command(flatten)]
        policies: PolicyArgs,
        /// Run without the safety shield
        #[arg(long)]
        no_shield: bool,
        /// Sample agent actions instead of using the network mean
        #[arg(long)]
        sample: bool,
        /// Directory for result files
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the controller roster over one paired season
    Compare {
        #[command(flatten)]
        policies: PolicyArgs,
        /// Run every controller without the safety shield
        #[arg(long)]
        no_shield: bool,
        /// Directory for result files
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic weather season as CSV
    SynthWeather {
        /// Output file; standard output when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct PolicyArgs {
    /// Saved full-reward policy; trained on the fly when omitted
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Saved MAD-only policy; trained on the fly when omitted
    #[arg(long)]
    mad_policy: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Reward {
    Full,
    MadOnly,
}

impl From<Reward> for RewardKind {
    fn from(r: Reward) -> Self {
        match r {
            Reward::Full => RewardKind::Full,
            Reward::MadOnly => RewardKind::MadOnly,
        }
    }
}

type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = match (&common.config, &common.preset) {
        (Some(_), Some(_)) => return Err("--config and --preset are mutually exclusive".into()),
        (Some(path), None) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(days) = common.days {
        cfg.days = days;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Identify { input } => identify(&input),
        Command::Train { reward, out } => train(&load_config(&cli.common)?, reward.into(), &out),
        Command::Evaluate {
            controller,
            policies,
            no_shield,
            sample,
            out,
        } => {
            let mut cfg = load_config(&cli.common)?;
            cfg.controllers = vec![controller];
            let policies = resolve_policies(&cfg, &policies)?;
            let result = evaluate(&cfg, &policies, no_shield, sample)?;
            report(&cfg, &result, out.as_deref())
        }
        Command::Compare { policies, no_shield, out } => {
            let cfg = load_config(&cli.common)?;
            let policies = resolve_policies(&cfg, &policies)?;
            let result = evaluate(&cfg, &policies, no_shield, false)?;
            report(&cfg, &result, out.as_deref())
        }
        Command::SynthWeather { out } => {
            let cfg = load_config(&cli.common)?;
            let days = synthesize_season(
                derive_seed(cfg.seed, SeedUse::EvalWeather),
                cfg.days,
                &cfg.weather.climate,
                &cfg.weather.noise(),
            );
            match out {
                Some(path) => write_weather_csv(path, &days)?,
                None => write_weather(std::io::stdout().lock(), &days)?,
            }
            Ok(())
        }
    }
}

fn identify(input: &Path) -> CliResult<()> {
    let rows = load_observations(input)?;
    let model = fit(&rows)?;
    println!("rows      {}", rows.len());
    println!("c1        {:.6}", model.c1);
    println!("c2        {:.6}", model.c2);
    println!("c3        {:.6}", model.c3);
    println!("b         {:.6}", model.b);
    println!("r_squared {:.6}", model.r_squared);
    println!("nrmse     {:.6}", model.nrmse);
    for w in model.plausibility_warnings() {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn train(cfg: &RunConfig, reward: RewardKind, out: &Path) -> CliResult<()> {
    std::fs::create_dir_all(out)?;
    let outcome = train_policy(cfg, reward)?;
    let policy_path = out.join("policy.bin");
    save_snapshot(&policy_path, &outcome.policy)?;
    write_curve_csv(out.join("curve.csv"), &outcome.curve)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml_string()?)?;
    let last = outcome.curve.last().map_or(f64::NAN, |p| p.total_reward);
    match outcome.converged_at {
        Some(it) => println!("converged at iteration {it}, final reward {last:.3}"),
        None => println!("stopped after {} iterations without converging, final reward {last:.3}", outcome.curve.len()),
    }
    println!("policy written to {}", policy_path.display());
    Ok(())
}

fn resolve_policies(cfg: &RunConfig, args: &PolicyArgs) -> CliResult<Policies> {
    let needs = |names: &[&str]| cfg.controllers.iter().any(|c| names.contains(&c.as_str()));
    let get = |path: &Option<PathBuf>, reward: RewardKind| -> CliResult<PolicySnapshot> {
        match path {
            Some(p) => Ok(load_snapshot(p)?),
            None => {
                eprintln!("training {reward:?} policy...");
                Ok(train_policy(cfg, reward)?.policy)
            }
        }
    };
    Ok(Policies {
        full: match needs(&["DRLIC", "DRLIC_noshield"]) {
            true => Some(get(&args.policy, RewardKind::Full)?),
            false => None,
        },
        mad_only: match needs(&["DRLIC_MAD"]) {
            true => Some(get(&args.mad_policy, RewardKind::MadOnly)?),
            false => None,
        },
    })
}

fn evaluate(cfg: &RunConfig, policies: &Policies, no_shield: bool, sample: bool) -> CliResult<ExperimentResult> {
    let setup = SeasonSetup::from_config(cfg)?;
    let shield = cfg.shield_config()?;
    let mut roster = build_roster(cfg, &shield, policies)?;
    for entry in &mut roster {
        if no_shield {
            entry.shielded = false;
        }
        if sample {
            let policy = match entry.name.as_str() {
                "DRLIC" | "DRLIC_noshield" => policies.full.clone(),
                "DRLIC_MAD" => policies.mad_only.clone(),
                _ => None,
            };
            if let Some(policy) = policy {
                let seed = derive_seed(cfg.seed, SeedUse::PolicySampling);
                entry.controller = Box::new(SampledDrlicController::new(policy, seed));
            }
        }
    }
    Ok(ExperimentResult {
        seed: cfg.seed,
        config_hash: cfg.hash()?,
        levels: setup.levels(),
        entries: run_roster(&setup, &roster, &shield)?,
    })
}

fn report(cfg: &RunConfig, result: &ExperimentResult, out: Option<&Path>) -> CliResult<()> {
    let mut stdout = std::io::stdout().lock();
    write!(stdout, "{}", format_table(&summarize(result)))?;
    if let Some(dir) = out {
        write_results(dir, result, Some(cfg))?;
        writeln!(stdout, "results written to {}", dir.display())?;
    }
    Ok(())
}

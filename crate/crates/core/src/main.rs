use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use smoothrl::envs::{DisturbanceMode, EnvConfig, EnvKind};
use smoothrl::harness::{
    default_grid, eval_robust, grid_search, lipschitz_probe, percentile_csv, robust_csv, run_training, summarize,
    ExperimentConfig,
};
use smoothrl::policy::AnyPolicy;
use smoothrl::smoothreg::AdversaryConfig;

#[derive(Parser)]
#[command(name = "smoothrl", version, about = "Smoothness-regularized TRPO/DDPG experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config file and write CSVs and policies.
    Train { config: PathBuf },
    /// Evaluate a saved policy under observation disturbances.
    EvalRobust {
        policy: PathBuf,
        #[arg(long)]
        env: EnvKind,
        #[arg(long, default_value = "random")]
        mode: DisturbanceMode,
        /// Comma-separated radii.
        #[arg(long, value_delimiter = ',', default_value = "0,0.02,0.05,0.1")]
        eps: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        rollouts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Adversary restarts (adversarial mode).
        #[arg(long, default_value_t = 1)]
        restarts: usize,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Percentile table and aggregates of a finished run directory.
    Summarize { run_dir: PathBuf },
    /// Mean worst-case output divergence over on-policy states.
    ProbeSmoothness {
        policy: PathBuf,
        #[arg(long)]
        eps: f64,
        #[arg(short = 'n', default_value_t = 100)]
        n: usize,
        /// Defaults to the environment matching the policy's input size.
        #[arg(long)]
        env: Option<EnvKind>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        restarts: usize,
    },
    /// Train a config over the log-spaced (lambda_s, epsilon) grid.
    Grid {
        config: PathBuf,
        #[arg(long, default_value_t = 5)]
        lambdas: usize,
        #[arg(long, default_value_t = 5)]
        epsilons: usize,
    },
}

fn load_policy(path: &Path, env: &EnvConfig) -> Result<AnyPolicy> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let bounds = env.build().action_bounds().clone();
    AnyPolicy::from_text(&text, bounds).with_context(|| format!("loading policy {}", path.display()))
}

fn adversary(restarts: usize) -> AdversaryConfig {
    AdversaryConfig {
        restarts,
        ..AdversaryConfig::default()
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let report = run_training(&cfg)?;
            for (seed, records) in &report.runs {
                if let Some(last) = records.last() {
                    println!("seed {seed}: final mean return {:.4}", last.mean_return);
                }
            }
            for (seed, err) in &report.failed {
                eprintln!("seed {seed} failed: {err}");
            }
            println!("wrote {}", cfg.output_dir.display());
        }
        Command::EvalRobust {
            policy,
            env,
            mode,
            eps,
            rollouts,
            seed,
            restarts,
            out,
        } => {
            let env = EnvConfig::new(env);
            let p = load_policy(&policy, &env)?;
            let rows = eval_robust(&p, &env, mode, &eps, rollouts, &adversary(restarts), seed)?;
            let csv = robust_csv(&rows);
            match out {
                Some(path) => fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{csv}"),
            }
        }
        Command::Summarize { run_dir } => {
            let s = summarize(&run_dir)?;
            print!("{}", percentile_csv(&s.percentiles));
        }
        Command::ProbeSmoothness {
            policy,
            eps,
            n,
            env,
            seed,
            restarts,
        } => {
            let kind = match env {
                Some(k) => k,
                None => {
                    let text = fs::read_to_string(&policy).with_context(|| format!("reading {}", policy.display()))?;
                    let dim = AnyPolicy::peek_state_dim(&text)?;
                    match EnvKind::from_state_dim(dim) {
                        Some(k) => k,
                        None => bail!("no environment has state dimension {dim}; pass --env"),
                    }
                }
            };
            let env = EnvConfig::new(kind);
            let p = load_policy(&policy, &env)?;
            let score = lipschitz_probe(&p, &env, eps, n, &adversary(restarts), seed)?;
            println!("{score}");
        }
        Command::Grid {
            config,
            lambdas,
            epsilons,
        } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let (l, e) = default_grid(lambdas, epsilons);
            let res = grid_search(&cfg, &l, &e)?;
            fs::create_dir_all(&cfg.output_dir)?;
            let path = cfg.output_dir.join("grid.csv");
            fs::write(&path, res.to_csv()).with_context(|| format!("writing {}", path.display()))?;
            let (b, a) = (res.best(), &res.points[res.best_by_auc]);
            println!("best by final return: lambda_s = {}, epsilon = {}", b.lambda_s, b.epsilon);
            println!("best by area under curve: lambda_s = {}, epsilon = {}", a.lambda_s, a.epsilon);
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

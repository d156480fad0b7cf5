use std::fs;

use rayon::prelude::*;

use super::summary::{aggregate, aggregate_csv, records_csv};
use super::{ExperimentConfig, HarnessError, RunRecord};
use crate::ddpg::DdpgTrainer;
use crate::policy::AnyPolicy;
use crate::trpo::TrpoTrainer;

/// Results of a seed fan, in seed order.
#[derive(Clone, Debug)]
pub struct TrainingReport {
    pub runs: Vec<(u64, Vec<RunRecord>)>,
    pub policies: Vec<(u64, AnyPolicy)>,
    /// Seeds that errored, with the error message.
    pub failed: Vec<(u64, String)>,
}

impl TrainingReport {
    /// Last-checkpoint mean return of every completed seed.
    pub fn final_returns(&self) -> Vec<f64> {
        self.runs
            .iter()
            .filter_map(|(_, r)| r.last().map(|x| x.mean_return))
            .collect()
    }
}

/// Trains one seed and returns its checkpoints and final policy.
pub fn train_seed(cfg: &ExperimentConfig, seed: u64) -> Result<(Vec<RunRecord>, AnyPolicy), HarnessError> {
    if cfg.algo.is_trpo() {
        let mut t = TrpoTrainer::new(&cfg.env, cfg.trpo_config()?, &cfg.hidden, seed)?;
        let records = t.train(cfg.iterations, cfg.eval_episodes)?;
        Ok((records, AnyPolicy::Gaussian(t.policy().clone())))
    } else {
        let mut t = DdpgTrainer::new(&cfg.env, cfg.ddpg_config()?, &cfg.hidden, &cfg.critic_hidden, seed)?;
        let records = t.train(cfg.iterations * cfg.steps_per_iter, cfg.steps_per_iter, cfg.eval_episodes)?;
        Ok((records, AnyPolicy::Deterministic(t.actor().clone())))
    }
}

/// Trains every seed of `cfg` concurrently, without touching the disk.
pub fn train_seeds(cfg: &ExperimentConfig) -> Result<TrainingReport, HarnessError> {
    cfg.validate()?;
    let work = || -> Vec<_> { cfg.seeds.par_iter().map(|&s| (s, train_seed(cfg, s))).collect() };
    let outcomes = if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?
            .install(work)
    } else {
        work()
    };
    let mut report = TrainingReport {
        runs: Vec::new(),
        policies: Vec::new(),
        failed: Vec::new(),
    };
    for (seed, outcome) in outcomes {
        match outcome {
            Ok((records, policy)) => {
                report.runs.push((seed, records));
                report.policies.push((seed, policy));
            }
            Err(e) => {
                log::warn!("seed {seed} failed: {e}");
                report.failed.push((seed, e.to_string()));
            }
        }
    }
    Ok(report)
}

/// Trains every seed and writes, under `cfg.output_dir`:
/// `seed_<s>.csv` and `policy_<s>.txt` per completed seed, and
/// `aggregate.csv` across seeds (first line `# missing seeds: ...` when any
/// seed failed).
pub fn run_training(cfg: &ExperimentConfig) -> Result<TrainingReport, HarnessError> {
    let report = train_seeds(cfg)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let write = |name: String, text: String| {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))
    };
    for (seed, records) in &report.runs {
        write(format!("seed_{seed}.csv"), records_csv(records))?;
    }
    for (seed, policy) in &report.policies {
        write(format!("policy_{seed}.txt"), policy.to_text())?;
    }
    if report.runs.is_empty() {
        let why: Vec<String> = report.failed.iter().map(|(s, e)| format!("seed {s}: {e}")).collect();
        return Err(HarnessError::AllSeedsFailed(why.join("; ")));
    }
    let missing: Vec<u64> = report.failed.iter().map(|(s, _)| *s).collect();
    let runs: Vec<&[RunRecord]> = report.runs.iter().map(|(_, r)| r.as_slice()).collect();
    write("aggregate.csv".into(), aggregate_csv(&aggregate(&runs), &missing))?;
    Ok(report)
}

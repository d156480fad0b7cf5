//! On-policy training: TRPO and its smoothness-regularized variant.

mod rollout;
mod update;

pub use rollout::{
    advantages, collect, discounted_returns, raw_advantages, standardize, Batch, Trajectory,
};
pub use update::{
    conjugate_gradient, fisher_vec, mean_kl, surrogate, surrogate_grad, trpo_sr_update, FisherOperator,
    UpdateStats,
};

use std::fmt;
use std::str::FromStr;

use crate::autodiff::AutodiffError;
use crate::envs::{evaluate, EnvConfig, EnvError, Environment};
use crate::harness::RunRecord;
use crate::policy::{GaussianPolicy, PolicyError, ValueBaseline};
use crate::rng::{stream, Rng, Stream};
use crate::smoothreg::{AdversaryConfig, PerturbationBall, SmoothRegError};

#[derive(Debug, thiserror::Error)]
pub enum TrpoError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid TRPO configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    SmoothReg(#[from] SmoothRegError),
}

/// How the regularized policy gradient is turned into a step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateMode {
    /// Natural-gradient step scaled to the KL radius, with a backtracking
    /// line search.
    TrustRegion,
    /// Plain gradient step of size `step_size`, no trust region.
    Alg1,
}

impl FromStr for UpdateMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "trust-region" => Ok(UpdateMode::TrustRegion),
            "alg1" => Ok(UpdateMode::Alg1),
            other => Err(format!("unknown update mode `{other}` (expected trust-region or alg1)")),
        }
    }
}

impl fmt::Display for UpdateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpdateMode::TrustRegion => "trust-region",
            UpdateMode::Alg1 => "alg1",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrpoConfig {
    /// KL trust-region radius.
    pub max_kl: f64,
    pub gamma: f64,
    /// Environment steps collected per iteration.
    pub batch_steps: usize,
    /// Regularizer weight; zero gives plain TRPO.
    pub lambda_s: f64,
    pub ball: PerturbationBall,
    pub adversary: AdversaryConfig,
    pub mode: UpdateMode,
    /// Step size in `Alg1` mode.
    pub step_size: f64,
    pub cg_iters: usize,
    pub cg_damping: f64,
    pub backtracks: usize,
    pub baseline_ridge: f64,
    /// Initial policy standard deviation.
    pub init_std: f64,
}

impl Default for TrpoConfig {
    fn default() -> Self {
        Self {
            max_kl: 0.01,
            gamma: 0.99,
            batch_steps: 1000,
            lambda_s: 0.0,
            ball: PerturbationBall::new(0.0).expect("zero radius is valid"),
            adversary: AdversaryConfig::default(),
            mode: UpdateMode::TrustRegion,
            step_size: 0.01,
            cg_iters: 10,
            cg_damping: 0.1,
            backtracks: 10,
            baseline_ridge: 1e-5,
            init_std: 1.0,
        }
    }
}

impl TrpoConfig {
    pub fn validate(&self) -> Result<(), TrpoError> {
        let bad = |m: String| Err(TrpoError::InvalidConfig(m));
        if !(self.max_kl > 0.0) {
            return bad(format!("max_kl must be positive, got {}", self.max_kl));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if self.batch_steps == 0 {
            return bad("batch steps must be positive".into());
        }
        if !(self.lambda_s >= 0.0) || !self.lambda_s.is_finite() {
            return bad(format!("lambda_s must be non-negative, got {}", self.lambda_s));
        }
        if !(self.step_size >= 0.0) {
            return bad(format!("step size must be non-negative, got {}", self.step_size));
        }
        if !(self.cg_damping >= 0.0) {
            return bad(format!("CG damping must be non-negative, got {}", self.cg_damping));
        }
        if !(self.init_std > 0.0) {
            return bad(format!("initial std must be positive, got {}", self.init_std));
        }
        self.adversary.validate()?;
        Ok(())
    }
}

/// A TRPO(-SR) training run on one seed.
pub struct TrpoTrainer {
    env_config: EnvConfig,
    env: Box<dyn Environment + Send>,
    cfg: TrpoConfig,
    seed: u64,
    policy: GaussianPolicy,
    baseline: ValueBaseline,
    env_rng: Rng,
    action_rng: Rng,
    adversary_rng: Rng,
    steps: usize,
    iteration: usize,
}

impl TrpoTrainer {
    /// `hidden` lists the hidden-layer widths of the mean network.
    pub fn new(env_config: &EnvConfig, cfg: TrpoConfig, hidden: &[usize], seed: u64) -> Result<Self, TrpoError> {
        cfg.validate()?;
        let env = env_config.build();
        let mut sizes = vec![env.state_dim()];
        sizes.extend(hidden);
        sizes.push(env.action_dim());
        let policy = GaussianPolicy::init(&sizes, cfg.init_std, &mut stream(seed, Stream::Init))?;
        let baseline = ValueBaseline::new(cfg.baseline_ridge, env.horizon());
        Ok(Self {
            env_config: env_config.clone(),
            env,
            cfg,
            seed,
            policy,
            baseline,
            env_rng: stream(seed, Stream::Env),
            action_rng: stream(seed, Stream::Action),
            adversary_rng: stream(seed, Stream::Adversary),
            steps: 0,
            iteration: 0,
        })
    }

    pub fn policy(&self) -> &GaussianPolicy {
        &self.policy
    }

    pub fn config(&self) -> &TrpoConfig {
        &self.cfg
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Collects one batch and updates the policy; returns the batch used and
    /// the update diagnostics.
    pub fn iterate(&mut self) -> Result<(Batch, UpdateStats), TrpoError> {
        let trajs = collect(
            &mut self.env,
            &self.policy,
            self.cfg.batch_steps,
            &mut self.env_rng,
            &mut self.action_rng,
        )?;
        let adv = advantages(&trajs, &mut self.baseline, self.cfg.gamma)?;
        let batch = Batch::new(&trajs, adv, self.cfg.gamma)?;
        let stats = trpo_sr_update(&mut self.policy, &batch, &self.cfg, &mut self.adversary_rng)?;
        self.steps += batch.len();
        self.iteration += 1;
        Ok((batch, stats))
    }

    /// Mean-action returns over `episodes` episodes. Every call replays the
    /// same evaluation start states.
    pub fn evaluate(&self, episodes: usize) -> Result<(f64, f64), TrpoError> {
        let mut env = self.env_config.build();
        let policy = &self.policy;
        Ok(evaluate(
            &mut env,
            |s| Ok(policy.mean_action(s)?),
            episodes,
            &mut stream(self.seed, Stream::Eval),
        )?)
    }

    /// Runs `iterations` iterations, evaluating after each.
    pub fn train(&mut self, iterations: usize, eval_episodes: usize) -> Result<Vec<RunRecord>, TrpoError> {
        let mut records = Vec::with_capacity(iterations);
        for _ in 0..iterations {
            let (_, stats) = self.iterate()?;
            let (mean_return, std_return) = self.evaluate(eval_episodes)?;
            log::debug!(
                "trpo seed {} iter {}: return {mean_return:.3}, kl {:.5}",
                self.seed,
                self.iteration,
                stats.mean_kl
            );
            records.push(RunRecord {
                iter: self.iteration,
                steps: self.steps,
                seed: self.seed,
                mean_return,
                std_return,
                mean_kl: stats.mean_kl,
                reg_value: stats.reg_value,
                adv_div: stats.adv_div,
            });
        }
        Ok(records)
    }
}

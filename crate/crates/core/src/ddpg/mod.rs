//! Off-policy training: DDPG and its actor- and critic-regularized variants.

mod replay;
mod update;

pub use replay::{MiniBatch, ReplayBuffer, Transition};
pub use update::{
    actor_objective_grad, actor_update, critic_loss_grad, critic_target, critic_update, polyak, Optimizer,
    OptimizerKind, StepStats,
};

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{AutodiffError, Mlp};
use crate::envs::{evaluate, EnvConfig, EnvError, Environment};
use crate::harness::RunRecord;
use crate::policy::{DeterministicPolicy, PolicyError, QNet};
use crate::rng::{stream, Rng, Stream};
use crate::smoothreg::{AdversaryConfig, PerturbationBall, SmoothRegError};

#[derive(Debug, thiserror::Error)]
pub enum DdpgError {
    #[error("empty minibatch")]
    EmptyBatch,
    #[error("transition dimensions are inconsistent")]
    InconsistentTransition,
    #[error("invalid DDPG configuration: {0}")]
    InvalidConfig(String),
    #[error("replay buffer holds {have} transitions, {need} requested")]
    InsufficientReplay { have: usize, need: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    SmoothReg(#[from] SmoothRegError),
}

/// Which network carries the smoothness penalty.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    None,
    /// Actor: `‖μ(s) − μ(ŝ)‖²`.
    SrA,
    /// Critic: `(Q(s,a) − Q(ŝ,a))²`.
    SrC,
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "none" => Ok(Variant::None),
            "sr-a" => Ok(Variant::SrA),
            "sr-c" => Ok(Variant::SrC),
            other => Err(format!("unknown DDPG variant `{other}` (expected none, sr-a or sr-c)")),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::None => "none",
            Variant::SrA => "sr-a",
            Variant::SrC => "sr-c",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DdpgConfig {
    pub gamma: f64,
    /// Target tracking rate.
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    pub capacity: usize,
    /// Exploration noise std as a fraction of the half action range, at the
    /// first step and at the end of the anneal.
    pub noise_start: f64,
    pub noise_end: f64,
    /// Steps over which the noise anneals; `None` uses the length of the
    /// `train` call.
    pub noise_anneal_steps: Option<usize>,
    /// Transitions stored before the first update; `None` means ten batches.
    pub warmup: Option<usize>,
    pub variant: Variant,
    pub lambda_s: f64,
    pub ball: PerturbationBall,
    pub adversary: AdversaryConfig,
    pub optimizer: OptimizerKind,
    /// Bound the actor output with a scaled tanh instead of clamping only.
    pub squash_actor: bool,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            batch_size: 64,
            capacity: 100_000,
            noise_start: 0.1,
            noise_end: 0.01,
            noise_anneal_steps: None,
            warmup: None,
            variant: Variant::None,
            lambda_s: 0.0,
            ball: PerturbationBall::new(0.0).expect("zero radius is valid"),
            adversary: AdversaryConfig::default(),
            optimizer: OptimizerKind::Sgd,
            squash_actor: true,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<(), DdpgError> {
        let bad = |m: String| Err(DdpgError::InvalidConfig(m));
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if !(self.actor_lr >= 0.0) || !(self.critic_lr >= 0.0) {
            return bad("step sizes must be non-negative".into());
        }
        if self.batch_size == 0 || self.capacity == 0 {
            return bad("batch size and capacity must be positive".into());
        }
        if !(self.noise_start >= 0.0) || !(self.noise_end >= 0.0) {
            return bad("exploration noise must be non-negative".into());
        }
        if !(self.lambda_s >= 0.0) || !self.lambda_s.is_finite() {
            return bad(format!("lambda_s must be non-negative, got {}", self.lambda_s));
        }
        if self.warmup() > self.capacity {
            return bad(format!("warm-up {} exceeds capacity {}", self.warmup(), self.capacity));
        }
        self.adversary.validate()?;
        Ok(())
    }

    pub fn warmup(&self) -> usize {
        self.warmup.unwrap_or(10 * self.batch_size).max(self.batch_size)
    }
}

/// A DDPG(-SR) training run on one seed.
pub struct DdpgTrainer {
    env_config: EnvConfig,
    env: Box<dyn Environment + Send>,
    cfg: DdpgConfig,
    seed: u64,
    actor: DeterministicPolicy,
    critic: QNet,
    target_actor: DeterministicPolicy,
    target_critic: QNet,
    actor_opt: Optimizer,
    critic_opt: Optimizer,
    buffer: ReplayBuffer,
    env_rng: Rng,
    noise_rng: Rng,
    adversary_rng: Rng,
    replay_rng: Rng,
    obs: Vec<f64>,
    episode_t: usize,
    steps: usize,
    block: BlockStats,
}

#[derive(Default)]
struct BlockStats {
    updates: usize,
    reg_value: f64,
    adv_div: f64,
}

impl DdpgTrainer {
    /// `actor_hidden` and `critic_hidden` list hidden-layer widths.
    pub fn new(
        env_config: &EnvConfig,
        cfg: DdpgConfig,
        actor_hidden: &[usize],
        critic_hidden: &[usize],
        seed: u64,
    ) -> Result<Self, DdpgError> {
        cfg.validate()?;
        let mut env = env_config.build();
        let (sd, ad) = (env.state_dim(), env.action_dim());
        let mut sizes = vec![sd];
        sizes.extend(actor_hidden);
        sizes.push(ad);
        let mut init = stream(seed, Stream::Init);
        let net = Mlp::new(&sizes, &mut init)?;
        let bounds = env.action_bounds().clone();
        let actor = if cfg.squash_actor {
            DeterministicPolicy::squashed(net, bounds)?
        } else {
            DeterministicPolicy::new(net, bounds)?
        };
        let critic = QNet::init(sd, ad, critic_hidden, &mut init)?;
        let mut env_rng = stream(seed, Stream::Env);
        let obs = env.reset(&mut env_rng);
        Ok(Self {
            env_config: env_config.clone(),
            env,
            actor_opt: Optimizer::new(cfg.optimizer, cfg.actor_lr, actor.net.param_count()),
            critic_opt: Optimizer::new(cfg.optimizer, cfg.critic_lr, critic.net.param_count()),
            buffer: ReplayBuffer::new(cfg.capacity)?,
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            cfg,
            seed,
            env_rng,
            noise_rng: stream(seed, Stream::Action),
            adversary_rng: stream(seed, Stream::Adversary),
            replay_rng: stream(seed, Stream::Replay),
            obs,
            episode_t: 0,
            steps: 0,
            block: BlockStats::default(),
        })
    }

    pub fn actor(&self) -> &DeterministicPolicy {
        &self.actor
    }

    pub fn critic(&self) -> &QNet {
        &self.critic
    }

    pub fn config(&self) -> &DdpgConfig {
        &self.cfg
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    fn noise_fraction(&self, anneal: usize) -> f64 {
        let progress = if anneal == 0 {
            1.0
        } else {
            (self.steps as f64 / anneal as f64).min(1.0)
        };
        self.cfg.noise_start + (self.cfg.noise_end - self.cfg.noise_start) * progress
    }

    /// One environment step followed, once warm-up is over, by one critic
    /// update, one actor update and one target update.
    pub fn step(&mut self, anneal: usize) -> Result<(), DdpgError> {
        let frac = self.noise_fraction(anneal);
        let bounds = self.env.action_bounds().clone();
        let mut a = self.actor.raw(&self.obs)?;
        for (x, h) in a.iter_mut().zip(bounds.half_range()) {
            let z: f64 = StandardNormal.sample(&mut self.noise_rng);
            *x += frac * h * z;
        }
        let a = bounds.clamp(&a);
        let step = self.env.step(&a)?;
        self.buffer.push(Transition {
            state: std::mem::take(&mut self.obs),
            action: a,
            reward: step.reward,
            next_state: step.observation.clone(),
            done: step.done,
        });
        self.steps += 1;
        self.episode_t += 1;
        if step.done || self.episode_t >= self.env.horizon() {
            self.obs = self.env.reset(&mut self.env_rng);
            self.episode_t = 0;
        } else {
            self.obs = step.observation;
        }
        if self.buffer.len() >= self.cfg.warmup() {
            self.learn()?;
        }
        Ok(())
    }

    fn learn(&mut self) -> Result<(), DdpgError> {
        let batch = self.buffer.sample(self.cfg.batch_size, &mut self.replay_rng)?;
        let y = critic_target(&batch, &self.target_critic, &self.target_actor, self.cfg.gamma)?;
        let c = critic_update(&mut self.critic, &mut self.critic_opt, &batch, &y, &self.cfg, &mut self.adversary_rng)?;
        let a = actor_update(
            &mut self.actor,
            &self.critic,
            &mut self.actor_opt,
            &batch,
            &self.cfg,
            &mut self.adversary_rng,
        )?;
        polyak(&mut self.target_critic.net, &self.critic.net, self.cfg.tau)?;
        polyak(&mut self.target_actor.net, &self.actor.net, self.cfg.tau)?;
        let regularized = match self.cfg.variant {
            Variant::SrA => a,
            Variant::SrC => c,
            Variant::None => StepStats::default(),
        };
        self.block.updates += 1;
        self.block.reg_value += regularized.reg_value;
        self.block.adv_div += regularized.adv_div;
        Ok(())
    }

    /// Clamped actor returns over `episodes` episodes; every call replays the
    /// same evaluation start states.
    pub fn evaluate(&self, episodes: usize) -> Result<(f64, f64), DdpgError> {
        let mut env = self.env_config.build();
        let actor = &self.actor;
        Ok(evaluate(
            &mut env,
            |s| Ok(actor.act(s)?),
            episodes,
            &mut stream(self.seed, Stream::Eval),
        )?)
    }

    /// Runs `total_steps` environment steps, evaluating every `eval_every`
    /// steps. `reg_value` and `adv_div` are averaged over the updates of
    /// each block.
    pub fn train(
        &mut self,
        total_steps: usize,
        eval_every: usize,
        eval_episodes: usize,
    ) -> Result<Vec<RunRecord>, DdpgError> {
        if eval_every == 0 {
            return Err(DdpgError::InvalidConfig("evaluation interval must be positive".into()));
        }
        let anneal = self.cfg.noise_anneal_steps.unwrap_or(self.steps + total_steps);
        let mut records = Vec::new();
        for k in 1..=total_steps {
            self.step(anneal)?;
            if k % eval_every == 0 {
                let (mean_return, std_return) = self.evaluate(eval_episodes)?;
                let n = self.block.updates.max(1) as f64;
                log::debug!("ddpg seed {} step {}: return {mean_return:.3}", self.seed, self.steps);
                records.push(RunRecord {
                    iter: self.steps / eval_every,
                    steps: self.steps,
                    seed: self.seed,
                    mean_return,
                    std_return,
                    mean_kl: 0.0,
                    reg_value: self.block.reg_value / n,
                    adv_div: self.block.adv_div / n,
                });
                self.block = BlockStats::default();
            }
        }
        Ok(records)
    }
}

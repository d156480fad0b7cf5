use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::HarnessError;
use crate::ddpg::{DdpgConfig, OptimizerKind, Variant};
use crate::envs::{EnvConfig, EnvKind};
use crate::smoothreg::{AdversaryConfig, AdversaryInit, AscentRule, PerturbationBall};
use crate::trpo::{TrpoConfig, UpdateMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algo {
    Trpo,
    TrpoSr,
    Ddpg,
    DdpgSrA,
    DdpgSrC,
}

impl Algo {
    pub fn is_trpo(self) -> bool {
        matches!(self, Algo::Trpo | Algo::TrpoSr)
    }

    /// Baselines carry no regularizer.
    pub fn is_baseline(self) -> bool {
        matches!(self, Algo::Trpo | Algo::Ddpg)
    }
}

impl FromStr for Algo {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "trpo" => Ok(Algo::Trpo),
            "trpo-sr" => Ok(Algo::TrpoSr),
            "ddpg" => Ok(Algo::Ddpg),
            "ddpg-sr-a" => Ok(Algo::DdpgSrA),
            "ddpg-sr-c" => Ok(Algo::DdpgSrC),
            other => Err(format!(
                "unknown algorithm `{other}` (expected trpo, trpo-sr, ddpg, ddpg-sr-a or ddpg-sr-c)"
            )),
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algo::Trpo => "trpo",
            Algo::TrpoSr => "trpo-sr",
            Algo::Ddpg => "ddpg",
            Algo::DdpgSrA => "ddpg-sr-a",
            Algo::DdpgSrC => "ddpg-sr-c",
        })
    }
}

/// Everything a `train` invocation needs.
///
/// For DDPG one iteration is `steps_per_iter` environment steps followed by
/// an evaluation, so both trainers emit one CSV row per iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub algo: Algo,
    pub env: EnvConfig,
    pub lambda_s: f64,
    pub epsilon: f64,
    pub adversary: AdversaryConfig,
    pub seeds: Vec<u64>,
    pub iterations: usize,
    pub steps_per_iter: usize,
    pub eval_episodes: usize,
    pub output_dir: PathBuf,
    pub hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub gamma: f64,
    pub trpo: TrpoConfig,
    pub ddpg: DdpgConfig,
    /// Worker threads for the seed fan; 0 lets rayon decide.
    pub threads: usize,
}

impl ExperimentConfig {
    /// Defaults for everything but the two required keys.
    pub fn new(algo: Algo, env: EnvKind) -> Self {
        Self {
            algo,
            env: EnvConfig::new(env),
            lambda_s: 0.0,
            epsilon: 0.0,
            adversary: AdversaryConfig::default(),
            seeds: (0..10).collect(),
            iterations: 500,
            steps_per_iter: 1000,
            eval_episodes: 10,
            output_dir: PathBuf::from("runs"),
            hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            gamma: 0.99,
            trpo: TrpoConfig::default(),
            ddpg: DdpgConfig::default(),
            threads: 0,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidConfig(m));
        if self.algo.is_baseline() && self.lambda_s != 0.0 {
            return bad(format!("lambda_s = {} has no effect for algo {}", self.lambda_s, self.algo));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.iterations == 0 || self.steps_per_iter == 0 {
            return bad("iterations and steps_per_iter must be positive".into());
        }
        if self.algo.is_trpo() {
            self.trpo_config()?.validate()?;
        } else {
            self.ddpg_config()?.validate()?;
        }
        Ok(())
    }

    fn ball(&self) -> Result<PerturbationBall, HarnessError> {
        Ok(PerturbationBall::new(self.epsilon)?)
    }

    /// The TRPO trainer settings implied by the shared keys.
    pub fn trpo_config(&self) -> Result<TrpoConfig, HarnessError> {
        Ok(TrpoConfig {
            gamma: self.gamma,
            batch_steps: self.steps_per_iter,
            lambda_s: self.lambda_s,
            ball: self.ball()?,
            adversary: self.adversary,
            ..self.trpo.clone()
        })
    }

    /// The DDPG trainer settings implied by the shared keys.
    pub fn ddpg_config(&self) -> Result<DdpgConfig, HarnessError> {
        let variant = match self.algo {
            Algo::DdpgSrA => Variant::SrA,
            Algo::DdpgSrC => Variant::SrC,
            _ => Variant::None,
        };
        Ok(DdpgConfig {
            gamma: self.gamma,
            variant,
            lambda_s: self.lambda_s,
            ball: self.ball()?,
            adversary: self.adversary,
            ..self.ddpg.clone()
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text)
    }

    /// Parses the `key = value` format; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| HarnessError::Syntax {
                line: i + 1,
                text: raw.trim().to_string(),
            })?;
            entries.push((i + 1, key.trim().to_string(), value.trim().to_string()));
        }
        let find = |k: &str| entries.iter().rev().find(|(_, key, _)| key == k);
        let (_, _, algo) = find("algo").ok_or(HarnessError::MissingKey("algo"))?;
        let algo: Algo = algo.parse().map_err(HarnessError::UnknownAlgorithm)?;
        let (line, _, env) = find("env").ok_or(HarnessError::MissingKey("env"))?;
        let env: EnvKind = env.parse().map_err(|e: crate::envs::EnvError| HarnessError::Malformed {
            line: *line,
            key: "env".into(),
            reason: e.to_string(),
        })?;
        let mut cfg = Self::new(algo, env);
        let (mut base_seed, mut num_seeds) = (None, None);
        for (line, key, value) in &entries {
            let m = |reason: String| HarnessError::Malformed {
                line: *line,
                key: key.clone(),
                reason,
            };
            match key.as_str() {
                "algo" | "env" => {}
                "lambda_s" => cfg.lambda_s = num(value).map_err(m)?,
                "epsilon" => cfg.epsilon = num(value).map_err(m)?,
                "seeds" => cfg.seeds = list(value).map_err(m)?,
                "base_seed" => base_seed = Some(num::<u64>(value).map_err(m)?),
                "num_seeds" => num_seeds = Some(num::<u64>(value).map_err(m)?),
                "iterations" => cfg.iterations = num(value).map_err(m)?,
                "steps_per_iter" => cfg.steps_per_iter = num(value).map_err(m)?,
                "eval_episodes" => cfg.eval_episodes = num(value).map_err(m)?,
                "output_dir" => cfg.output_dir = PathBuf::from(value),
                "hidden" => cfg.hidden = list(value).map_err(m)?,
                "critic_hidden" => cfg.critic_hidden = list(value).map_err(m)?,
                "gamma" => cfg.gamma = num(value).map_err(m)?,
                "threads" => cfg.threads = num(value).map_err(m)?,
                "adversary.steps" => cfg.adversary.steps = num(value).map_err(m)?,
                "adversary.step_ratio" => cfg.adversary.step_ratio = num(value).map_err(m)?,
                "adversary.restarts" => cfg.adversary.restarts = num(value).map_err(m)?,
                "adversary.init" => {
                    cfg.adversary.init = match value.as_str() {
                        "uniform" => AdversaryInit::Uniform,
                        "zero" => AdversaryInit::Zero,
                        _ => return Err(m("expected uniform or zero".into())),
                    }
                }
                "adversary.rule" => {
                    cfg.adversary.rule = match value.as_str() {
                        "sign" => AscentRule::Sign,
                        "gradient" => AscentRule::Gradient,
                        _ => return Err(m("expected sign or gradient".into())),
                    }
                }
                "trpo.max_kl" => cfg.trpo.max_kl = num(value).map_err(m)?,
                "trpo.mode" => cfg.trpo.mode = value.parse::<UpdateMode>().map_err(m)?,
                "trpo.step_size" => cfg.trpo.step_size = num(value).map_err(m)?,
                "trpo.cg_iters" => cfg.trpo.cg_iters = num(value).map_err(m)?,
                "trpo.cg_damping" => cfg.trpo.cg_damping = num(value).map_err(m)?,
                "trpo.backtracks" => cfg.trpo.backtracks = num(value).map_err(m)?,
                "trpo.baseline_ridge" => cfg.trpo.baseline_ridge = num(value).map_err(m)?,
                "trpo.init_std" => cfg.trpo.init_std = num(value).map_err(m)?,
                "ddpg.tau" => cfg.ddpg.tau = num(value).map_err(m)?,
                "ddpg.actor_lr" => cfg.ddpg.actor_lr = num(value).map_err(m)?,
                "ddpg.critic_lr" => cfg.ddpg.critic_lr = num(value).map_err(m)?,
                "ddpg.batch_size" => cfg.ddpg.batch_size = num(value).map_err(m)?,
                "ddpg.capacity" => cfg.ddpg.capacity = num(value).map_err(m)?,
                "ddpg.noise_start" => cfg.ddpg.noise_start = num(value).map_err(m)?,
                "ddpg.noise_end" => cfg.ddpg.noise_end = num(value).map_err(m)?,
                "ddpg.noise_anneal_steps" => cfg.ddpg.noise_anneal_steps = Some(num(value).map_err(m)?),
                "ddpg.warmup" => cfg.ddpg.warmup = Some(num(value).map_err(m)?),
                "ddpg.optimizer" => cfg.ddpg.optimizer = value.parse::<OptimizerKind>().map_err(m)?,
                "ddpg.squash" => cfg.ddpg.squash_actor = num(value).map_err(m)?,
                "pointmass.dt" => cfg.env.pointmass.dt = num(value).map_err(m)?,
                "pointmass.goal" => {
                    let g: Vec<f64> = list(value).map_err(m)?;
                    cfg.env.pointmass.goal = g.try_into().map_err(|_| m("expected two numbers".into()))?;
                }
                "pointmass.action_cost" => cfg.env.pointmass.action_cost = num(value).map_err(m)?,
                "pointmass.horizon" => cfg.env.pointmass.horizon = num(value).map_err(m)?,
                "pendulum.gravity" => cfg.env.pendulum.gravity = num(value).map_err(m)?,
                "pendulum.mass" => cfg.env.pendulum.mass = num(value).map_err(m)?,
                "pendulum.length" => cfg.env.pendulum.length = num(value).map_err(m)?,
                "pendulum.dt" => cfg.env.pendulum.dt = num(value).map_err(m)?,
                "pendulum.max_speed" => cfg.env.pendulum.max_speed = num(value).map_err(m)?,
                "pendulum.max_torque" => cfg.env.pendulum.max_torque = num(value).map_err(m)?,
                "pendulum.horizon" => cfg.env.pendulum.horizon = num(value).map_err(m)?,
                _ => {
                    return Err(HarnessError::UnknownKey {
                        line: *line,
                        key: key.clone(),
                    })
                }
            }
        }
        if let Some(n) = num_seeds {
            let base = base_seed.unwrap_or(0);
            cfg.seeds = (0..n).map(|i| base + i).collect();
        } else if let Some(base) = base_seed {
            let n = cfg.seeds.len() as u64;
            cfg.seeds = (0..n).map(|i| base + i).collect();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn num<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("`{v}`: {e}"))
}

fn list<T: FromStr>(v: &str) -> Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| num(s.trim())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_takes_defaults() {
        let cfg = ExperimentConfig::parse("algo = trpo\nenv = pendulum\n").unwrap();
        assert_eq!(cfg, ExperimentConfig::new(Algo::Trpo, EnvKind::Pendulum));
        assert_eq!(cfg.iterations, 500);
        assert_eq!(cfg.steps_per_iter, 1000);
        assert_eq!(cfg.seeds.len(), 10);
        assert_eq!(cfg.eval_episodes, 10);
    }

    #[test]
    fn values_round_trip() {
        let text = "# comment\nalgo = trpo-sr  # trailing\nenv = pointmass\nlambda_s = 1.0\nepsilon=0.05\nseeds = 7, 9\n\
                    hidden = 32,32\nadversary.rule = gradient\npointmass.goal = 2, -1\ntrpo.mode = alg1\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.lambda_s, 1.0);
        assert_eq!(cfg.epsilon, 0.05);
        assert_eq!(cfg.seeds, vec![7, 9]);
        assert_eq!(cfg.hidden, vec![32, 32]);
        assert_eq!(cfg.adversary.rule, AscentRule::Gradient);
        assert_eq!(cfg.env.pointmass.goal, [2.0, -1.0]);
        assert_eq!(cfg.trpo_config().unwrap().mode, UpdateMode::Alg1);
    }

    #[test]
    fn base_seed_expands() {
        let cfg = ExperimentConfig::parse("algo=ddpg\nenv=pendulum\nbase_seed=100\nnum_seeds=3\n").unwrap();
        assert_eq!(cfg.seeds, vec![100, 101, 102]);
    }

    #[test]
    fn failures_are_distinct() {
        let err = ExperimentConfig::parse("algo = frobnicate\nenv = pendulum\n").unwrap_err();
        assert!(matches!(err, HarnessError::UnknownAlgorithm(_)));
        assert!(err.to_string().contains("unknown algorithm"));

        let err = ExperimentConfig::parse("algo = trpo\nenv = pendulum\nlamda_s = 1\n").unwrap_err();
        assert!(matches!(err, HarnessError::UnknownKey { line: 3, .. }), "{err}");

        let err = ExperimentConfig::parse("algo = trpo-sr\nenv = pendulum\nlambda_s = lots\n").unwrap_err();
        assert!(matches!(err, HarnessError::Malformed { line: 3, .. }), "{err}");

        let err = ExperimentConfig::parse("env = pendulum\n").unwrap_err();
        assert!(matches!(err, HarnessError::MissingKey("algo")));
        let err = ExperimentConfig::parse("algo = trpo\n").unwrap_err();
        assert!(matches!(err, HarnessError::MissingKey("env")));

        let err = ExperimentConfig::parse("algo = trpo\nenv = pendulum\njust words\n").unwrap_err();
        assert!(matches!(err, HarnessError::Syntax { line: 3, .. }));

        let err = ExperimentConfig::parse("algo = trpo\nenv = pendulum\nlambda_s = 0.5\n").unwrap_err();
        assert!(matches!(err, HarnessError::InvalidConfig(_)));
    }

    #[test]
    fn variant_follows_algo() {
        let cfg = ExperimentConfig::parse("algo = ddpg-sr-c\nenv = pointmass\nlambda_s = 2\n").unwrap();
        let d = cfg.ddpg_config().unwrap();
        assert_eq!(d.variant, Variant::SrC);
        assert_eq!(d.lambda_s, 2.0);
    }
}

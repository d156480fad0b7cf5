use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use super::{ActionBounds, EnvError, Environment, Step};
use crate::policy::AnyPolicy;
use crate::rng::Rng;
use crate::smoothreg::{inner_max_deterministic, inner_max_policy, AdversaryConfig, PerturbationBall};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DisturbanceMode {
    /// `δ` uniform on the ball.
    Random,
    /// `δ` maximizing the policy's output discrepancy on the ball.
    Adversarial,
}

impl FromStr for DisturbanceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "random" => Ok(DisturbanceMode::Random),
            "adversarial" => Ok(DisturbanceMode::Adversarial),
            other => Err(format!("unknown disturbance mode `{other}` (expected random or adversarial)")),
        }
    }
}

impl fmt::Display for DisturbanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DisturbanceMode::Random => "random",
            DisturbanceMode::Adversarial => "adversarial",
        })
    }
}

/// `s + δ` with `δ` uniform on the ℓ∞ ball, coordinates independent.
pub fn disturb_random(s: &[f64], ball: &PerturbationBall, rng: &mut Rng) -> Vec<f64> {
    let e = ball.epsilon();
    if e == 0.0 {
        return s.to_vec();
    }
    s.iter().map(|x| x + rng.random_range(-e..=e)).collect()
}

/// Worst-case observation for `policy`: Jeffrey's divergence for Gaussian
/// policies, squared action gap for deterministic ones. All policy parameters
/// (including the log-stds) stay frozen.
pub fn disturb_adversarial(
    s: &[f64],
    policy: &AnyPolicy,
    ball: &PerturbationBall,
    cfg: &AdversaryConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>, EnvError> {
    if ball.epsilon() == 0.0 {
        return Ok(s.to_vec());
    }
    let (perturbed, _) = match policy {
        AnyPolicy::Gaussian(p) => inner_max_policy(p, s, ball, cfg, rng)?,
        AnyPolicy::Deterministic(p) => inner_max_deterministic(p, s, ball, cfg, rng)?,
    };
    Ok(perturbed)
}

enum Disturbance<'p> {
    Random,
    Adversarial { policy: &'p AnyPolicy, cfg: AdversaryConfig },
}

/// Perturbs the observations emitted by `inner`; the dynamics keep evolving on
/// the true state.
pub struct DisturbedEnv<'p, E> {
    inner: E,
    ball: PerturbationBall,
    disturbance: Disturbance<'p>,
    rng: Rng,
}

impl<'p, E: Environment> DisturbedEnv<'p, E> {
    pub fn random(inner: E, ball: PerturbationBall, rng: Rng) -> Self {
        Self {
            inner,
            ball,
            disturbance: Disturbance::Random,
            rng,
        }
    }

    pub fn adversarial(inner: E, ball: PerturbationBall, policy: &'p AnyPolicy, cfg: AdversaryConfig, rng: Rng) -> Self {
        Self {
            inner,
            ball,
            disturbance: Disturbance::Adversarial { policy, cfg },
            rng,
        }
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn into_inner(self) -> E {
        self.inner
    }

    fn disturb(&mut self, s: Vec<f64>) -> Result<Vec<f64>, EnvError> {
        match &self.disturbance {
            Disturbance::Random => Ok(disturb_random(&s, &self.ball, &mut self.rng)),
            Disturbance::Adversarial { policy, cfg } => disturb_adversarial(&s, policy, &self.ball, cfg, &mut self.rng),
        }
    }

    pub fn try_reset(&mut self, rng: &mut Rng) -> Result<Vec<f64>, EnvError> {
        let s = self.inner.reset(rng);
        self.disturb(s)
    }
}

impl<E: Environment> Environment for DisturbedEnv<'_, E> {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }

    fn action_bounds(&self) -> &ActionBounds {
        self.inner.action_bounds()
    }

    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    /// Panics only if the adversary fails on the first observation, which
    /// requires a policy/environment dimension mismatch; use
    /// [`DisturbedEnv::try_reset`] to get the error instead.
    fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        self.try_reset(rng).expect("disturbance of the initial observation failed")
    }

    fn step(&mut self, action: &[f64]) -> Result<Step, EnvError> {
        let step = self.inner.step(action)?;
        let observation = self.disturb(step.observation)?;
        Ok(Step { observation, ..step })
    }

    /// The undisturbed internal state.
    fn observe(&self) -> Vec<f64> {
        self.inner.observe()
    }
}

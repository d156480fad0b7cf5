//! Smooth continuous-state environments and observation disturbances.

mod disturbance;
mod pendulum;
mod pointmass;

pub use disturbance::{disturb_adversarial, disturb_random, DisturbanceMode, DisturbedEnv};
pub use pendulum::{pendulum_step, wrap_angle, Pendulum, PendulumParams};
pub use pointmass::{pointmass_step, PointMass, PointMassParams};

use std::fmt;
use std::str::FromStr;

use crate::rng::Rng;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("action has dimension {got}, environment expects {expected}")]
    ActionDim { expected: usize, got: usize },
    #[error("non-finite action {0:?}")]
    NonFiniteAction(Vec<f64>),
    #[error("unknown environment `{0}` (expected pointmass or pendulum)")]
    UnknownEnv(String),
    #[error(transparent)]
    Policy(#[from] crate::policy::PolicyError),
    #[error(transparent)]
    Adversary(#[from] crate::smoothreg::SmoothRegError),
}

/// Per-dimension closed action box.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionBounds {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl ActionBounds {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Self {
        assert_eq!(low.len(), high.len(), "bound vectors must match");
        assert!(low.iter().zip(&high).all(|(l, h)| l <= h), "low must not exceed high");
        Self { low, high }
    }

    pub fn symmetric(dim: usize, limit: f64) -> Self {
        Self::new(vec![-limit; dim], vec![limit; dim])
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn clamp(&self, a: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(self.low.iter().zip(&self.high))
            .map(|(x, (l, h))| x.clamp(*l, *h))
            .collect()
    }

    pub fn contains(&self, a: &[f64]) -> bool {
        a.len() == self.dim() && a.iter().zip(self.low.iter().zip(&self.high)).all(|(x, (l, h))| *l <= *x && *x <= *h)
    }

    /// `(high - low) / 2` per dimension.
    pub fn half_range(&self) -> Vec<f64> {
        self.low.iter().zip(&self.high).map(|(l, h)| 0.5 * (h - l)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// True termination; horizon truncation is left to the caller.
    pub done: bool,
}

pub trait Environment {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn action_bounds(&self) -> &ActionBounds;
    fn horizon(&self) -> usize;
    /// Starts an episode and returns the first observation.
    fn reset(&mut self, rng: &mut Rng) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Result<Step, EnvError>;
    /// Observation of the true internal state.
    fn observe(&self) -> Vec<f64>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvKind {
    PointMass,
    Pendulum,
}

impl EnvKind {
    pub fn state_dim(self) -> usize {
        match self {
            EnvKind::PointMass => 4,
            EnvKind::Pendulum => 3,
        }
    }

    /// The environment whose observations have dimension `dim`.
    pub fn from_state_dim(dim: usize) -> Option<Self> {
        [EnvKind::PointMass, EnvKind::Pendulum]
            .into_iter()
            .find(|k| k.state_dim() == dim)
    }
}

impl FromStr for EnvKind {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "pointmass" => Ok(EnvKind::PointMass),
            "pendulum" => Ok(EnvKind::Pendulum),
            other => Err(EnvError::UnknownEnv(other.to_string())),
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::PointMass => "pointmass",
            EnvKind::Pendulum => "pendulum",
        })
    }
}

/// Environment selection plus its (overridable) constants.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub pointmass: PointMassParams,
    pub pendulum: PendulumParams,
}

impl EnvConfig {
    pub fn new(kind: EnvKind) -> Self {
        Self {
            kind,
            pointmass: PointMassParams::default(),
            pendulum: PendulumParams::default(),
        }
    }

    pub fn build(&self) -> Box<dyn Environment + Send> {
        match self.kind {
            EnvKind::PointMass => Box::new(PointMass::new(self.pointmass.clone())),
            EnvKind::Pendulum => Box::new(Pendulum::new(self.pendulum.clone())),
        }
    }
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn action_dim(&self) -> usize {
        (**self).action_dim()
    }
    fn action_bounds(&self) -> &ActionBounds {
        (**self).action_bounds()
    }
    fn horizon(&self) -> usize {
        (**self).horizon()
    }
    fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        (**self).reset(rng)
    }
    fn step(&mut self, action: &[f64]) -> Result<Step, EnvError> {
        (**self).step(action)
    }
    fn observe(&self) -> Vec<f64> {
        (**self).observe()
    }
}

/// Undiscounted return of one episode, truncated at the horizon.
pub fn episode_return<E, F>(env: &mut E, mut act: F, rng: &mut Rng) -> Result<f64, EnvError>
where
    E: Environment + ?Sized,
    F: FnMut(&[f64]) -> Result<Vec<f64>, EnvError>,
{
    let mut obs = env.reset(rng);
    let mut total = 0.0;
    for _ in 0..env.horizon() {
        let a = act(&obs)?;
        let step = env.step(&a)?;
        total += step.reward;
        if step.done {
            break;
        }
        obs = step.observation;
    }
    Ok(total)
}

/// Mean and sample standard deviation of `episodes` episode returns.
pub fn evaluate<E, F>(env: &mut E, mut act: F, episodes: usize, rng: &mut Rng) -> Result<(f64, f64), EnvError>
where
    E: Environment + ?Sized,
    F: FnMut(&[f64]) -> Result<Vec<f64>, EnvError>,
{
    let returns = (0..episodes)
        .map(|_| episode_return(env, &mut act, rng))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(mean_std(&returns))
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Clamps `action` into `bounds`, warning once per environment instance.
pub(crate) fn checked_action(
    action: &[f64],
    bounds: &ActionBounds,
    warned: &mut bool,
    name: &str,
) -> Result<Vec<f64>, EnvError> {
    if action.len() != bounds.dim() {
        return Err(EnvError::ActionDim {
            expected: bounds.dim(),
            got: action.len(),
        });
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(EnvError::NonFiniteAction(action.to_vec()));
    }
    if !bounds.contains(action) && !*warned {
        log::info!("{name}: action {action:?} outside bounds, clamping (further clamps not logged)");
        *warned = true;
    }
    Ok(bounds.clamp(action))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_kind_parsing() {
        assert_eq!("pendulum".parse::<EnvKind>().unwrap(), EnvKind::Pendulum);
        assert!("cartpole".parse::<EnvKind>().is_err());
        assert_eq!(EnvKind::from_state_dim(4), Some(EnvKind::PointMass));
        assert_eq!(EnvKind::from_state_dim(3), Some(EnvKind::Pendulum));
    }

    #[test]
    fn sample_statistics() {
        assert_eq!(mean_std(&[]), (0.0, 0.0));
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn point_mass_idle_return() {
        let mut env = PointMass::new(PointMassParams::default());
        let r = episode_return(&mut env, |_| Ok(vec![0.0, 0.0]), &mut crate::rng::seeded(0)).unwrap();
        assert_eq!(r, -200.0);
    }

    #[test]
    fn bounds_clamp() {
        let b = ActionBounds::symmetric(2, 1.0);
        assert_eq!(b.clamp(&[3.0, -0.5]), vec![1.0, -0.5]);
        assert!(b.contains(&[1.0, -1.0]));
        assert!(!b.contains(&[1.1, 0.0]));
        assert_eq!(b.half_range(), vec![1.0, 1.0]);
    }
}

use ndarray::Array2;

use super::TrpoError;
use crate::envs::Environment;
use crate::policy::{GaussianPolicy, ValueBaseline};
use crate::rng::Rng;

/// One on-policy episode; all fields share the same length.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    /// Behavior log-densities recorded at sampling time.
    pub log_probs: Vec<f64>,
    pub times: Vec<usize>,
}

impl Trajectory {
    fn new() -> Self {
        Self {
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            log_probs: Vec::new(),
            times: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Runs complete episodes (each truncated at the horizon) until at least
/// `steps` transitions have been recorded.
///
/// Resets draw from `env_rng`, actions from `action_rng`.
pub fn collect<E: Environment + ?Sized>(
    env: &mut E,
    policy: &GaussianPolicy,
    steps: usize,
    env_rng: &mut Rng,
    action_rng: &mut Rng,
) -> Result<Vec<Trajectory>, TrpoError> {
    if steps == 0 {
        return Err(TrpoError::InvalidConfig("batch steps must be positive".into()));
    }
    let mut out = Vec::new();
    let mut total = 0;
    while total < steps {
        let mut traj = Trajectory::new();
        let mut obs = env.reset(env_rng);
        for t in 0..env.horizon() {
            let a = policy.sample(&obs, action_rng)?;
            let lp = policy.log_prob(&obs, &a)?;
            let step = env.step(&a)?;
            traj.states.push(obs);
            traj.actions.push(a);
            traj.rewards.push(step.reward);
            traj.log_probs.push(lp);
            traj.times.push(t);
            if step.done {
                break;
            }
            obs = step.observation;
        }
        total += traj.len();
        out.push(traj);
    }
    Ok(out)
}

/// `Rₜ = rₜ + γ Rₜ₊₁` from the end of the episode.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *o = acc;
    }
    out
}

/// Returns minus the baseline prediction, per step, trajectories concatenated.
/// The baseline is evaluated with its current coefficients and then refit on
/// these returns.
pub fn raw_advantages(
    trajectories: &[Trajectory],
    baseline: &mut ValueBaseline,
    gamma: f64,
) -> Result<Vec<f64>, TrpoError> {
    let mut returns = Vec::new();
    let mut adv = Vec::new();
    for traj in trajectories {
        let r = discounted_returns(&traj.rewards, gamma);
        for ((s, t), ret) in traj.states.iter().zip(&traj.times).zip(&r) {
            adv.push(ret - baseline.predict(s, *t));
        }
        returns.extend(r);
    }
    let states: Vec<&[f64]> = trajectories.iter().flat_map(|t| t.states.iter().map(Vec::as_slice)).collect();
    let times: Vec<usize> = trajectories.iter().flat_map(|t| t.times.iter().copied()).collect();
    baseline.fit(&states, &times, &returns)?;
    Ok(adv)
}

/// Shifts and scales to mean 0 and (population) std 1; left untouched when the
/// std is below `1e-8`. Returns whether scaling was applied.
pub fn standardize(x: &mut [f64]) -> bool {
    if x.is_empty() {
        return false;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std < 1e-8 {
        return false;
    }
    x.iter_mut().for_each(|v| *v = (*v - mean) / std);
    true
}

/// Standardized advantages for a batch.
pub fn advantages(trajectories: &[Trajectory], baseline: &mut ValueBaseline, gamma: f64) -> Result<Vec<f64>, TrpoError> {
    let mut adv = raw_advantages(trajectories, baseline, gamma)?;
    standardize(&mut adv);
    Ok(adv)
}

/// Flattened training batch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    /// `γᵗ` for the regularizer weights.
    pub discounts: Vec<f64>,
}

impl Batch {
    pub fn new(trajectories: &[Trajectory], advantages: Vec<f64>, gamma: f64) -> Result<Self, TrpoError> {
        let n: usize = trajectories.iter().map(Trajectory::len).sum();
        if n == 0 {
            return Err(TrpoError::EmptyBatch);
        }
        if advantages.len() != n {
            return Err(TrpoError::InvalidConfig(format!("{} advantages for {n} steps", advantages.len())));
        }
        let sd = trajectories[0].states[0].len();
        let ad = trajectories[0].actions[0].len();
        let flat = |f: &dyn Fn(&Trajectory) -> &Vec<Vec<f64>>, d: usize| {
            let data: Vec<f64> = trajectories.iter().flat_map(|t| f(t).iter().flatten().copied()).collect();
            Array2::from_shape_vec((n, d), data).expect("consistent dimensions")
        };
        Ok(Self {
            states: flat(&|t| &t.states, sd),
            actions: flat(&|t| &t.actions, ad),
            log_probs: trajectories.iter().flat_map(|t| t.log_probs.iter().copied()).collect(),
            advantages,
            discounts: trajectories
                .iter()
                .flat_map(|t| t.times.iter().map(|k| gamma.powi(*k as i32)))
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

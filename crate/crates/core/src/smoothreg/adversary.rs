//! Projected-gradient search for the worst-case perturbation of each state.

use ndarray::{Array2, Axis};
use rand::Rng as _;

use super::{PerturbationBall, SmoothRegError};
use crate::autodiff::Tape;
use crate::policy::{jeffrey_on, DeterministicPolicy, GaussianPolicy, QNet};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdversaryInit {
    Zero,
    /// Uniform in the ℓ∞ ball, coordinatewise independent.
    Uniform,
}

/// How one ascent step turns a gradient into a displacement.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AscentRule {
    /// `δ += η·sign(∇)`: steepest ascent for the ℓ∞ geometry.
    Sign,
    /// `δ += η·∇`.
    Gradient,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdversaryConfig {
    pub steps: usize,
    /// Step size as a fraction of the ball radius.
    pub step_ratio: f64,
    /// Initialization of the first start; further restarts are uniform.
    pub init: AdversaryInit,
    pub rule: AscentRule,
    /// Number of starts; the best final point per state is kept.
    pub restarts: usize,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        Self {
            steps: 10,
            step_ratio: 0.2,
            init: AdversaryInit::Uniform,
            rule: AscentRule::Sign,
            restarts: 1,
        }
    }
}

impl AdversaryConfig {
    pub fn validate(&self) -> Result<(), SmoothRegError> {
        if self.steps == 0 {
            return Err(SmoothRegError::InvalidConfig("adversary steps must be positive".into()));
        }
        if !(self.step_ratio > 0.0) || !self.step_ratio.is_finite() {
            return Err(SmoothRegError::InvalidConfig(format!(
                "adversary step ratio must be positive, got {}",
                self.step_ratio
            )));
        }
        if self.restarts == 0 {
            return Err(SmoothRegError::InvalidConfig("adversary restarts must be positive".into()));
        }
        Ok(())
    }

    pub fn step_size(&self, ball: &PerturbationBall) -> f64 {
        self.step_ratio * ball.epsilon()
    }
}

/// Outcome of a batched search: one perturbed state per input row and the
/// objective value reached there.
#[derive(Clone, Debug)]
pub struct Perturbed {
    pub states: Array2<f64>,
    pub values: Vec<f64>,
}

impl Perturbed {
    pub fn mean_value(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values.iter().sum::<f64>() / self.values.len() as f64
        }
    }
}

/// A per-state objective to be maximized over perturbed states.
pub trait PerturbationObjective {
    /// Per-row objective at the perturbed rows.
    fn values(&self, perturbed: &Array2<f64>) -> Result<Vec<f64>, SmoothRegError>;
    /// Per-row objective and its gradient with respect to each perturbed row.
    fn values_and_grad(&self, perturbed: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>), SmoothRegError>;
}

/// `D_J(π(·|s) ‖ π(·|s̃))` with all policy parameters frozen.
pub struct JeffreyObjective<'a> {
    policy: &'a GaussianPolicy,
    reference_mean: Array2<f64>,
}

impl<'a> JeffreyObjective<'a> {
    pub fn new(policy: &'a GaussianPolicy, states: &Array2<f64>) -> Result<Self, SmoothRegError> {
        Ok(Self {
            policy,
            reference_mean: policy.mean.forward_batch(states).map_err(crate::policy::PolicyError::from)?,
        })
    }

    fn record(&self, perturbed: &Array2<f64>, tape: &mut Tape) -> Result<(crate::autodiff::Var, crate::autodiff::Var), SmoothRegError> {
        let x = tape.leaf(perturbed.clone());
        let vars = self.policy.mean.register_frozen(tape);
        let mu_tilde = self.policy.mean.forward_on(tape, &vars, x)?;
        let mu = tape.constant(self.reference_mean.clone());
        let ls = tape.constant(log_std_row(self.policy));
        let div = jeffrey_on(tape, mu, ls, mu_tilde, ls)?;
        Ok((x, div))
    }
}

impl PerturbationObjective for JeffreyObjective<'_> {
    fn values(&self, perturbed: &Array2<f64>) -> Result<Vec<f64>, SmoothRegError> {
        let mu_tilde = self.policy.mean.forward_batch(perturbed).map_err(crate::policy::PolicyError::from)?;
        let inv_var: Vec<f64> = self.policy.log_std.iter().map(|l| (-2.0 * l).exp()).collect();
        Ok(row_weighted_sq_diff(&self.reference_mean, &mu_tilde, &inv_var, 0.5))
    }

    fn values_and_grad(&self, perturbed: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>), SmoothRegError> {
        let mut tape = Tape::new();
        let (x, div) = self.record(perturbed, &mut tape)?;
        let values = tape.value(div).column(0).to_vec();
        let total = tape.sum(div);
        let grads = tape.backward(total)?;
        Ok((values, grads.wrt(x)))
    }
}

/// `‖μ(s) − μ(s̃)‖²` on the unclamped actor output.
pub struct SquaredActionObjective<'a> {
    policy: &'a DeterministicPolicy,
    reference: Array2<f64>,
}

impl<'a> SquaredActionObjective<'a> {
    pub fn new(policy: &'a DeterministicPolicy, states: &Array2<f64>) -> Result<Self, SmoothRegError> {
        Ok(Self {
            policy,
            reference: policy.raw_batch(states)?,
        })
    }
}

impl PerturbationObjective for SquaredActionObjective<'_> {
    fn values(&self, perturbed: &Array2<f64>) -> Result<Vec<f64>, SmoothRegError> {
        let out = self.policy.raw_batch(perturbed)?;
        let ones = vec![1.0; out.ncols()];
        Ok(row_weighted_sq_diff(&self.reference, &out, &ones, 1.0))
    }

    fn values_and_grad(&self, perturbed: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>), SmoothRegError> {
        let mut tape = Tape::new();
        let x = tape.leaf(perturbed.clone());
        let vars = self.policy.net.register_frozen(&mut tape);
        let out = self.policy.forward_on(&mut tape, &vars, x)?;
        let reference = tape.constant(self.reference.clone());
        let diff = tape.sub(reference, out)?;
        let sq = tape.square(diff);
        let per_row = tape.sum_cols(sq);
        let values = tape.value(per_row).column(0).to_vec();
        let total = tape.sum(per_row);
        let grads = tape.backward(total)?;
        Ok((values, grads.wrt(x)))
    }
}

/// `(Q(s, a) − Q(s̃, a))²` with the action held fixed.
pub struct QDifferenceObjective<'a> {
    critic: &'a QNet,
    actions: Array2<f64>,
    reference: Vec<f64>,
}

impl<'a> QDifferenceObjective<'a> {
    pub fn new(critic: &'a QNet, states: &Array2<f64>, actions: &Array2<f64>) -> Result<Self, SmoothRegError> {
        Ok(Self {
            critic,
            actions: actions.clone(),
            reference: critic.value_batch(states, actions)?,
        })
    }
}

impl PerturbationObjective for QDifferenceObjective<'_> {
    fn values(&self, perturbed: &Array2<f64>) -> Result<Vec<f64>, SmoothRegError> {
        let q = self.critic.value_batch(perturbed, &self.actions)?;
        Ok(q.iter().zip(&self.reference).map(|(a, b)| (b - a).powi(2)).collect())
    }

    fn values_and_grad(&self, perturbed: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>), SmoothRegError> {
        let mut tape = Tape::new();
        let x = tape.leaf(perturbed.clone());
        let a = tape.constant(self.actions.clone());
        let vars = self.critic.net.register_frozen(&mut tape);
        let q = self.critic.forward_on(&mut tape, &vars, x, a)?;
        let reference = tape.constant(Array2::from_shape_vec((self.reference.len(), 1), self.reference.clone()).expect("one value per row"));
        let diff = tape.sub(reference, q)?;
        let sq = tape.square(diff);
        let values = tape.value(sq).column(0).to_vec();
        let total = tape.sum(sq);
        let grads = tape.backward(total)?;
        Ok((values, grads.wrt(x)))
    }
}

pub(crate) fn log_std_row(p: &GaussianPolicy) -> Array2<f64> {
    Array2::from_shape_vec((1, p.log_std.len()), p.log_std.clone()).expect("row shape")
}

fn row_weighted_sq_diff(a: &Array2<f64>, b: &Array2<f64>, w: &[f64], scale: f64) -> Vec<f64> {
    a.rows()
        .into_iter()
        .zip(b.rows())
        .map(|(x, y)| {
            scale
                * x.iter()
                    .zip(y.iter())
                    .zip(w)
                    .map(|((p, q), w)| w * (p - q).powi(2))
                    .sum::<f64>()
        })
        .collect()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Projected gradient ascent on `objective` around every row of `states`.
///
/// Each start runs `cfg.steps` ascent steps of size `cfg.step_ratio·ε`, each
/// followed by projection onto the ball. With several starts the final point
/// with the largest objective is kept per row. The objective never mutates the
/// networks it reads.
pub fn projected_ascent<O: PerturbationObjective + ?Sized>(
    objective: &O,
    states: &Array2<f64>,
    ball: &PerturbationBall,
    cfg: &AdversaryConfig,
    rng: &mut Rng,
) -> Result<Perturbed, SmoothRegError> {
    cfg.validate()?;
    if states.nrows() == 0 {
        return Err(SmoothRegError::EmptyBatch);
    }
    let eps = ball.epsilon();
    if eps == 0.0 {
        let values = objective.values(states)?;
        return Ok(Perturbed {
            states: states.clone(),
            values,
        });
    }
    let eta = cfg.step_size(ball);
    let mut best: Option<Perturbed> = None;
    for start in 0..cfg.restarts {
        let init = if start == 0 { cfg.init } else { AdversaryInit::Uniform };
        let mut delta = match init {
            AdversaryInit::Zero => Array2::zeros(states.dim()),
            AdversaryInit::Uniform => Array2::from_shape_fn(states.dim(), |_| rng.random_range(-eps..=eps)),
        };
        for _ in 0..cfg.steps {
            let (_, grad) = objective.values_and_grad(&(states + &delta))?;
            match cfg.rule {
                AscentRule::Sign => delta.zip_mut_with(&grad, |d, g| *d += eta * sign(*g)),
                AscentRule::Gradient => delta.zip_mut_with(&grad, |d, g| *d += eta * g),
            }
            ball.project_in_place(&mut delta);
        }
        let candidate = states + &delta;
        let values = objective.values(&candidate)?;
        best = Some(match best {
            None => Perturbed {
                states: candidate,
                values,
            },
            Some(mut b) => {
                for (i, v) in values.iter().enumerate() {
                    if *v > b.values[i] {
                        b.values[i] = *v;
                        b.states.row_mut(i).assign(&candidate.row(i));
                    }
                }
                b
            }
        });
    }
    Ok(best.expect("at least one start"))
}

fn single_row(s: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, s.len()), s.to_vec()).expect("row shape")
}

fn first_row(p: Perturbed) -> (Vec<f64>, f64) {
    (p.states.index_axis(Axis(0), 0).to_vec(), p.values[0])
}

/// Worst-case state for a Gaussian policy under Jeffrey's divergence; returns
/// the perturbed state and the divergence reached.
pub fn inner_max_policy(
    policy: &GaussianPolicy,
    s: &[f64],
    ball: &PerturbationBall,
    cfg: &AdversaryConfig,
    rng: &mut Rng,
) -> Result<(Vec<f64>, f64), SmoothRegError> {
    let states = single_row(s);
    let obj = JeffreyObjective::new(policy, &states)?;
    Ok(first_row(projected_ascent(&obj, &states, ball, cfg, rng)?))
}

/// Worst-case state for a deterministic actor under the squared ℓ₂ action gap.
pub fn inner_max_deterministic(
    policy: &DeterministicPolicy,
    s: &[f64],
    ball: &PerturbationBall,
    cfg: &AdversaryConfig,
    rng: &mut Rng,
) -> Result<(Vec<f64>, f64), SmoothRegError> {
    let states = single_row(s);
    let obj = SquaredActionObjective::new(policy, &states)?;
    Ok(first_row(projected_ascent(&obj, &states, ball, cfg, rng)?))
}

/// Worst-case state for a critic under the squared value gap at fixed action.
pub fn inner_max_q(
    critic: &QNet,
    s: &[f64],
    a: &[f64],
    ball: &PerturbationBall,
    cfg: &AdversaryConfig,
    rng: &mut Rng,
) -> Result<(Vec<f64>, f64), SmoothRegError> {
    let states = single_row(s);
    let actions = single_row(a);
    let obj = QDifferenceObjective::new(critic, &states, &actions)?;
    Ok(first_row(projected_ascent(&obj, &states, ball, cfg, rng)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Layer, Mlp};
    use crate::envs::ActionBounds;
    use crate::rng::{seeded, Rng};
    use ndarray::{Array1, Array2};
    use proptest::prelude::*;

    fn linear_net(w: Array2<f64>) -> Mlp {
        let out = w.nrows();
        Mlp::from_layers(vec![Layer {
            weight: w,
            bias: Array1::zeros(out),
        }])
        .unwrap()
    }

    fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    /// `max ‖W δ‖²` over the 2^d sign vertices of the ε box.
    fn vertex_max(w: &Array2<f64>, eps: f64) -> f64 {
        let d = w.ncols();
        (0..1usize << d)
            .map(|mask| {
                let delta = Array1::from_shape_fn(d, |i| if mask >> i & 1 == 1 { eps } else { -eps });
                w.dot(&delta).iter().map(|x| x * x).sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    fn three_restarts() -> AdversaryConfig {
        AdversaryConfig {
            restarts: 3,
            ..AdversaryConfig::default()
        }
    }

    #[test]
    fn zero_radius_returns_state() {
        let mut rng = seeded(0);
        let p = GaussianPolicy::init(&[3, 5, 2], 0.5, &mut rng).unwrap();
        let ball = PerturbationBall::new(0.0).unwrap();
        let s = [0.1, 0.2, -0.3];
        let (st, v) = inner_max_policy(&p, &s, &ball, &AdversaryConfig::default(), &mut rng).unwrap();
        assert_eq!(st, s.to_vec());
        assert_eq!(v, 0.0);
    }

    #[test]
    fn input_gradient_vanishes_at_unperturbed_state() {
        let mut rng = seeded(1);
        let p = GaussianPolicy::init(&[4, 8, 2], 0.7, &mut rng).unwrap();
        let d = DeterministicPolicy::init(&[4, 8, 2], ActionBounds::symmetric(2, 1.0), &mut rng).unwrap();
        let states = random_matrix(5, 4, &mut rng);
        let (v, g) = JeffreyObjective::new(&p, &states).unwrap().values_and_grad(&states).unwrap();
        assert!(v.iter().all(|x| *x == 0.0));
        assert!(g.iter().all(|x| *x == 0.0));
        let (v, g) = SquaredActionObjective::new(&d, &states).unwrap().values_and_grad(&states).unwrap();
        assert!(v.iter().all(|x| *x == 0.0));
        assert!(g.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = seeded(2);
        let p = GaussianPolicy::init(&[3, 6, 2], 0.4, &mut rng).unwrap();
        let s = random_matrix(1, 3, &mut rng);
        let obj = JeffreyObjective::new(&p, &s).unwrap();
        let x: Vec<f64> = s.iter().map(|v| v + rng.random_range(-0.2..0.2)).collect();
        let row = |x: &[f64]| Array2::from_shape_vec((1, x.len()), x.to_vec()).unwrap();
        let (_, g) = obj.values_and_grad(&row(&x)).unwrap();
        let err = crate::autodiff::finite_diff_check(|x| obj.values(&row(x)).unwrap()[0], &x, g.as_slice().unwrap(), 1e-5);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn gaussian_linear_policy_reaches_vertex_optimum() {
        let mut rng = seeded(3);
        let eps = 0.1;
        let ball = PerturbationBall::new(eps).unwrap();
        let mut hits = 0;
        for _ in 0..1000 {
            let w = random_matrix(2, 4, &mut rng);
            let sigma: f64 = 0.5;
            let p = GaussianPolicy::new(linear_net(w.clone()), vec![sigma.ln(); 2]).unwrap();
            let s: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (st, v) = inner_max_policy(&p, &s, &ball, &three_restarts(), &mut rng).unwrap();
            assert!(st.iter().zip(&s).all(|(a, b)| (a - b).abs() <= eps * (1.0 + 1e-12)));
            let optimum = vertex_max(&w, eps) / (2.0 * sigma * sigma);
            if v >= 0.9 * optimum {
                hits += 1;
            }
        }
        assert!(hits >= 950, "{hits} of 1000");
    }

    #[test]
    fn deterministic_linear_policy_reaches_vertex_optimum() {
        let mut rng = seeded(4);
        let eps = 0.05;
        let ball = PerturbationBall::new(eps).unwrap();
        let mut hits = 0;
        for _ in 0..1000 {
            let w = random_matrix(2, 4, &mut rng);
            let p = DeterministicPolicy::new(linear_net(w.clone()), ActionBounds::symmetric(2, 1.0)).unwrap();
            let s: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, v) = inner_max_deterministic(&p, &s, &ball, &three_restarts(), &mut rng).unwrap();
            if v >= 0.9 * vertex_max(&w, eps) {
                hits += 1;
            }
        }
        assert!(hits >= 950, "{hits} of 1000");
    }

    #[test]
    fn linear_objective_symmetric_under_reflection() {
        let mut rng = seeded(5);
        let w = random_matrix(2, 4, &mut rng);
        let p = DeterministicPolicy::new(linear_net(w), ActionBounds::symmetric(2, 1.0)).unwrap();
        let s = random_matrix(1, 4, &mut rng);
        let obj = SquaredActionObjective::new(&p, &s).unwrap();
        for _ in 0..20 {
            let delta = random_matrix(1, 4, &mut rng) * 0.1;
            let plus = obj.values(&(&s + &delta)).unwrap()[0];
            let minus = obj.values(&(&s - &delta)).unwrap()[0];
            assert!((plus - minus).abs() <= 1e-14 * plus.max(1.0));
        }
    }

    #[test]
    fn linear_critic_reaches_box_optimum() {
        let mut rng = seeded(6);
        let eps = 0.1;
        let ball = PerturbationBall::new(eps).unwrap();
        for _ in 0..50 {
            let w = random_matrix(1, 5, &mut rng);
            let g: f64 = w.iter().take(3).map(|x| x.abs()).sum();
            let q = QNet::new(linear_net(w), 3).unwrap();
            let s: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let (_, v) = inner_max_q(&q, &s, &a, &ball, &AdversaryConfig::default(), &mut rng).unwrap();
            let optimum = (eps * g).powi(2);
            assert!(v >= 0.9 * optimum && v <= optimum * (1.0 + 1e-12), "{v} vs {optimum}");
        }
    }

    #[test]
    fn more_restarts_never_lower_the_value() {
        let mut init = seeded(7);
        let p = GaussianPolicy::init(&[3, 16, 2], 0.3, &mut init).unwrap();
        let states = random_matrix(20, 3, &mut init);
        let obj = JeffreyObjective::new(&p, &states).unwrap();
        let ball = PerturbationBall::new(0.2).unwrap();
        let mut previous: Option<Vec<f64>> = None;
        for k in 1..5 {
            let cfg = AdversaryConfig {
                restarts: k,
                init: AdversaryInit::Zero,
                rule: AscentRule::Gradient,
                ..AdversaryConfig::default()
            };
            let found = projected_ascent(&obj, &states, &ball, &cfg, &mut seeded(8)).unwrap();
            if let Some(prev) = &previous {
                assert!(found.values.iter().zip(prev).all(|(a, b)| a >= b));
            }
            previous = Some(found.values);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let ball = PerturbationBall::new(0.1).unwrap();
        let p = DeterministicPolicy::init(&[2, 2], ActionBounds::symmetric(2, 1.0), &mut seeded(9)).unwrap();
        for cfg in [
            AdversaryConfig { steps: 0, ..Default::default() },
            AdversaryConfig { restarts: 0, ..Default::default() },
            AdversaryConfig { step_ratio: -1.0, ..Default::default() },
        ] {
            assert!(inner_max_deterministic(&p, &[0.0, 0.0], &ball, &cfg, &mut seeded(0)).is_err());
        }
        let empty = Array2::zeros((0, 2));
        let obj = SquaredActionObjective::new(&p, &empty).unwrap();
        assert!(matches!(
            projected_ascent(&obj, &empty, &ball, &AdversaryConfig::default(), &mut seeded(0)),
            Err(SmoothRegError::EmptyBatch)
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn perturbed_states_stay_in_ball(seed in 0u64..1000, eps in 0.0f64..0.3) {
            let mut rng = seeded(seed);
            let p = GaussianPolicy::init(&[3, 8, 1], 0.5, &mut rng).unwrap();
            let states = random_matrix(6, 3, &mut rng);
            let obj = JeffreyObjective::new(&p, &states).unwrap();
            let ball = PerturbationBall::new(eps).unwrap();
            let found = projected_ascent(&obj, &states, &ball, &AdversaryConfig::default(), &mut rng).unwrap();
            for (a, b) in found.states.iter().zip(states.iter()) {
                prop_assert!((a - b).abs() <= eps * (1.0 + 1e-12) + 1e-15);
            }
            prop_assert!(found.values.iter().all(|v| *v >= 0.0));
        }
    }
}

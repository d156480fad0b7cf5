//! Batch regularizer values and parameter gradients.
//!
//! The perturbed states returned by the search are treated as constants when
//! differentiating with respect to the parameters.

use ndarray::Array2;

use super::adversary::{log_std_row, projected_ascent, JeffreyObjective, QDifferenceObjective, SquaredActionObjective};
use super::{AdversaryConfig, PerturbationBall, SmoothRegError};
use crate::autodiff::Tape;
use crate::policy::{jeffrey_on, DeterministicPolicy, GaussianPolicy, QNet};
use crate::rng::Rng;

#[derive(Clone, Debug)]
pub struct Regularization {
    /// Weighted mean of the per-state discrepancy at the perturbed states.
    pub value: f64,
    /// Gradient of `value` with respect to the parameters.
    pub grad: Vec<f64>,
    pub perturbed: Array2<f64>,
    /// Unweighted mean discrepancy reached by the search.
    pub mean_divergence: f64,
}

fn check_pair(states: &Array2<f64>, perturbed: &Array2<f64>) -> Result<(), SmoothRegError> {
    if states.nrows() == 0 {
        return Err(SmoothRegError::EmptyBatch);
    }
    if states.dim() != perturbed.dim() {
        return Err(SmoothRegError::Shape {
            what: "perturbed batch rows",
            expected: states.nrows(),
            got: perturbed.nrows(),
        });
    }
    Ok(())
}

/// Weights normalized to sum to one, as an `n x 1` column.
fn weight_column(weights: Option<&[f64]>, n: usize) -> Result<Array2<f64>, SmoothRegError> {
    match weights {
        None => Ok(Array2::from_elem((n, 1), 1.0 / n as f64)),
        Some(w) => {
            if w.len() != n {
                return Err(SmoothRegError::Shape {
                    what: "state weights",
                    expected: n,
                    got: w.len(),
                });
            }
            let total: f64 = w.iter().sum();
            if !(total > 0.0) || w.iter().any(|x| *x < 0.0) {
                return Err(SmoothRegError::InvalidConfig("state weights must be non-negative with positive sum".into()));
            }
            Ok(Array2::from_shape_fn((n, 1), |(i, _)| w[i] / total))
        }
    }
}

/// Jeffrey regularizer of a Gaussian policy at given perturbed states.
///
/// Returns the weighted mean of `D_J(π(·|s) ‖ π(·|s̃))` and its gradient over
/// the mean-network parameters followed by the log-stds.
pub fn reg_policy_at(
    policy: &GaussianPolicy,
    states: &Array2<f64>,
    perturbed: &Array2<f64>,
    weights: Option<&[f64]>,
) -> Result<(f64, Vec<f64>), SmoothRegError> {
    check_pair(states, perturbed)?;
    let w = weight_column(weights, states.nrows())?;
    let mut tape = Tape::new();
    let vars = policy.mean.register(&mut tape);
    let ls = tape.leaf(log_std_row(policy));
    let x = tape.constant(states.clone());
    let xt = tape.constant(perturbed.clone());
    let mu = policy.mean.forward_on(&mut tape, &vars, x)?;
    let mu_t = policy.mean.forward_on(&mut tape, &vars, xt)?;
    let div = jeffrey_on(&mut tape, mu, ls, mu_t, ls)?;
    let wv = tape.constant(w);
    let weighted = tape.mul(div, wv)?;
    let value = tape.sum(weighted);
    let grads = tape.backward(value)?;
    let mut grad = policy.mean.flat_grad(&grads, &vars);
    grad.extend(grads.wrt_flat(ls));
    Ok((tape.scalar_value(value)?, grad))
}

/// Value-only form of [`reg_policy_at`].
pub fn reg_policy_value_at(
    policy: &GaussianPolicy,
    states: &Array2<f64>,
    perturbed: &Array2<f64>,
    weights: Option<&[f64]>,
) -> Result<f64, SmoothRegError> {
    check_pair(states, perturbed)?;
    let w = weight_column(weights, states.nrows())?;
    let to_policy = |e| SmoothRegError::Policy(crate::policy::PolicyError::Autodiff(e));
    let mu = policy.mean.forward_batch(states).map_err(to_policy)?;
    let mu_t = policy.mean.forward_batch(perturbed).map_err(to_policy)?;
    let inv_var: Vec<f64> = policy.log_std.iter().map(|l| (-2.0 * l).exp()).collect();
    Ok(mu
        .rows()
        .into_iter()
        .zip(mu_t.rows())
        .zip(w.column(0))
        .map(|((a, b), wi)| {
            let d: f64 = a.iter().zip(b.iter()).zip(&inv_var).map(|((x, y), iv)| (x - y).powi(2) * iv).sum();
            wi * 0.5 * d
        })
        .sum())
}

/// Searches the worst-case perturbation of every state, then evaluates the
/// Jeffrey regularizer there. `weights` (e.g. `γᵗ`) are normalized to sum to one.
pub fn reg_policy(
    policy: &GaussianPolicy,
    states: &Array2<f64>,
    weights: Option<&[f64]>,
    ball: &PerturbationBall,
    cfg: &AdversaryConfig,
    rng: &mut Rng,
) -> Result<Regularization, SmoothRegError> {
    let obj = JeffreyObjective::new(policy, states)?;
    let found = projected_ascent(&obj, states, ball, cfg, rng)?;
    let (value, grad) = reg_policy_at(policy, states, &found.states, weights)?;
    Ok(Regularization {
        value,
        grad,
        mean_divergence: found.mean_value(),
        perturbed: found.states,
    })
}

/// Mean `‖μ(s) − μ(s̃)‖²` of a deterministic actor and its parameter gradient.
pub fn reg_deterministic_at(
    policy: &DeterministicPolicy,
    states: &Array2<f64>,
    perturbed: &Array2<f64>,
) -> Result<(f64, Vec<f64>), SmoothRegError> {
    check_pair(states, perturbed)?;
    let mut tape = Tape::new();
    let vars = policy.net.register(&mut tape);
    let x = tape.constant(states.clone());
    let xt = tape.constant(perturbed.clone());
    let out = policy.forward_on(&mut tape, &vars, x)?;
    let out_t = policy.forward_on(&mut tape, &vars, xt)?;
    let diff = tape.sub(out, out_t)?;
    let sq = tape.square(diff);
    let per_row = tape.sum_cols(sq);
    let value = tape.mean(per_row);
    let grads = tape.backward(value)?;
    Ok((tape.scalar_value(value)?, policy.net.flat_grad(&grads, &vars)))
}

pub fn reg_deterministic(
    policy: &DeterministicPolicy,
    states: &Array2<f64>,
    ball: &PerturbationBall,
    cfg: &AdversaryConfig,
    rng: &mut Rng,
) -> Result<Regularization, SmoothRegError> {
    let obj = SquaredActionObjective::new(policy, states)?;
    let found = projected_ascent(&obj, states, ball, cfg, rng)?;
    let (value, grad) = reg_deterministic_at(policy, states, &found.states)?;
    Ok(Regularization {
        value,
        grad,
        mean_divergence: found.mean_value(),
        perturbed: found.states,
    })
}

/// Mean `(Q(s, a) − Q(s̃, a))²` and its gradient over the critic parameters.
pub fn reg_q_at(
    critic: &QNet,
    states: &Array2<f64>,
    actions: &Array2<f64>,
    perturbed: &Array2<f64>,
) -> Result<(f64, Vec<f64>), SmoothRegError> {
    check_pair(states, perturbed)?;
    let mut tape = Tape::new();
    let vars = critic.net.register(&mut tape);
    let x = tape.constant(states.clone());
    let xt = tape.constant(perturbed.clone());
    let a = tape.constant(actions.clone());
    let q = critic.forward_on(&mut tape, &vars, x, a)?;
    let q_t = critic.forward_on(&mut tape, &vars, xt, a)?;
    let diff = tape.sub(q, q_t)?;
    let sq = tape.square(diff);
    let value = tape.mean(sq);
    let grads = tape.backward(value)?;
    Ok((tape.scalar_value(value)?, critic.net.flat_grad(&grads, &vars)))
}

pub fn reg_q(
    critic: &QNet,
    states: &Array2<f64>,
    actions: &Array2<f64>,
    ball: &PerturbationBall,
    cfg: &AdversaryConfig,
    rng: &mut Rng,
) -> Result<Regularization, SmoothRegError> {
    let obj = QDifferenceObjective::new(critic, states, actions)?;
    let found = projected_ascent(&obj, states, ball, cfg, rng)?;
    let (value, grad) = reg_q_at(critic, states, actions, &found.states)?;
    Ok(Regularization {
        value,
        grad,
        mean_divergence: found.mean_value(),
        perturbed: found.states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check, Layer, Mlp};
    use crate::envs::ActionBounds;
    use crate::rng::seeded;
    use ndarray::Array1;
    use rand::Rng as _;

    fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    fn jitter(states: &Array2<f64>, scale: f64, rng: &mut Rng) -> Array2<f64> {
        states.mapv(|x| x + rng.random_range(-scale..scale))
    }

    #[test]
    fn zero_at_unperturbed_states() {
        let mut rng = seeded(0);
        let p = GaussianPolicy::init(&[3, 6, 2], 0.5, &mut rng).unwrap();
        let s = random_matrix(4, 3, &mut rng);
        let (v, g) = reg_policy_at(&p, &s, &s, None).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|x| *x == 0.0));

        let d = DeterministicPolicy::init(&[3, 6, 2], ActionBounds::symmetric(2, 1.0), &mut rng).unwrap();
        let (v, g) = reg_deterministic_at(&d, &s, &s).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|x| *x == 0.0));

        let q = QNet::init(3, 2, &[6], &mut rng).unwrap();
        let a = random_matrix(4, 2, &mut rng);
        let (v, g) = reg_q_at(&q, &s, &a, &s).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn single_state_jeffrey_closed_form() {
        let mut rng = seeded(1);
        let p = GaussianPolicy::init(&[2, 5, 1], 0.3, &mut rng).unwrap();
        let s = Array2::from_shape_vec((1, 2), vec![0.4, -0.2]).unwrap();
        let st = Array2::from_shape_vec((1, 2), vec![0.45, -0.25]).unwrap();
        let mu = p.mean_action(&[0.4, -0.2]).unwrap()[0];
        let mu_t = p.mean_action(&[0.45, -0.25]).unwrap()[0];
        let expected = (mu - mu_t).powi(2) / (2.0 * 0.09);
        let (v, _) = reg_policy_at(&p, &s, &st, None).unwrap();
        assert!((v - expected).abs() < 1e-12 * expected.max(1.0));
        assert!((reg_policy_value_at(&p, &s, &st, None).unwrap() - expected).abs() < 1e-12 * expected.max(1.0));
    }

    #[test]
    fn weights_are_normalized() {
        let mut rng = seeded(2);
        let p = GaussianPolicy::init(&[2, 4, 1], 0.5, &mut rng).unwrap();
        let s = random_matrix(2, 2, &mut rng);
        let st = jitter(&s, 0.1, &mut rng);
        let one = |i: usize| {
            let a = s.slice(ndarray::s![i..i + 1, ..]).to_owned();
            let b = st.slice(ndarray::s![i..i + 1, ..]).to_owned();
            reg_policy_at(&p, &a, &b, None).unwrap().0
        };
        let (v, _) = reg_policy_at(&p, &s, &st, Some(&[1.0, 3.0])).unwrap();
        assert!((v - (0.25 * one(0) + 0.75 * one(1))).abs() < 1e-14);
        assert!(reg_policy_at(&p, &s, &st, Some(&[1.0])).is_err());
        assert!(reg_policy_at(&p, &s, &st, Some(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn policy_gradient_matches_finite_differences() {
        let mut rng = seeded(3);
        for _ in 0..10 {
            let p = GaussianPolicy::init(&[3, 5, 2], rng.random_range(0.2..1.0), &mut rng).unwrap();
            let s = random_matrix(6, 3, &mut rng);
            let st = jitter(&s, 0.2, &mut rng);
            let w: Vec<f64> = (0..6).map(|t| 0.9f64.powi(t)).collect();
            let (_, g) = reg_policy_at(&p, &s, &st, Some(&w)).unwrap();
            let theta = p.params();
            let err = finite_diff_check(
                |x| {
                    let mut q = p.clone();
                    q.set_params(x).unwrap();
                    reg_policy_value_at(&q, &s, &st, Some(&w)).unwrap()
                },
                &theta,
                &g,
                1e-4,
            );
            assert!(err < 1e-4, "relative error {err}");
        }
    }

    #[test]
    fn deterministic_gradient_matches_finite_differences() {
        let mut rng = seeded(4);
        let d = DeterministicPolicy::init(&[3, 5, 2], ActionBounds::symmetric(2, 1.0), &mut rng).unwrap();
        let s = random_matrix(5, 3, &mut rng);
        let st = jitter(&s, 0.2, &mut rng);
        let (_, g) = reg_deterministic_at(&d, &s, &st).unwrap();
        let err = finite_diff_check(
            |x| {
                let mut q = d.clone();
                q.net.set_params(x).unwrap();
                reg_deterministic_at(&q, &s, &st).unwrap().0
            },
            &d.net.params(),
            &g,
            1e-5,
        );
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let mut rng = seeded(5);
        let q = QNet::init(3, 1, &[5], &mut rng).unwrap();
        let s = random_matrix(5, 3, &mut rng);
        let a = random_matrix(5, 1, &mut rng);
        let st = jitter(&s, 0.2, &mut rng);
        let (_, g) = reg_q_at(&q, &s, &a, &st).unwrap();
        let err = finite_diff_check(
            |x| {
                let mut c = q.clone();
                c.net.set_params(x).unwrap();
                reg_q_at(&c, &s, &a, &st).unwrap().0
            },
            &q.net.params(),
            &g,
            1e-5,
        );
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn linear_deterministic_closed_form_and_scaling() {
        let mut rng = seeded(6);
        let w = random_matrix(2, 4, &mut rng);
        let make = |w: Array2<f64>| {
            let net = Mlp::from_layers(vec![Layer {
                weight: w,
                bias: Array1::zeros(2),
            }])
            .unwrap();
            DeterministicPolicy::new(net, ActionBounds::symmetric(2, 1.0)).unwrap()
        };
        let s = random_matrix(8, 4, &mut rng);
        let st = jitter(&s, 0.05, &mut rng);
        let delta = &st - &s;
        let expected = delta.dot(&w.t()).mapv(|x| x * x).sum() / 8.0;
        let p1 = make(w.clone());
        let (v1, _) = reg_deterministic_at(&p1, &s, &st).unwrap();
        assert!((v1 - expected).abs() < 1e-12 * expected.max(1e-3));

        let ball = PerturbationBall::new(0.05).unwrap();
        let cfg = AdversaryConfig::default();
        let r1 = reg_deterministic(&p1, &s, &ball, &cfg, &mut seeded(7)).unwrap();
        let r2 = reg_deterministic(&make(&w * 2.0), &s, &ball, &cfg, &mut seeded(7)).unwrap();
        assert_eq!(r2.value, 4.0 * r1.value);
    }

    #[test]
    fn linear_critic_regularizer_closed_form() {
        let mut rng = seeded(8);
        let w = random_matrix(1, 4, &mut rng);
        let g: f64 = w.iter().take(3).map(|x| x.abs()).sum();
        let net = Mlp::from_layers(vec![Layer {
            weight: w,
            bias: Array1::from_elem(1, 0.3),
        }])
        .unwrap();
        let q = QNet::new(net, 3).unwrap();
        let s = random_matrix(10, 3, &mut rng);
        let a = random_matrix(10, 1, &mut rng);
        let ball = PerturbationBall::new(0.1).unwrap();
        let r = reg_q(&q, &s, &a, &ball, &AdversaryConfig::default(), &mut rng).unwrap();
        let optimum = (0.1 * g).powi(2);
        assert!(r.value >= 0.9 * optimum && r.value <= optimum * (1.0 + 1e-12));
    }

    #[test]
    fn empty_batch_rejected() {
        let mut rng = seeded(9);
        let p = GaussianPolicy::init(&[2, 1], 0.5, &mut rng).unwrap();
        let e = Array2::zeros((0, 2));
        let ball = PerturbationBall::new(0.1).unwrap();
        assert!(reg_policy(&p, &e, None, &ball, &AdversaryConfig::default(), &mut rng).is_err());
        assert!(matches!(reg_policy_at(&p, &e, &e, None), Err(SmoothRegError::EmptyBatch)));
    }
}

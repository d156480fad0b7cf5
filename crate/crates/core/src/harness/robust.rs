use std::fmt::Write as _;

use ndarray::Array2;

use super::HarnessError;
use crate::envs::{evaluate, DisturbanceMode, DisturbedEnv, EnvConfig, Environment};
use crate::policy::AnyPolicy;
use crate::rng::{stream, Stream};
use crate::smoothreg::{
    projected_ascent, AdversaryConfig, JeffreyObjective, PerturbationBall, SquaredActionObjective,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobustRow {
    pub epsilon: f64,
    pub mean_return: f64,
    pub std_return: f64,
}

fn check_dims(policy: &AnyPolicy, env: &dyn Environment) -> Result<(), HarnessError> {
    if policy.state_dim() != env.state_dim() {
        return Err(HarnessError::DimensionMismatch {
            policy: policy.state_dim(),
            env: env.state_dim(),
        });
    }
    Ok(())
}

/// Return statistics of `policy` under observation disturbances of each radius
/// in `grid`, over `rollouts` episodes.
///
/// Actions are the policy's mean (Gaussian) or clamped (deterministic)
/// outputs. Start states come from the evaluation stream of `seed`, the
/// perturbations from its disturbance stream; both restart at every radius so
/// all radii see the same start states. At radius 0 the result equals the
/// training-time evaluation for the same seed.
pub fn eval_robust(
    policy: &AnyPolicy,
    env: &EnvConfig,
    mode: DisturbanceMode,
    grid: &[f64],
    rollouts: usize,
    adversary: &AdversaryConfig,
    seed: u64,
) -> Result<Vec<RobustRow>, HarnessError> {
    check_dims(policy, env.build().as_ref())?;
    grid.iter()
        .map(|&epsilon| {
            let ball = PerturbationBall::new(epsilon)?;
            let noise = stream(seed, Stream::Disturbance);
            let inner = env.build();
            let mut wrapped = match mode {
                DisturbanceMode::Random => DisturbedEnv::random(inner, ball, noise),
                DisturbanceMode::Adversarial => DisturbedEnv::adversarial(inner, ball, policy, *adversary, noise),
            };
            let (mean_return, std_return) = evaluate(
                &mut wrapped,
                |s| Ok(policy.act(s)?),
                rollouts,
                &mut stream(seed, Stream::Eval),
            )?;
            Ok(RobustRow {
                epsilon,
                mean_return,
                std_return,
            })
        })
        .collect()
}

pub fn robust_csv(rows: &[RobustRow]) -> String {
    let mut s = String::from("epsilon,mean_return,std_return\n");
    for r in rows {
        writeln!(s, "{},{},{}", r.epsilon, r.mean_return, r.std_return).unwrap();
    }
    s
}

/// `n` states visited by `policy` (acting on clean observations), episode
/// after episode from evaluation-stream starts.
pub fn collect_states(policy: &AnyPolicy, env: &EnvConfig, n: usize, seed: u64) -> Result<Array2<f64>, HarnessError> {
    let mut e = env.build();
    check_dims(policy, e.as_ref())?;
    let mut rng = stream(seed, Stream::Eval);
    let mut states = Vec::with_capacity(n * e.state_dim());
    let mut count = 0;
    while count < n {
        let mut obs = e.reset(&mut rng);
        for _ in 0..e.horizon() {
            if count == n {
                break;
            }
            states.extend_from_slice(&obs);
            count += 1;
            let step = e.step(&policy.act(&obs)?)?;
            if step.done {
                break;
            }
            obs = step.observation;
        }
    }
    Ok(Array2::from_shape_vec((n, e.state_dim()), states).expect("row-major states"))
}

/// Mean over `n` on-policy states of the worst-case output divergence within
/// radius `epsilon`: Jeffrey's divergence for Gaussian policies, squared
/// action gap (before clamping) for deterministic ones.
pub fn lipschitz_probe(
    policy: &AnyPolicy,
    env: &EnvConfig,
    epsilon: f64,
    n: usize,
    adversary: &AdversaryConfig,
    seed: u64,
) -> Result<f64, HarnessError> {
    if n == 0 {
        return Err(HarnessError::InvalidConfig("the probe needs at least one state".into()));
    }
    let ball = PerturbationBall::new(epsilon)?;
    let states = collect_states(policy, env, n, seed)?;
    let mut rng = stream(seed, Stream::Adversary);
    let found = match policy {
        AnyPolicy::Gaussian(p) => {
            let obj = JeffreyObjective::new(p, &states)?;
            projected_ascent(&obj, &states, &ball, adversary, &mut rng)?
        }
        AnyPolicy::Deterministic(p) => {
            let obj = SquaredActionObjective::new(p, &states)?;
            projected_ascent(&obj, &states, &ball, adversary, &mut rng)?
        }
    };
    Ok(found.mean_value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Layer, Mlp};
    use crate::envs::{ActionBounds, EnvKind};
    use crate::policy::{DeterministicPolicy, GaussianPolicy};
    use crate::rng::seeded;
    use ndarray::{array, Array1};

    fn gaussian() -> AnyPolicy {
        AnyPolicy::Gaussian(GaussianPolicy::init(&[3, 8, 1], 0.5, &mut seeded(1)).unwrap())
    }

    #[test]
    fn zero_radius_matches_clean_evaluation() {
        let p = gaussian();
        let env = EnvConfig::new(EnvKind::Pendulum);
        let adv = AdversaryConfig::default();
        for mode in [DisturbanceMode::Random, DisturbanceMode::Adversarial] {
            let rows = eval_robust(&p, &env, mode, &[0.0], 3, &adv, 5).unwrap();
            let mut e = env.build();
            let clean = evaluate(&mut e, |s| Ok(p.act(s)?), 3, &mut stream(5, Stream::Eval)).unwrap();
            assert_eq!((rows[0].mean_return, rows[0].std_return), clean);
        }
        let rows = eval_robust(&p, &env, DisturbanceMode::Random, &[0.0, 0.1, 0.2], 2, &adv, 5).unwrap();
        assert_eq!(rows.len(), 3);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let env = EnvConfig::new(EnvKind::PointMass);
        let err = eval_robust(&gaussian(), &env, DisturbanceMode::Random, &[0.0], 1, &AdversaryConfig::default(), 0);
        assert!(matches!(err, Err(HarnessError::DimensionMismatch { policy: 3, env: 4 })));
    }

    #[test]
    fn probe_is_zero_for_constant_policies_and_zero_radius() {
        let env = EnvConfig::new(EnvKind::Pendulum);
        let adv = AdversaryConfig::default();
        let constant = AnyPolicy::Deterministic(
            DeterministicPolicy::new(Mlp::zeros(&[3, 4, 1]).unwrap(), ActionBounds::symmetric(1, 2.0)).unwrap(),
        );
        assert_eq!(lipschitz_probe(&constant, &env, 0.1, 20, &adv, 0).unwrap(), 0.0);
        assert_eq!(lipschitz_probe(&gaussian(), &env, 0.0, 20, &adv, 0).unwrap(), 0.0);
        assert!(lipschitz_probe(&gaussian(), &env, 0.1, 20, &adv, 0).unwrap() > 0.0);
    }

    #[test]
    fn probe_on_linear_policy_matches_vertex_enumeration() {
        let w = array![[0.8, -0.3, 1.1, 0.05], [-0.4, 0.9, 0.2, -0.7]];
        let net = Mlp::from_layers(vec![Layer {
            weight: w.clone(),
            bias: Array1::zeros(2),
        }])
        .unwrap();
        let p = AnyPolicy::Deterministic(DeterministicPolicy::new(net, ActionBounds::symmetric(2, 1.0)).unwrap());
        let env = EnvConfig::new(EnvKind::PointMass);
        let eps = 0.05;
        // ‖Wδ‖² is convex, so its box maximum sits on one of the 16 vertices.
        let best = (0..16u32)
            .map(|mask| {
                let d: Vec<f64> = (0..4).map(|j| if mask >> j & 1 == 1 { eps } else { -eps }).collect();
                w.rows().into_iter().map(|r| r.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>().powi(2)).sum::<f64>()
            })
            .fold(0.0, f64::max);
        let adv = AdversaryConfig {
            restarts: 3,
            ..AdversaryConfig::default()
        };
        let got = lipschitz_probe(&p, &env, eps, 1, &adv, 2).unwrap();
        assert!(got <= best * (1.0 + 1e-12) && got >= 0.9 * best, "{got} vs {best}");
    }
}

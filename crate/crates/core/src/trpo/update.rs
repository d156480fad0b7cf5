use ndarray::{Array2, Axis};

use super::{Batch, TrpoConfig, TrpoError, UpdateMode};
use crate::autodiff::{MlpVars, Tape, Var};
use crate::policy::{log_prob_on, GaussianPolicy};
use crate::rng::Rng;
use crate::smoothreg::{reg_policy, reg_policy_value_at};

fn column(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((v.len(), 1), v.to_vec()).expect("column shape")
}

fn log_std_row(p: &GaussianPolicy) -> Array2<f64> {
    Array2::from_shape_vec((1, p.log_std.len()), p.log_std.clone()).expect("row shape")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean over the batch of `exp(log π(a|s) − log π_old(a|s)) · A`.
pub fn surrogate(policy: &GaussianPolicy, batch: &Batch) -> Result<f64, TrpoError> {
    let lp = policy.log_prob_batch(&batch.states, &batch.actions)?;
    let total: f64 = lp
        .iter()
        .zip(&batch.log_probs)
        .zip(&batch.advantages)
        .map(|((l, o), a)| (l - o).exp() * a)
        .sum();
    Ok(total / batch.len() as f64)
}

/// Gradient of [`surrogate`] over the mean-network parameters then log-stds.
pub fn surrogate_grad(policy: &GaussianPolicy, batch: &Batch) -> Result<Vec<f64>, TrpoError> {
    if batch.is_empty() {
        return Err(TrpoError::EmptyBatch);
    }
    let mut tape = Tape::new();
    let vars = policy.mean.register(&mut tape);
    let ls = tape.leaf(log_std_row(policy));
    let x = tape.constant(batch.states.clone());
    let a = tape.constant(batch.actions.clone());
    let old = tape.constant(column(&batch.log_probs));
    let adv = tape.constant(column(&batch.advantages));
    let mu = policy.mean.forward_on(&mut tape, &vars, x)?;
    let lp = log_prob_on(&mut tape, mu, ls, a)?;
    let diff = tape.sub(lp, old)?;
    let ratio = tape.exp(diff);
    let weighted = tape.mul(ratio, adv)?;
    let loss = tape.mean(weighted);
    let grads = tape.backward(loss)?;
    let mut g = policy.mean.flat_grad(&grads, &vars);
    g.extend(grads.wrt_flat(ls));
    Ok(g)
}

/// Mean over `states` of `KL(π_old(·|s) ‖ π_new(·|s))`.
pub fn mean_kl(old: &GaussianPolicy, new: &GaussianPolicy, states: &Array2<f64>) -> Result<f64, TrpoError> {
    if states.nrows() == 0 {
        return Err(TrpoError::EmptyBatch);
    }
    let mu1 = old.mean.forward_batch(states).map_err(crate::policy::PolicyError::from)?;
    let mu2 = new.mean.forward_batch(states).map_err(crate::policy::PolicyError::from)?;
    let (v1, v2): (Vec<f64>, Vec<f64>) = old
        .log_std
        .iter()
        .zip(&new.log_std)
        .map(|(a, b)| ((2.0 * a).exp(), (2.0 * b).exp()))
        .unzip();
    let log_ratio: f64 = old.log_std.iter().zip(&new.log_std).map(|(a, b)| b - a).sum();
    let mut total = 0.0;
    for (r1, r2) in mu1.rows().into_iter().zip(mu2.rows()) {
        let mut kl = log_ratio;
        for j in 0..r1.len() {
            kl += (v1[j] + (r1[j] - r2[j]).powi(2)) / (2.0 * v2[j]) - 0.5;
        }
        total += kl;
    }
    Ok(total / states.nrows() as f64)
}

/// Hessian of the mean KL to the current policy, evaluated at the current
/// parameters, as a linear operator.
///
/// For a state-independent log-std this is the Fisher matrix
/// `(1/N) Σ Jᵢᵀ diag(σ⁻²) Jᵢ` on the mean parameters and `2·I` on the log-stds.
pub struct FisherOperator<'a> {
    policy: &'a GaussianPolicy,
    states: &'a Array2<f64>,
    tape: Tape,
    vars: MlpVars,
    out: Var,
    inv_var: Vec<f64>,
    damping: f64,
}

impl<'a> FisherOperator<'a> {
    pub fn new(policy: &'a GaussianPolicy, states: &'a Array2<f64>, damping: f64) -> Result<Self, TrpoError> {
        if states.nrows() == 0 {
            return Err(TrpoError::EmptyBatch);
        }
        let mut tape = Tape::new();
        let vars = policy.mean.register(&mut tape);
        let x = tape.constant(states.clone());
        let out = policy.mean.forward_on(&mut tape, &vars, x)?;
        Ok(Self {
            policy,
            states,
            tape,
            vars,
            out,
            inv_var: policy.log_std.iter().map(|l| (-2.0 * l).exp()).collect(),
            damping,
        })
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>, TrpoError> {
        let m = self.policy.mean.param_count();
        if v.len() != self.policy.param_count() {
            return Err(TrpoError::Policy(crate::policy::PolicyError::Dim {
                what: "Fisher-vector operand",
                expected: self.policy.param_count(),
                got: v.len(),
            }));
        }
        let (_, mut jv) = self
            .policy
            .mean
            .jvp_batch(self.states, &v[..m])
            .map_err(crate::policy::PolicyError::from)?;
        let n = self.states.nrows() as f64;
        for mut row in jv.axis_iter_mut(Axis(0)) {
            row.iter_mut().zip(&self.inv_var).for_each(|(x, iv)| *x *= iv / n);
        }
        let grads = self.tape.backward_seeded(self.out, jv)?;
        let mut out = self.policy.mean.flat_grad(&grads, &self.vars);
        out.extend(v[m..].iter().map(|x| 2.0 * x));
        out.iter_mut().zip(v).for_each(|(o, x)| *o += self.damping * x);
        Ok(out)
    }
}

/// `F·v` plus `damping·v`; see [`FisherOperator`].
pub fn fisher_vec(policy: &GaussianPolicy, states: &Array2<f64>, v: &[f64], damping: f64) -> Result<Vec<f64>, TrpoError> {
    FisherOperator::new(policy, states, damping)?.apply(v)
}

/// Conjugate gradient for `A x = b` with symmetric positive-definite `A`,
/// starting from zero. Stops when `‖r‖ ≤ tol` or after `iters` iterations.
pub fn conjugate_gradient<F>(mut apply: F, b: &[f64], iters: usize, tol: f64) -> Result<Vec<f64>, TrpoError>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>, TrpoError>,
{
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut p = b.to_vec();
    let mut rr = dot(&r, &r);
    if !rr.is_finite() {
        return Err(TrpoError::NonFinite("conjugate-gradient right-hand side"));
    }
    for _ in 0..iters {
        if rr.sqrt() <= tol {
            break;
        }
        let ap = apply(&p)?;
        let pap = dot(&p, &ap);
        if !pap.is_finite() || pap <= 0.0 {
            return Err(TrpoError::NonFinite("conjugate-gradient curvature"));
        }
        let alpha = rr / pap;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&ap).for_each(|(ri, ai)| *ri -= alpha * ai);
        let next = dot(&r, &r);
        let beta = next / rr;
        p.iter_mut().zip(&r).for_each(|(pi, ri)| *pi = ri + beta * *pi);
        rr = next;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(TrpoError::NonFinite("conjugate-gradient solution"));
    }
    Ok(x)
}

/// Diagnostics of one policy update.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateStats {
    /// Whether the parameters changed.
    pub accepted: bool,
    /// Mean KL from the pre-update policy (zero when rejected).
    pub mean_kl: f64,
    /// Regularized surrogate before and after the update.
    pub objective_before: f64,
    pub objective_after: f64,
    /// Weighted regularizer value at the pre-update parameters.
    pub reg_value: f64,
    /// Mean divergence reached by the perturbation search.
    pub adv_div: f64,
    /// Step halvings used by the line search.
    pub backtracks: usize,
}

/// One TRPO step on `batch`, regularized when `cfg.lambda_s > 0`.
///
/// The ascent direction is `g = ∇surrogate − λ·∇regularizer`, the regularizer
/// weighting each state by `γᵗ` and holding the perturbed states found at the
/// current parameters fixed. In trust-region mode the natural direction
/// `F⁻¹g` is scaled to the KL boundary and halved until the mean KL is within
/// the radius and the regularized surrogate improves; if no halving succeeds
/// the policy is left unchanged. Non-finite gradients or curvature also leave
/// it unchanged.
pub fn trpo_sr_update(
    policy: &mut GaussianPolicy,
    batch: &Batch,
    cfg: &TrpoConfig,
    adversary_rng: &mut Rng,
) -> Result<UpdateStats, TrpoError> {
    if batch.is_empty() {
        return Err(TrpoError::EmptyBatch);
    }
    let old = policy.clone();
    let theta = old.params();
    let mut g = surrogate_grad(&old, batch)?;
    let mut stats = UpdateStats::default();

    let perturbed = if cfg.lambda_s > 0.0 {
        let reg = reg_policy(&old, &batch.states, Some(&batch.discounts), &cfg.ball, &cfg.adversary, adversary_rng)?;
        g.iter_mut().zip(&reg.grad).for_each(|(gi, ri)| *gi -= cfg.lambda_s * ri);
        stats.reg_value = reg.value;
        stats.adv_div = reg.mean_divergence;
        Some(reg.perturbed)
    } else {
        None
    };
    let objective = |p: &GaussianPolicy| -> Result<f64, TrpoError> {
        let mut v = surrogate(p, batch)?;
        if let Some(st) = &perturbed {
            v -= cfg.lambda_s * reg_policy_value_at(p, &batch.states, st, Some(&batch.discounts))?;
        }
        Ok(v)
    };
    stats.objective_before = objective(&old)?;
    stats.objective_after = stats.objective_before;

    if g.iter().any(|x| !x.is_finite()) {
        log::warn!("non-finite policy gradient, skipping update");
        return Ok(stats);
    }

    match cfg.mode {
        UpdateMode::Alg1 => {
            let next: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t + cfg.step_size * gi).collect();
            policy.set_params(&next)?;
            stats.accepted = next != theta;
            stats.mean_kl = mean_kl(&old, policy, &batch.states)?;
            stats.objective_after = objective(policy)?;
        }
        UpdateMode::TrustRegion => {
            let fisher = FisherOperator::new(&old, &batch.states, cfg.cg_damping)?;
            let x = match conjugate_gradient(|v| fisher.apply(v), &g, cfg.cg_iters, 1e-10) {
                Ok(x) => x,
                Err(e) => {
                    log::warn!("{e}, skipping update");
                    return Ok(stats);
                }
            };
            let shs = dot(&x, &fisher.apply(&x)?);
            if !(shs > 0.0) || !shs.is_finite() {
                return Ok(stats);
            }
            let scale = (2.0 * cfg.max_kl / shs).sqrt();
            let mut candidate = old.clone();
            let mut frac = 1.0;
            for k in 0..=cfg.backtracks {
                let next: Vec<f64> = theta.iter().zip(&x).map(|(t, xi)| t + frac * scale * xi).collect();
                candidate.set_params(&next)?;
                let kl = mean_kl(&old, &candidate, &batch.states)?;
                let obj = objective(&candidate)?;
                if kl.is_finite() && kl <= cfg.max_kl && obj > stats.objective_before {
                    *policy = candidate;
                    stats.accepted = true;
                    stats.mean_kl = kl;
                    stats.objective_after = obj;
                    stats.backtracks = k;
                    return Ok(stats);
                }
                frac *= 0.5;
            }
            log::debug!("line search exhausted, keeping parameters");
            stats.backtracks = cfg.backtracks;
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{central_difference, finite_diff_check, Layer, Mlp};
    use crate::rng::seeded;
    use crate::smoothreg::{AdversaryConfig, PerturbationBall};
    use ndarray::Array1;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn random_batch(policy: &GaussianPolicy, n: usize, rng: &mut Rng) -> Batch {
        let sd = policy.state_dim();
        let states = Array2::from_shape_fn((n, sd), |_| rng.random_range(-1.0..1.0));
        let mut actions = Array2::zeros((n, policy.action_dim()));
        for (i, s) in states.rows().into_iter().enumerate() {
            let a = policy.sample(s.as_slice().unwrap(), rng).unwrap();
            actions.row_mut(i).assign(&Array1::from(a));
        }
        let log_probs = policy.log_prob_batch(&states, &actions).unwrap();
        Batch {
            states,
            actions,
            log_probs,
            advantages: (0..n).map(|_| rng.sample(StandardNormal)).collect(),
            discounts: (0..n).map(|t| 0.99f64.powi(t as i32)).collect(),
        }
    }

    #[test]
    fn zero_advantages_give_zero_gradient() {
        let mut rng = seeded(0);
        let p = GaussianPolicy::init(&[3, 8, 2], 0.8, &mut rng).unwrap();
        let mut b = random_batch(&p, 20, &mut rng);
        b.advantages = vec![0.0; 20];
        assert!(surrogate_grad(&p, &b).unwrap().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn surrogate_gradient_equals_score_function_average() {
        let mut rng = seeded(1);
        let p = GaussianPolicy::init(&[3, 8, 2], 0.8, &mut rng).unwrap();
        let b = random_batch(&p, 30, &mut rng);
        let g = surrogate_grad(&p, &b).unwrap();
        // oracle: (1/N) Σ A_i ∇ log π(a_i|s_i), each score by central differences
        let theta = p.params();
        let mut oracle = vec![0.0; theta.len()];
        for i in 0..b.len() {
            let s = b.states.row(i).to_vec();
            let a = b.actions.row(i).to_vec();
            let score = central_difference(
                |x| {
                    let mut q = p.clone();
                    q.set_params(x).unwrap();
                    q.log_prob(&s, &a).unwrap()
                },
                &theta,
                1e-6,
            );
            oracle.iter_mut().zip(score).for_each(|(o, s)| *o += b.advantages[i] * s / b.len() as f64);
        }
        let max = g.iter().zip(&oracle).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(max < 1e-7, "{max}");

        // exact identity at θ_k with an analytic score for the log-std block
        let sigma = p.std();
        let m = p.mean.param_count();
        for j in 0..p.action_dim() {
            let mut expect = 0.0;
            for i in 0..b.len() {
                let mu = p.mean_action(b.states.row(i).as_slice().unwrap()).unwrap();
                let z = (b.actions[[i, j]] - mu[j]) / sigma[j];
                expect += b.advantages[i] * (z * z - 1.0);
            }
            expect /= b.len() as f64;
            assert!((g[m + j] - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        let mut rng = seeded(2);
        let p = GaussianPolicy::init(&[2, 5, 1], 0.6, &mut rng).unwrap();
        let b = random_batch(&p, 15, &mut rng);
        let mut moved = p.clone();
        let shifted: Vec<f64> = p.params().iter().map(|x| x + rng.random_range(-0.05..0.05)).collect();
        moved.set_params(&shifted).unwrap();
        let g = surrogate_grad(&moved, &b).unwrap();
        let err = finite_diff_check(
            |x| {
                let mut q = p.clone();
                q.set_params(x).unwrap();
                surrogate(&q, &b).unwrap()
            },
            &shifted,
            &g,
            1e-5,
        );
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn fisher_of_zero_is_zero_and_symmetric() {
        let mut rng = seeded(3);
        let p = GaussianPolicy::init(&[3, 6, 2], 0.5, &mut rng).unwrap();
        let b = random_batch(&p, 25, &mut rng);
        let n = p.param_count();
        assert!(fisher_vec(&p, &b.states, &vec![0.0; n], 0.1).unwrap().iter().all(|x| *x == 0.0));
        let f = FisherOperator::new(&p, &b.states, 0.0).unwrap();
        for _ in 0..5 {
            let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ufv = dot(&u, &f.apply(&v).unwrap());
            let vfu = dot(&v, &f.apply(&u).unwrap());
            assert!((ufv - vfu).abs() < 1e-8 * ufv.abs().max(1.0));
        }
    }

    #[test]
    fn fisher_matches_dense_toy_matrix() {
        // μ(s) = w s + b, one log-std: parameters (w, b, log σ)
        let sigma: f64 = 0.7;
        let net = Mlp::from_layers(vec![Layer {
            weight: Array2::from_elem((1, 1), 0.3),
            bias: Array1::from_elem(1, -0.2),
        }])
        .unwrap();
        let p = GaussianPolicy::new(net, vec![sigma.ln()]).unwrap();
        let states = Array2::from_shape_vec((4, 1), vec![0.5, -1.0, 2.0, 0.1]).unwrap();
        let n = 4.0;
        let (s1, s2) = states.iter().fold((0.0, 0.0), |(a, b), s| (a + s, b + s * s));
        let inv = 1.0 / (sigma * sigma);
        let dense = [
            [s2 / n * inv, s1 / n * inv, 0.0],
            [s1 / n * inv, inv, 0.0],
            [0.0, 0.0, 2.0],
        ];
        for k in 0..3 {
            let mut e = vec![0.0; 3];
            e[k] = 1.0;
            let col = fisher_vec(&p, &states, &e, 0.0).unwrap();
            for r in 0..3 {
                assert!((col[r] - dense[r][k]).abs() < 1e-12, "{r},{k}: {} vs {}", col[r], dense[r][k]);
            }
        }
    }

    #[test]
    fn fisher_is_kl_hessian() {
        let mut rng = seeded(4);
        let p = GaussianPolicy::init(&[2, 3, 1], 0.5, &mut rng).unwrap();
        let b = random_batch(&p, 10, &mut rng);
        let theta = p.params();
        let n = theta.len();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fv = fisher_vec(&p, &b.states, &v, 0.0).unwrap();
        // second directional difference of the KL along v: vᵀ H v
        let kl_at = |t: f64| {
            let mut q = p.clone();
            let x: Vec<f64> = theta.iter().zip(&v).map(|(a, b)| a + t * b).collect();
            q.set_params(&x).unwrap();
            mean_kl(&p, &q, &b.states).unwrap()
        };
        let h = 1e-4;
        let vhv = (kl_at(h) - 2.0 * kl_at(0.0) + kl_at(-h)) / (h * h);
        assert!((vhv - dot(&v, &fv)).abs() < 1e-5 * vhv.abs().max(1.0), "{vhv} vs {}", dot(&v, &fv));
    }

    #[test]
    fn cg_small_systems() {
        let id = |v: &[f64]| Ok(v.to_vec());
        assert_eq!(conjugate_gradient(id, &[3.0, -1.0], 1, 0.0).unwrap(), vec![3.0, -1.0]);
        let diag = |v: &[f64]| Ok(vec![2.0 * v[0], 4.0 * v[1]]);
        let x = conjugate_gradient(diag, &[2.0, 8.0], 10, 1e-14).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 2.0).abs() < 1e-14);
        assert_eq!(conjugate_gradient(diag, &[0.0, 0.0], 10, 1e-14).unwrap(), vec![0.0, 0.0]);
        let nan = |_: &[f64]| Ok(vec![f64::NAN, 0.0]);
        assert!(conjugate_gradient(nan, &[1.0, 1.0], 10, 1e-12).is_err());
    }

    fn config(lambda: f64, mode: UpdateMode) -> TrpoConfig {
        TrpoConfig {
            lambda_s: lambda,
            mode,
            ball: PerturbationBall::new(0.05).unwrap(),
            adversary: AdversaryConfig::default(),
            ..TrpoConfig::default()
        }
    }

    #[test]
    fn accepted_steps_respect_the_trust_region() {
        let mut rng = seeded(5);
        for lambda in [0.0, 1.0, 10.0] {
            for _ in 0..5 {
                let mut p = GaussianPolicy::init(&[3, 8, 1], 0.5, &mut rng).unwrap();
                let b = random_batch(&p, 50, &mut rng);
                let cfg = config(lambda, UpdateMode::TrustRegion);
                let before = p.clone();
                let stats = trpo_sr_update(&mut p, &b, &cfg, &mut rng).unwrap();
                if stats.accepted {
                    let kl = mean_kl(&before, &p, &b.states).unwrap();
                    assert!(kl <= 1.05 * cfg.max_kl);
                    assert!(stats.objective_after > stats.objective_before);
                } else {
                    assert_eq!(p, before);
                }
            }
        }
    }

    #[test]
    fn zero_step_size_keeps_parameters() {
        let mut rng = seeded(6);
        let mut p = GaussianPolicy::init(&[3, 4, 1], 0.5, &mut rng).unwrap();
        let b = random_batch(&p, 10, &mut rng);
        let before = p.clone();
        let cfg = TrpoConfig {
            step_size: 0.0,
            ..config(1.0, UpdateMode::Alg1)
        };
        let stats = trpo_sr_update(&mut p, &b, &cfg, &mut rng).unwrap();
        assert_eq!(p, before);
        assert!(!stats.accepted);
    }

    #[test]
    fn zero_lambda_skips_adversary() {
        let mut rng = seeded(7);
        let p = GaussianPolicy::init(&[3, 6, 1], 0.5, &mut rng).unwrap();
        let b = random_batch(&p, 30, &mut rng);
        let mut a = p.clone();
        let mut c = p.clone();
        let mut r1 = seeded(8);
        let mut r2 = seeded(8);
        let plain = TrpoConfig::default();
        trpo_sr_update(&mut a, &b, &plain, &mut r1).unwrap();
        trpo_sr_update(&mut c, &b, &config(0.0, UpdateMode::TrustRegion), &mut r2).unwrap();
        assert_eq!(a.params(), c.params());
        assert_eq!(r1.random::<u64>(), seeded(8).random::<u64>());
    }
}

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use super::PolicyError;
use crate::autodiff::{join_exact, next_nonempty, parse_floats, Mlp, Tape, Var};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Diagonal Gaussian over actions.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self, PolicyError> {
        if mean.len() != std.len() {
            return Err(PolicyError::Dim {
                what: "std",
                expected: mean.len(),
                got: std.len(),
            });
        }
        if let Some(&bad) = std.iter().find(|&&s| !(s > 0.0)) {
            return Err(PolicyError::NonPositiveStd(bad));
        }
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_prob(&self, a: &[f64]) -> Result<f64, PolicyError> {
        if a.len() != self.dim() {
            return Err(PolicyError::Dim {
                what: "action",
                expected: self.dim(),
                got: a.len(),
            });
        }
        Ok(self
            .mean
            .iter()
            .zip(&self.std)
            .zip(a)
            .map(|((m, s), x)| -HALF_LN_2PI - s.ln() - (x - m).powi(2) / (2.0 * s * s))
            .sum())
    }
}

/// `KL(p ‖ q)` for diagonal Gaussians.
pub fn kl_gaussian(p: &DiagGaussian, q: &DiagGaussian) -> Result<f64, PolicyError> {
    if p.dim() != q.dim() {
        return Err(PolicyError::Dim {
            what: "distribution",
            expected: p.dim(),
            got: q.dim(),
        });
    }
    for s in p.std.iter().chain(&q.std) {
        if !(*s > 0.0) {
            return Err(PolicyError::NonPositiveStd(*s));
        }
    }
    Ok((0..p.dim())
        .map(|j| {
            let (m1, s1, m2, s2) = (p.mean[j], p.std[j], q.mean[j], q.std[j]);
            (s2 / s1).ln() + (s1 * s1 + (m1 - m2).powi(2)) / (2.0 * s2 * s2) - 0.5
        })
        .sum())
}

/// Jeffrey's divergence `½ KL(p‖q) + ½ KL(q‖p)`.
pub fn jeffrey(p: &DiagGaussian, q: &DiagGaussian) -> Result<f64, PolicyError> {
    Ok(0.5 * kl_gaussian(p, q)? + 0.5 * kl_gaussian(q, p)?)
}

/// Per-row Gaussian log-density on the tape.
///
/// `mean` and `actions` are `n x A`, `log_std` is `1 x A`; returns `n x 1`.
pub fn log_prob_on(tape: &mut Tape, mean: Var, log_std: Var, actions: Var) -> Result<Var, PolicyError> {
    let diff = tape.sub(actions, mean)?;
    let inv_std = {
        let neg = tape.neg(log_std);
        tape.exp(neg)
    };
    let z = tape.mul(diff, inv_std)?;
    let z2 = tape.square(z);
    let quad = tape.scale(z2, -0.5);
    let norm = tape.offset(log_std, HALF_LN_2PI);
    let per_dim = tape.sub(quad, norm)?;
    Ok(tape.sum_cols(per_dim))
}

/// Per-row `KL(N(mu1, e^ls1) ‖ N(mu2, e^ls2))` on the tape; returns `n x 1`.
///
/// Means are `n x A`; log-stds may be `1 x A` (state-independent) or `n x A`.
pub fn kl_on(tape: &mut Tape, mu1: Var, ls1: Var, mu2: Var, ls2: Var) -> Result<Var, PolicyError> {
    let log_ratio = tape.sub(ls2, ls1)?;
    let var1 = {
        let t = tape.scale(ls1, 2.0);
        tape.exp(t)
    };
    let diff = tape.sub(mu1, mu2)?;
    let diff2 = tape.square(diff);
    let num = tape.add(var1, diff2)?;
    let inv_two_var2 = {
        let t = tape.scale(ls2, -2.0);
        let e = tape.exp(t);
        tape.scale(e, 0.5)
    };
    let quad = tape.mul(num, inv_two_var2)?;
    let per_dim = tape.add(log_ratio, quad)?;
    let per_dim = tape.offset(per_dim, -0.5);
    Ok(tape.sum_cols(per_dim))
}

/// Per-row Jeffrey's divergence on the tape; returns `n x 1`.
pub fn jeffrey_on(tape: &mut Tape, mu1: Var, ls1: Var, mu2: Var, ls2: Var) -> Result<Var, PolicyError> {
    let forward = kl_on(tape, mu1, ls1, mu2, ls2)?;
    let reverse = kl_on(tape, mu2, ls2, mu1, ls1)?;
    let sum = tape.add(forward, reverse)?;
    Ok(tape.scale(sum, 0.5))
}

/// Stochastic policy `a ~ N(mean_net(s), diag(exp(log_std)²))` with a
/// state-independent log standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPolicy {
    pub mean: Mlp,
    pub log_std: Vec<f64>,
}

impl GaussianPolicy {
    pub fn new(mean: Mlp, log_std: Vec<f64>) -> Result<Self, PolicyError> {
        if log_std.len() != mean.output_dim() {
            return Err(PolicyError::Dim {
                what: "log_std",
                expected: mean.output_dim(),
                got: log_std.len(),
            });
        }
        Ok(Self { mean, log_std })
    }

    pub fn init<R: Rng + ?Sized>(sizes: &[usize], init_std: f64, rng: &mut R) -> Result<Self, PolicyError> {
        if !(init_std > 0.0) {
            return Err(PolicyError::NonPositiveStd(init_std));
        }
        let mean = Mlp::new(sizes, rng)?;
        let a = mean.output_dim();
        Self::new(mean, vec![init_std.ln(); a])
    }

    pub fn state_dim(&self) -> usize {
        self.mean.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.mean.output_dim()
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    /// Mean-network parameters followed by the log-stds.
    pub fn param_count(&self) -> usize {
        self.mean.param_count() + self.log_std.len()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.mean.params();
        p.extend(&self.log_std);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), PolicyError> {
        if params.len() != self.param_count() {
            return Err(PolicyError::Dim {
                what: "parameter vector",
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let split = self.mean.param_count();
        self.mean.set_params(&params[..split])?;
        self.log_std.copy_from_slice(&params[split..]);
        Ok(())
    }

    pub fn mean_action(&self, s: &[f64]) -> Result<Vec<f64>, PolicyError> {
        Ok(self.mean.forward(s)?)
    }

    pub fn dist(&self, s: &[f64]) -> Result<DiagGaussian, PolicyError> {
        DiagGaussian::new(self.mean_action(s)?, self.std())
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: &[f64], rng: &mut R) -> Result<Vec<f64>, PolicyError> {
        let mu = self.mean_action(s)?;
        Ok(mu
            .iter()
            .zip(&self.log_std)
            .map(|(m, ls)| {
                let z: f64 = rng.sample(StandardNormal);
                m + ls.exp() * z
            })
            .collect())
    }

    pub fn log_prob(&self, s: &[f64], a: &[f64]) -> Result<f64, PolicyError> {
        self.dist(s)?.log_prob(a)
    }

    /// Log-densities of the rows of `actions` under the rows of `states`.
    pub fn log_prob_batch(&self, states: &Array2<f64>, actions: &Array2<f64>) -> Result<Vec<f64>, PolicyError> {
        let mu = self.mean.forward_batch(states)?;
        if mu.dim() != actions.dim() {
            return Err(PolicyError::Dim {
                what: "action batch",
                expected: mu.ncols(),
                got: actions.ncols(),
            });
        }
        let std = self.std();
        Ok(mu
            .rows()
            .into_iter()
            .zip(actions.rows())
            .map(|(m, a)| {
                m.iter()
                    .zip(a.iter())
                    .zip(&std)
                    .map(|((m, x), s)| -HALF_LN_2PI - s.ln() - (x - m).powi(2) / (2.0 * s * s))
                    .sum()
            })
            .collect())
    }

    pub fn to_text(&self) -> String {
        let mut s = self.mean.to_text();
        s.push_str("logstd ");
        s.push_str(&join_exact(self.log_std.iter()));
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self, PolicyError> {
        let mut lines = text.lines();
        let mean = Mlp::from_lines(&mut lines)?;
        let line = next_nonempty(&mut lines).ok_or_else(|| PolicyError::Format("missing `logstd` line".into()))?;
        let rest = line
            .strip_prefix("logstd")
            .ok_or_else(|| PolicyError::Format(format!("expected `logstd ...`, got `{line}`")))?;
        let log_std = parse_floats(rest)?;
        if let Some(extra) = next_nonempty(&mut lines) {
            return Err(PolicyError::Format(format!("trailing content: `{extra}`")));
        }
        Self::new(mean, log_std)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;
    use crate::autodiff::{finite_diff_check, Layer};
    use crate::rng::seeded;
    use ndarray::array;

    fn dist(m: f64, s: f64) -> DiagGaussian {
        DiagGaussian::new(vec![m], vec![s]).unwrap()
    }

    #[test]
    fn standard_normal_log_density() {
        let d = dist(0.0, 1.0);
        assert!((d.log_prob(&[0.0]).unwrap() - (-0.5 * (2.0 * PI).ln())).abs() < 1e-15);
        assert!((d.log_prob(&[1.0]).unwrap() - (-0.5 - 0.5 * (2.0 * PI).ln())).abs() < 1e-15);
        assert!((d.log_prob(&[0.0]).unwrap() + 0.9189).abs() < 1e-4);
    }

    #[test]
    fn log_prob_peaks_at_mean() {
        let d = DiagGaussian::new(vec![0.3, -1.0], vec![0.5, 2.0]).unwrap();
        let at_mean = d.log_prob(&[0.3, -1.0]).unwrap();
        for a in [[0.31, -1.0], [0.3, -0.9], [-2.0, 4.0]] {
            assert!(d.log_prob(&a).unwrap() < at_mean);
        }
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(kl_gaussian(&dist(0.2, 0.7), &dist(0.2, 0.7)).unwrap(), 0.0);
        assert!((kl_gaussian(&dist(0.0, 1.0), &dist(1.0, 1.0)).unwrap() - 0.5).abs() < 1e-15);
        let (d, s) = (0.8, 1.7);
        let j = jeffrey(&dist(0.0, s), &dist(d, s)).unwrap();
        assert!((j - d * d / (2.0 * s * s)).abs() < 1e-15);
    }

    #[test]
    fn nonpositive_std_rejected() {
        assert!(matches!(
            DiagGaussian::new(vec![0.0], vec![0.0]),
            Err(PolicyError::NonPositiveStd(_))
        ));
        let bad = DiagGaussian {
            mean: vec![0.0],
            std: vec![-1.0],
        };
        assert!(kl_gaussian(&bad, &dist(0.0, 1.0)).is_err());
    }

    #[test]
    fn sampling_is_seed_reproducible() {
        let mut rng = seeded(5);
        let p = GaussianPolicy::init(&[3, 8, 2], 0.5, &mut rng).unwrap();
        let s = [0.1, 0.2, -0.3];
        let a = p.sample(&s, &mut seeded(11)).unwrap();
        let b = p.sample(&s, &mut seeded(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn vanishing_std_samples_mean() {
        let mut rng = seeded(6);
        let mut p = GaussianPolicy::init(&[2, 4, 1], 1.0, &mut rng).unwrap();
        p.log_std = vec![-800.0];
        let s = [0.5, -0.5];
        assert_eq!(p.sample(&s, &mut rng).unwrap(), p.mean_action(&s).unwrap());
    }

    #[test]
    fn text_round_trip() {
        let mut rng = seeded(7);
        let p = GaussianPolicy::init(&[3, 4, 2], 0.3, &mut rng).unwrap();
        let back = GaussianPolicy::from_text(&p.to_text()).unwrap();
        assert_eq!(back, p);
        assert!(GaussianPolicy::from_text(&p.mean.to_text()).is_err());
    }

    #[test]
    fn tape_log_prob_matches_closed_form_and_gradient() {
        let mean = Mlp::from_layers(vec![Layer {
            weight: array![[0.5, -0.2], [0.1, 0.3]],
            bias: array![0.0, 0.1],
        }])
        .unwrap();
        let p = GaussianPolicy::new(mean, vec![-0.3, 0.2]).unwrap();
        let states = array![[0.2, 0.4], [-1.0, 0.5], [0.3, 0.3]];
        let actions = array![[0.1, 0.0], [0.4, -0.2], [-0.5, 0.9]];
        let direct = p.log_prob_batch(&states, &actions).unwrap();

        let eval = |theta: &[f64]| -> (f64, Vec<f64>) {
            let mut q = p.clone();
            q.set_params(theta).unwrap();
            let mut tape = Tape::new();
            let vars = q.mean.register(&mut tape);
            let ls = tape.leaf(Array2::from_shape_vec((1, 2), q.log_std.clone()).unwrap());
            let x = tape.constant(states.clone());
            let a = tape.constant(actions.clone());
            let mu = q.mean.forward_on(&mut tape, &vars, x).unwrap();
            let lp = log_prob_on(&mut tape, mu, ls, a).unwrap();
            let loss = tape.sum(lp);
            let g = tape.backward(loss).unwrap();
            let mut grad = q.mean.flat_grad(&g, &vars);
            grad.extend(g.wrt_flat(ls));
            (tape.scalar_value(loss).unwrap(), grad)
        };
        let theta = p.params();
        let (v, g) = eval(&theta);
        assert!((v - direct.iter().sum::<f64>()).abs() < 1e-12);
        assert!(finite_diff_check(|t| eval(t).0, &theta, &g, 1e-5) < 1e-4);
    }
}

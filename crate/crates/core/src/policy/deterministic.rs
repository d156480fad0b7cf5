use ndarray::Array2;
use rand::Rng;

use super::PolicyError;
use crate::autodiff::{Mlp, MlpVars, Tape, Var};
use crate::envs::ActionBounds;

/// Deterministic actor `s -> mu(s)`, clamped into the action box before use
/// in an environment.
///
/// With `squash` set the network output passes through
/// `mid + half·tanh(·)` first, so `mu(s)` already lies inside the box.
#[derive(Clone, Debug, PartialEq)]
pub struct DeterministicPolicy {
    pub net: Mlp,
    pub bounds: ActionBounds,
    pub squash: bool,
}

impl DeterministicPolicy {
    pub fn new(net: Mlp, bounds: ActionBounds) -> Result<Self, PolicyError> {
        if bounds.dim() != net.output_dim() {
            return Err(PolicyError::Dim {
                what: "action bounds",
                expected: net.output_dim(),
                got: bounds.dim(),
            });
        }
        Ok(Self {
            net,
            bounds,
            squash: false,
        })
    }

    pub fn squashed(net: Mlp, bounds: ActionBounds) -> Result<Self, PolicyError> {
        Ok(Self {
            squash: true,
            ..Self::new(net, bounds)?
        })
    }

    pub fn init<R: Rng + ?Sized>(sizes: &[usize], bounds: ActionBounds, rng: &mut R) -> Result<Self, PolicyError> {
        Self::new(Mlp::new(sizes, rng)?, bounds)
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.net.output_dim()
    }

    fn mid_half(&self) -> (Vec<f64>, Vec<f64>) {
        let mid = self.bounds.low.iter().zip(&self.bounds.high).map(|(l, h)| 0.5 * (l + h)).collect();
        (mid, self.bounds.half_range())
    }

    /// `mu(s)` before clamping.
    pub fn raw(&self, s: &[f64]) -> Result<Vec<f64>, PolicyError> {
        let mut out = self.net.forward(s)?;
        if self.squash {
            let (mid, half) = self.mid_half();
            for ((o, m), h) in out.iter_mut().zip(mid).zip(half) {
                *o = m + h * o.tanh();
            }
        }
        Ok(out)
    }

    /// Row-wise `mu` before clamping.
    pub fn raw_batch(&self, states: &Array2<f64>) -> Result<Array2<f64>, PolicyError> {
        let mut out = self.net.forward_batch(states)?;
        if self.squash {
            let (mid, half) = self.mid_half();
            for mut row in out.rows_mut() {
                for (j, o) in row.iter_mut().enumerate() {
                    *o = mid[j] + half[j] * o.tanh();
                }
            }
        }
        Ok(out)
    }

    /// `n x A` outputs of `mu` on the tape, before clamping.
    pub fn forward_on(&self, tape: &mut Tape, vars: &MlpVars, states: Var) -> Result<Var, PolicyError> {
        let out = self.net.forward_on(tape, vars, states)?;
        if !self.squash {
            return Ok(out);
        }
        let (mid, half) = self.mid_half();
        let a = self.action_dim();
        let t = tape.tanh(out);
        let half = tape.constant(Array2::from_shape_vec((1, a), half).expect("row"));
        let mid = tape.constant(Array2::from_shape_vec((1, a), mid).expect("row"));
        let scaled = tape.mul(t, half)?;
        Ok(tape.add(scaled, mid)?)
    }

    /// Network output clamped into the action bounds.
    pub fn act(&self, s: &[f64]) -> Result<Vec<f64>, PolicyError> {
        Ok(self.bounds.clamp(&self.raw(s)?))
    }
}

/// Critic `Q(s, a)` over the concatenated state-action vector.
#[derive(Clone, Debug, PartialEq)]
pub struct QNet {
    pub net: Mlp,
    state_dim: usize,
}

impl QNet {
    pub fn new(net: Mlp, state_dim: usize) -> Result<Self, PolicyError> {
        if net.output_dim() != 1 {
            return Err(PolicyError::Dim {
                what: "critic output",
                expected: 1,
                got: net.output_dim(),
            });
        }
        if state_dim == 0 || state_dim >= net.input_dim() {
            return Err(PolicyError::Dim {
                what: "critic state split",
                expected: net.input_dim(),
                got: state_dim,
            });
        }
        Ok(Self { net, state_dim })
    }

    /// `hidden` lists the hidden widths; input is `state_dim + action_dim`.
    pub fn init<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self, PolicyError> {
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend(hidden);
        sizes.push(1);
        Self::new(Mlp::new(&sizes, rng)?, state_dim)
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.net.input_dim() - self.state_dim
    }

    pub fn value(&self, s: &[f64], a: &[f64]) -> Result<f64, PolicyError> {
        if s.len() != self.state_dim || a.len() != self.action_dim() {
            return Err(PolicyError::Dim {
                what: "state-action pair",
                expected: self.net.input_dim(),
                got: s.len() + a.len(),
            });
        }
        let mut x = s.to_vec();
        x.extend_from_slice(a);
        Ok(self.net.forward(&x)?[0])
    }

    pub fn value_batch(&self, states: &Array2<f64>, actions: &Array2<f64>) -> Result<Vec<f64>, PolicyError> {
        if states.nrows() != actions.nrows() {
            return Err(PolicyError::Dim {
                what: "action batch rows",
                expected: states.nrows(),
                got: actions.nrows(),
            });
        }
        let x = ndarray::concatenate(ndarray::Axis(1), &[states.view(), actions.view()])
            .expect("row counts checked");
        Ok(self.net.forward_batch(&x)?.column(0).to_vec())
    }

    /// `n x 1` critic values on the tape.
    pub fn forward_on(&self, tape: &mut Tape, vars: &MlpVars, states: Var, actions: Var) -> Result<Var, PolicyError> {
        let x = tape.concat_cols(states, actions)?;
        Ok(self.net.forward_on(tape, vars, x)?)
    }
}

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;

use super::{DdpgConfig, DdpgError, MiniBatch, Variant};
use crate::autodiff::Mlp;
use crate::autodiff::Tape;
use crate::policy::{DeterministicPolicy, QNet};
use crate::rng::Rng;
use crate::smoothreg::{projected_ascent, QDifferenceObjective, SquaredActionObjective};

fn column(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((v.len(), 1), v.to_vec()).expect("column shape")
}

/// `yᵢ = rᵢ + γ (1 − doneᵢ) Q′(s′ᵢ, μ′(s′ᵢ))`, with `μ′` clamped into the
/// action bounds as it would be in the environment.
pub fn critic_target(
    batch: &MiniBatch,
    target_critic: &QNet,
    target_actor: &DeterministicPolicy,
    gamma: f64,
) -> Result<Vec<f64>, DdpgError> {
    let mut next_actions = target_actor.raw_batch(&batch.next_states)?;
    for mut row in next_actions.rows_mut() {
        for (j, a) in row.iter_mut().enumerate() {
            *a = a.clamp(target_actor.bounds.low[j], target_actor.bounds.high[j]);
        }
    }
    let q_next = target_critic.value_batch(&batch.next_states, &next_actions)?;
    Ok(batch
        .rewards
        .iter()
        .zip(&batch.dones)
        .zip(&q_next)
        .map(|((r, d), q)| r + if *d { 0.0 } else { gamma * q })
        .collect())
}

/// Critic loss `mean (y − Q(s,a))²`, plus `λ·mean (Q(s,a) − Q(ŝ,a))²` when
/// perturbed states are given, and its gradient over the critic parameters.
pub fn critic_loss_grad(
    critic: &QNet,
    batch: &MiniBatch,
    targets: &[f64],
    lambda: f64,
    perturbed: Option<&Array2<f64>>,
) -> Result<(f64, f64, Vec<f64>), DdpgError> {
    if batch.is_empty() {
        return Err(DdpgError::EmptyBatch);
    }
    let mut tape = Tape::new();
    let vars = critic.net.register(&mut tape);
    let s = tape.constant(batch.states.clone());
    let a = tape.constant(batch.actions.clone());
    let y = tape.constant(column(targets));
    let q = critic.forward_on(&mut tape, &vars, s, a)?;
    let err = tape.sub(y, q)?;
    let sq = tape.square(err);
    let mut loss = tape.mean(sq);
    let mut reg_value = 0.0;
    if let Some(st) = perturbed {
        let xt = tape.constant(st.clone());
        let q_t = critic.forward_on(&mut tape, &vars, xt, a)?;
        let d = tape.sub(q, q_t)?;
        let d2 = tape.square(d);
        let reg = tape.mean(d2);
        reg_value = tape.scalar_value(reg)?;
        let scaled = tape.scale(reg, lambda);
        loss = tape.add(loss, scaled)?;
    }
    let grads = tape.backward(loss)?;
    Ok((tape.scalar_value(loss)?, reg_value, critic.net.flat_grad(&grads, &vars)))
}

/// Actor objective `mean Q(s, μ(s))`, minus `λ·mean ‖μ(s) − μ(ŝ)‖²` when
/// perturbed states are given, and its gradient over the actor parameters with
/// the critic frozen. The actor output enters the critic unclamped.
pub fn actor_objective_grad(
    actor: &DeterministicPolicy,
    critic: &QNet,
    states: &Array2<f64>,
    lambda: f64,
    perturbed: Option<&Array2<f64>>,
) -> Result<(f64, f64, Vec<f64>), DdpgError> {
    if states.nrows() == 0 {
        return Err(DdpgError::EmptyBatch);
    }
    let mut tape = Tape::new();
    let avars = actor.net.register(&mut tape);
    let cvars = critic.net.register_frozen(&mut tape);
    let s = tape.constant(states.clone());
    let mu = actor.forward_on(&mut tape, &avars, s)?;
    let q = critic.forward_on(&mut tape, &cvars, s, mu)?;
    let mut objective = tape.mean(q);
    let mut reg_value = 0.0;
    if let Some(st) = perturbed {
        let xt = tape.constant(st.clone());
        let mu_t = actor.forward_on(&mut tape, &avars, xt)?;
        let d = tape.sub(mu, mu_t)?;
        let d2 = tape.square(d);
        let per_row = tape.sum_cols(d2);
        let reg = tape.mean(per_row);
        reg_value = tape.scalar_value(reg)?;
        let scaled = tape.scale(reg, -lambda);
        objective = tape.add(objective, scaled)?;
    }
    let grads = tape.backward(objective)?;
    Ok((tape.scalar_value(objective)?, reg_value, actor.net.flat_grad(&grads, &avars)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(format!("unknown optimizer `{other}` (expected sgd or adam)")),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

/// First-order step rule over a flat parameter vector.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, n: usize) -> Self {
        Self {
            kind,
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Moves `params` along `grad` (ascent) or against it (descent).
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], ascend: bool) {
        let sign = if ascend { 1.0 } else { -1.0 };
        match self.kind {
            OptimizerKind::Sgd => {
                params.iter_mut().zip(grad).for_each(|(p, g)| *p += sign * self.lr * g);
            }
            OptimizerKind::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                self.t += 1;
                let c1 = 1.0 - B1.powi(self.t);
                let c2 = 1.0 - B2.powi(self.t);
                for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
                    *m = B1 * *m + (1.0 - B1) * g;
                    *v = B2 * *v + (1.0 - B2) * g * g;
                    *p += sign * self.lr * (*m / c1) / ((*v / c2).sqrt() + 1e-8);
                }
            }
        }
    }
}

/// Per-update diagnostics.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    /// Loss (critic) or objective (actor) before the step.
    pub value: f64,
    pub reg_value: f64,
    pub adv_div: f64,
    pub applied: bool,
}

/// One gradient step on the critic loss; in `sr-c` mode with `λ > 0` each
/// sampled state is first paired with its worst-case perturbation.
pub fn critic_update(
    critic: &mut QNet,
    opt: &mut Optimizer,
    batch: &MiniBatch,
    targets: &[f64],
    cfg: &DdpgConfig,
    adversary_rng: &mut Rng,
) -> Result<StepStats, DdpgError> {
    let mut stats = StepStats::default();
    let perturbed = if cfg.variant == Variant::SrC && cfg.lambda_s > 0.0 {
        let obj = QDifferenceObjective::new(critic, &batch.states, &batch.actions)?;
        let found = projected_ascent(&obj, &batch.states, &cfg.ball, &cfg.adversary, adversary_rng)?;
        stats.adv_div = found.mean_value();
        Some(found.states)
    } else {
        None
    };
    let (loss, reg, grad) = critic_loss_grad(critic, batch, targets, cfg.lambda_s, perturbed.as_ref())?;
    stats.value = loss;
    stats.reg_value = reg;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        log::warn!("non-finite critic loss, skipping step");
        return Ok(stats);
    }
    let mut params = critic.net.params();
    opt.step(&mut params, &grad, false);
    critic.net.set_params(&params)?;
    stats.applied = true;
    Ok(stats)
}

/// One gradient ascent step on the actor objective; in `sr-a` mode with
/// `λ > 0` each sampled state is first paired with its worst-case perturbation.
pub fn actor_update(
    actor: &mut DeterministicPolicy,
    critic: &QNet,
    opt: &mut Optimizer,
    batch: &MiniBatch,
    cfg: &DdpgConfig,
    adversary_rng: &mut Rng,
) -> Result<StepStats, DdpgError> {
    let mut stats = StepStats::default();
    let perturbed = if cfg.variant == Variant::SrA && cfg.lambda_s > 0.0 {
        let obj = SquaredActionObjective::new(actor, &batch.states)?;
        let found = projected_ascent(&obj, &batch.states, &cfg.ball, &cfg.adversary, adversary_rng)?;
        stats.adv_div = found.mean_value();
        Some(found.states)
    } else {
        None
    };
    let (objective, reg, grad) = actor_objective_grad(actor, critic, &batch.states, cfg.lambda_s, perturbed.as_ref())?;
    stats.value = objective;
    stats.reg_value = reg;
    if !objective.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        log::warn!("non-finite actor objective, skipping step");
        return Ok(stats);
    }
    let mut params = actor.net.params();
    opt.step(&mut params, &grad, true);
    actor.net.set_params(&params)?;
    stats.applied = true;
    Ok(stats)
}

/// `target ← τ·source + (1 − τ)·target`, elementwise.
pub fn polyak(target: &mut Mlp, source: &Mlp, tau: f64) -> Result<(), DdpgError> {
    if target.sizes() != source.sizes() {
        return Err(DdpgError::InvalidConfig("target and source architectures differ".into()));
    }
    for (t, s) in target.layers_mut().iter_mut().zip(source.layers()) {
        t.weight.zip_mut_with(&s.weight, |a, b| *a = tau * b + (1.0 - tau) * *a);
        t.bias.zip_mut_with(&s.bias, |a, b| *a = tau * b + (1.0 - tau) * *a);
    }
    Ok(())
}

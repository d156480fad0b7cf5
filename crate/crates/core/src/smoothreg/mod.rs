//! Adversarial smoothness regularization.
//!
//! For each state the search in [`adversary`] finds a perturbed state inside
//! an ℓ∞ ball that maximizes an output discrepancy; [`regularizer`] then
//! averages that discrepancy over a batch and differentiates it with respect
//! to the network parameters, holding the perturbed states fixed.

pub mod adversary;
pub mod regularizer;

pub use adversary::{
    inner_max_deterministic, inner_max_policy, inner_max_q, projected_ascent, AdversaryConfig, AdversaryInit,
    AscentRule, JeffreyObjective, PerturbationObjective, Perturbed, QDifferenceObjective, SquaredActionObjective,
};
pub use regularizer::{
    reg_deterministic, reg_deterministic_at, reg_policy, reg_policy_at, reg_policy_value_at, reg_q, reg_q_at,
    Regularization,
};

use ndarray::Array2;

use crate::autodiff::AutodiffError;
use crate::policy::PolicyError;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SmoothRegError {
    #[error("empty state batch")]
    EmptyBatch,
    #[error("perturbation radius must be finite and non-negative, got {0}")]
    InvalidRadius(f64),
    #[error("invalid adversary configuration: {0}")]
    InvalidConfig(String),
    #[error("{what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Closed ℓ∞ ball `{δ : ‖δ‖∞ ≤ ε}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerturbationBall {
    epsilon: f64,
}

impl PerturbationBall {
    /// `ε = 0` is accepted and makes every search return the state itself.
    pub fn new(epsilon: f64) -> Result<Self, SmoothRegError> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(SmoothRegError::InvalidRadius(epsilon));
        }
        Ok(Self { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn contains(&self, delta: &[f64]) -> bool {
        delta.iter().all(|d| d.abs() <= self.epsilon)
    }

    pub fn project(&self, delta: &[f64]) -> Vec<f64> {
        project_linf(delta, self.epsilon)
    }

    pub fn project_in_place(&self, delta: &mut Array2<f64>) {
        let e = self.epsilon;
        delta.mapv_inplace(|d| d.clamp(-e, e));
    }
}

/// Coordinatewise clamp onto `[-eps, eps]`.
pub fn project_linf(delta: &[f64], eps: f64) -> Vec<f64> {
    delta.iter().map(|d| d.clamp(-eps, eps)).collect()
}

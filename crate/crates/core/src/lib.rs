//! Adversarial smoothness regularization for deep policy-gradient methods.
//!
//! The regularizer penalizes the worst-case change of a policy (or critic)
//! output inside a small ℓ∞ ball around each visited state. It is applied to
//! TRPO (Jeffrey divergence between Gaussian policies) and to DDPG (squared
//! action difference on the actor, or squared value difference on the critic).
//!
//! Modules, bottom-up:
//! - [`autodiff`]: reverse-mode tape and the [`autodiff::Mlp`] network.
//! - [`policy`]: Gaussian and deterministic policies, Q-network, divergences, value baseline.
//! - [`smoothreg`]: ℓ∞ ball, projected-gradient adversary, regularizers.
//! - [`envs`]: point-mass and pendulum environments, observation disturbances.
//! - [`trpo`], [`ddpg`]: trainers.
//! - [`harness`]: configs, multi-seed runs, CSV outputs, robustness sweeps.

pub mod autodiff;
pub mod ddpg;
pub mod envs;
pub mod harness;
pub mod policy;
pub mod rng;
pub mod smoothreg;
pub mod trpo;

//! Policy and value heads.

mod baseline;
mod deterministic;
mod gaussian;

pub use baseline::ValueBaseline;
pub use deterministic::{DeterministicPolicy, QNet};
pub use gaussian::{jeffrey, jeffrey_on, kl_gaussian, kl_on, log_prob_on, DiagGaussian, GaussianPolicy};

use crate::autodiff::AutodiffError;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dim {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("standard deviation must be positive, got {0}")]
    NonPositiveStd(f64),
    #[error("empty batch")]
    EmptyBatch,
    #[error("baseline normal equations stayed singular after ridge retries")]
    Singular,
    #[error("malformed policy file: {0}")]
    Format(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// A trained policy as loaded for evaluation.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyPolicy {
    Gaussian(GaussianPolicy),
    Deterministic(DeterministicPolicy),
}

impl AnyPolicy {
    pub fn state_dim(&self) -> usize {
        match self {
            AnyPolicy::Gaussian(p) => p.state_dim(),
            AnyPolicy::Deterministic(p) => p.state_dim(),
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            AnyPolicy::Gaussian(p) => p.action_dim(),
            AnyPolicy::Deterministic(p) => p.action_dim(),
        }
    }

    /// Mean action for Gaussian policies, clamped output for deterministic ones.
    pub fn act(&self, s: &[f64]) -> Result<Vec<f64>, PolicyError> {
        match self {
            AnyPolicy::Gaussian(p) => p.mean_action(s),
            AnyPolicy::Deterministic(p) => p.act(s),
        }
    }

    pub fn to_text(&self) -> String {
        match self {
            AnyPolicy::Gaussian(p) => p.to_text(),
            AnyPolicy::Deterministic(p) if p.squash => format!("{}squash\n", p.net.to_text()),
            AnyPolicy::Deterministic(p) => p.net.to_text(),
        }
    }

    /// A trailing `logstd` line marks a Gaussian policy; otherwise the file is
    /// a network read as a deterministic actor with the given bounds, squashed
    /// when a `squash` line is present.
    pub fn from_text(text: &str, bounds: crate::envs::ActionBounds) -> Result<Self, PolicyError> {
        if text.lines().any(|l| l.trim_start().starts_with("logstd")) {
            Ok(AnyPolicy::Gaussian(GaussianPolicy::from_text(text)?))
        } else {
            let squash = text.lines().any(|l| l.trim() == "squash");
            let body: String = text
                .lines()
                .filter(|l| l.trim() != "squash")
                .flat_map(|l| [l, "\n"])
                .collect();
            let net = crate::autodiff::Mlp::from_text(&body)?;
            let p = if squash {
                DeterministicPolicy::squashed(net, bounds)?
            } else {
                DeterministicPolicy::new(net, bounds)?
            };
            Ok(AnyPolicy::Deterministic(p))
        }
    }

    /// Reads only the network input dimension, for picking an environment.
    pub fn peek_state_dim(text: &str) -> Result<usize, PolicyError> {
        let header = text
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty())
            .ok_or_else(|| PolicyError::Format("empty file".into()))?;
        header
            .split_whitespace()
            .nth(2)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| PolicyError::Format(format!("bad header `{header}`")))
    }
}

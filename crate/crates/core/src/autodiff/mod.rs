//! Reverse-mode differentiation for small dense networks.
//!
//! The [`Tape`] records matrix-valued nodes; [`Mlp`] builds its forward pass on
//! a tape so the same recording yields gradients with respect to parameters
//! (policy and critic updates) and with respect to inputs (the perturbation
//! search in [`crate::smoothreg`]).

mod check;
mod mlp;
mod tape;

pub use check::{central_difference, finite_diff_check};
pub use mlp::{Layer, Mlp, MlpVars};
pub use tape::{Gradients, Tape, Var};

pub(crate) use mlp::{join_exact, next_nonempty, parse_floats};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("expected a scalar (1x1) node, got shape {shape:?}")]
    NonScalar { shape: (usize, usize) },
    #[error("input has dimension {got}, network expects {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("parameter vector has length {got}, network has {expected}")]
    ParamCount { expected: usize, got: usize },
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("malformed network text: {0}")]
    Format(String),
}

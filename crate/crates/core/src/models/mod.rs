//! Parameterized conditional densities: an additive Gaussian likelihood
//! `p(x|z)` and an amortized Householder–Sylvester flow `q(z|x)`.
//!
//! Models keep their parameters as flat vectors; graph builders take the
//! matching parameter nodes so the same model can be differentiated with
//! respect to parameters, data or seeds.

mod checkpoint;
mod flow;
mod gaussian;
mod mlp;

pub use checkpoint::{Checkpoint, NamedParam};
pub use flow::{std_normal_log_density, FlowConditional, FlowConfig, FlowParams, FlowPass, LayerParams};
pub use gaussian::GaussianConditional;
pub use mlp::{Activation, Mlp};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("expected {expected} parameters, got {got}")]
    ParamCount { expected: usize, got: usize },
    #[error("flow Jacobian is singular")]
    Singular,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Name and shape of a contiguous slice of a parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamBlock {
    pub fn new(name: String, shape: Vec<usize>) -> Self {
        Self { name, shape }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

//! Dense tensors, reverse-mode gradients, optimizers and a full-batch trainer.

mod graph;
mod metrics;
mod optim;
mod params;
mod tape;
mod tensor;
mod train;

pub use graph::Adjacency;
pub use metrics::{mse, nrmse, nrmse_varying};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{Gradients, ParamId, ParamStore};
pub use tape::{Activation, Tape, Var};
pub use tensor::Tensor;
pub use train::{train, write_loss_csv, LossCurves, Objective, TrainConfig};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: String,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("truth is constant in output dimension {dim}")]
    DegenerateRange { dim: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("parameter error: {0}")]
    Param(String),
}

impl NnError {
    pub(crate) fn shape(op: &str, left: (usize, usize), right: (usize, usize)) -> Self {
        NnError::ShapeMismatch {
            op: op.to_string(),
            left,
            right,
        }
    }
}

//! Minimal differentiable compute for the training stack.
//!
//! Dense tensors, a tape-style autodiff graph covering exactly the ops the
//! models need (matmul, gates, embedding lookup, dropout, fo-pooling,
//! concat-pooling, smoothed cross-entropy, MSE), decoupled-weight-decay Adam,
//! a one-cycle schedule, a binary checkpoint container, and a central
//! finite-difference gradient checker.

mod checkpoint;
mod gradcheck;
mod graph;
mod loss;
mod optim;
mod qrnn;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, CHECKPOINT_MAGIC};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Graph, NodeId};
pub use loss::{label_smoothed_ce, mse_loss, softmax, SmoothedCeConfig};
pub use optim::{adamw_step, one_cycle, AdamWConfig, OneCycleConfig};
pub use qrnn::{qrnn_forward, qrnn_layer, QrnnGateNodes, QrnnLayerConfig, QrnnRuntime, QrnnWeightSet};
pub use tensor::{ParamTensor, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: &'static str, details: String },
    #[error("non-finite values in {what}")]
    NonFinite { what: String },
    #[error("no forward pass recorded")]
    NoForwardRecorded,
    #[error("non-finite gradient for parameter `{name}`")]
    NonFiniteGradient { name: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl NeuralError {
    pub(crate) fn shape(op: &'static str, details: impl Into<String>) -> Self {
        Self::ShapeMismatch {
            op,
            details: details.into(),
        }
    }
}

//! Minimal reverse-mode automatic differentiation for the fixed agent
//! architecture: linear layers, tanh, embeddings, vanilla RNN cells,
//! softmax and categorical log-probabilities, plus RMSProp and clipping.
//!
//! Parameters live outside the tape in [`ParamSet`]s; a [`Tape`] borrows one
//! or more sets ("groups") and writes gradients into matching [`GradSet`]s.

mod checkpoint;
pub mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use optim::{clip_gradients, ClipMode, RmsPropConfig, RmsPropState};
pub use tape::{log_softmax, softmax, NodeId, ParamRef, RnnWeights, Tape};
pub use tensor::{GradSet, ParamId, ParamSet, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch (expected {expected}, got {got})")]
    ShapeMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("backward requires a scalar loss, got length {len}")]
    NotScalar { len: usize },
    #[error("backward already ran on this tape")]
    AlreadyBackpropagated,
    #[error("tape was created without gradient recording")]
    GradDisabled,
}

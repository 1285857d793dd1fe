//! Minimal tensor and network core: forward, backward, loss and Adam.

mod adam;
mod network;
pub mod ops;
mod tensor;

use thiserror::Error;

pub use adam::{AdamConfig, AdamState};
pub use network::{infer_shapes, param_shapes, LayerSpec, Network, Trace};
pub use ops::{bce_loss, Activation};
pub use tensor::{Real, Tensor};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("input too small: {0}")]
    InputTooSmall(String),
    #[error("backward called without a complete forward trace")]
    MissingCache,
    #[error("non-finite value in tensor")]
    NonFinite,
}

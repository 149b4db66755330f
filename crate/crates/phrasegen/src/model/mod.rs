//! The graph VAE and its supporting machinery: a small reverse-mode
//! autodiff tape, parameter storage, model wiring, and checkpoints.

pub mod autograd;
pub mod checkpoint;
pub mod input;
pub mod params;
pub mod spec;
pub mod vae;

pub use checkpoint::Checkpoint;
pub use input::GraphInput;
pub use params::{ParamGrads, ParamSet};
pub use spec::{GraphSpec, ModelKind};
pub use vae::{
    reparameterize, rgcn_layer, DecodeOutput, GraphVae, LatentBundle, LossBreakdown, Reconstruction,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("edge index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("sigma must be strictly positive")]
    NonPositiveSigma,
    #[error("checkpoint does not match requested model: {0}")]
    SpecMismatch(String),
    #[error("checkpoint I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint data: {0}")]
    Format(String),
}

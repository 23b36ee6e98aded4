//! Reverse-mode automatic differentiation over dense row-major matrices.
//!
//! A [`Tape`] records operations eagerly; [`Tape::backward`] walks it in
//! reverse. Parameters live in a [`ParamStore`] and are bound into a tape per
//! forward pass.

mod gradcheck;
pub mod nn;
pub mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use nn::{
    gru_cell, kl_diag_gaussians, kl_diag_gaussians_rows, kl_diag_gaussians_value, reparameterized_sample, GruParams,
    Linear,
};
pub use optim::{adam_step, clip_grad_norm, AdamConfig, AdamState};
pub use params::{Checkpoint, NamedArray, ParamId, ParamStore, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use tape::{sigmoid, Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("duplicate parameter name {0}")]
    DuplicateParam(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

//! Minimal dense-tensor numerics with reverse-mode automatic differentiation.
//!
//! Values live on a [`Tape`]; every operation appends a node holding its
//! output and enough saved state to run the backward rule. Trainable weights
//! live in a [`ParamStore`] and enter a tape through [`Tape::param`], so many
//! independent tapes can read the same store while a single writer applies
//! [`adam_step`] between steps.

mod error;
pub mod gradcheck;
mod init;
mod kernels;
mod ops;
mod optim;
mod params;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use init::{seeded_init, InitScheme};
pub use ops::{Attrs, OpKind};
pub use optim::{adam_step, clip_global_norm, AdamConfig, OptimizerState, StepReport};
pub use params::{ParamGrads, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var, MASK_FILL};
pub use tensor::Tensor;

//! Small feed-forward networks, reverse-mode differentiation, Adam and input
//! pre-scaling.

mod adam;
mod mlp;
mod prescale;
mod tape;
mod tensor;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use mlp::{
    elu, forward_mlp, init_mlp, Activation, Mlp, MlpSpec, OutputActivation, ParamEntry, ParamStore,
};
pub use prescale::{prescale, Prescaler};
pub use tape::{grad_scalar, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NnError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("loss must be a 1x1 scalar, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("non-finite gradient entry at parameter index {index}")]
    NonFiniteGradient { index: usize },
    #[error("invalid prescaler: {0}")]
    InvalidPrescaler(String),
}

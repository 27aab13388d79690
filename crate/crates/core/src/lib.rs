//! Deep BSDE pricing of European options under differential borrowing and
//! lending rates.
//!
//! The crate is generic over the floating-point [`Scalar`]; the aliases at
//! the root fix it to `f64`, which is what the CLI and experiments use.

// `!(a < b)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod experiment;
pub mod market;
pub mod nn;
pub mod pde;
pub mod solver;
pub mod scalar;

pub use scalar::Scalar;

pub type ParamStore64 = nn::ParamStore<f64>;
pub type FbsdeProblem64 = market::FbsdeProblem<f64>;
pub type PathBatch64 = market::PathBatch<f64>;

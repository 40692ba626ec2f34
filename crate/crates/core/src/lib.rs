//! Tensor-factorized linear maps (CP, Tucker, tensor train) and recurrent
//! networks built from them.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense tensors, mode products and the row/column ↔ multi-index bijections;
//! - [`factorized`]: [`FactorizedLinear`], a `y = W x + b` map whose `W` is stored
//!   as CP factors, a Tucker core with factors, tensor-train cores, or densely;
//! - [`cells`]: Elman, LSTM and GRU cells whose projections are factorized operators;
//! - [`model`]: the piano-roll next-step model (input projection, GRU, sigmoid output)
//!   with backpropagation through time;
//! - [`data`], [`train`], [`metrics`]: dataset handling, Adam training with
//!   gradient clipping and grid search, NLL/frame-accuracy evaluation;
//! - [`config`]: run configuration shared with the command-line driver.

pub mod cells;
pub mod config;
pub mod data;
pub mod error;
pub mod factorized;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use factorized::{FactorizedLinear, Kind, TensorizedShape};
pub use tensor::{DenseTensor, Matrix, Shape};

/// Number of piano keys in a piano-roll frame.
pub const NOTES: usize = 88;

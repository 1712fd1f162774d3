//! Checkpoint delta analysis, translation metrics and a small two-stage
//! adaptation lab.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below pin the common choices.

pub mod delta;
pub mod metrics;
pub mod report;
pub mod scalar;
pub mod stats;
pub mod taxonomy;
pub mod tensor_store;
pub mod toy;

pub use scalar::{Element, Scalar};
pub use tensor_store::{load_checkpoint, save_checkpoint, Checkpoint, DType, StoreError, TensorRecord};

pub type ToyModelF64 = toy::ToyModel<f64>;
pub type ToyModelF32 = toy::ToyModel<f32>;

//! A compact reverse-mode automatic differentiation engine.
//!
//! Values live on a [`Graph`] tape; learnable tensors live in a
//! [`ParamStore`] and are bound to a graph with [`Graph::param`]. Kernels are
//! generic over [`Float`] so the same model code runs in `f32` for training
//! and `f64` for finite-difference verification.

pub mod check;
mod element;
mod error;
mod graph;
pub mod ops;
pub mod optim;
mod params;
mod tensor;

pub use element::{lit, Float};
pub use error::{Result, TensorError};
pub use graph::{BackwardFn, Gradients, Graph, Var};
pub use ops::conv::ConvOptions;
pub use ops::resample::Align;
pub use optim::{Adam, AdamConfig};
pub use params::{Init, ParamEntry, ParamId, ParamStore};
pub use tensor::{numel, Tensor};

//! A small reverse-mode automatic differentiation tape over dense `f64` tensors.
//!
//! Every forward pass records onto a fresh [`Graph`]; parameters live in a
//! [`ParamStore`] and enter the graph through [`Graph::param`]. Frozen parameters
//! (registered with `trainable = false`) become constants and never receive a gradient.
//!
//! Layouts: images and feature maps are `[B, C, H, W]`, token sequences are `[B, L, C]`.

pub mod gradcheck;
mod graph;
pub mod ops;
pub mod optim;
mod params;
mod tensor;

pub use graph::{BackwardArgs, BackwardFn, Grads, Graph, Mode, Var};
pub use ops::norm::BatchNormParams;
pub use params::{Param, ParamId, ParamStore};
pub use tensor::Tensor;

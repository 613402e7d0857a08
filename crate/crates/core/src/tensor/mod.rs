//! Minimal dense-tensor arithmetic with reverse-mode differentiation.
//!
//! Row-major contiguous storage, no strided views. Training paths run with
//! `f32`; verification paths (finite-difference gradient checks, CCA) run
//! with `f64` through the same generic code.

mod graph;
mod kernels;
mod params;
mod scalar;

pub use graph::{Graph, TensorRef};
pub use kernels::{conv1d_out_len, gelu, gelu_derivative};
pub use params::{BoundParams, Param, ParamStore};
pub use scalar::Scalar;

//! Minimal reverse-mode automatic differentiation over flat `f64` tensors.
//!
//! A [`Graph`] is built fresh for each evaluation. Ops return [`Var`] handles
//! and check their output for non-finite values; [`Graph::backward`] runs one
//! reverse sweep and hands back [`Gradients`] for the leaves.
//!
//! ```
//! use adcore::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.input(Tensor::vector(vec![3.0]));
//! let y = g.square(x).unwrap();
//! let s = g.sum(y).unwrap();
//! assert_eq!(g.value(s).item().unwrap(), 9.0);
//! let grads = g.backward(s).unwrap();
//! assert_eq!(grads.wrt(x).data(), &[6.0]);
//! ```

mod adam;
mod graph;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use graph::{sigmoid, silu, smooth_max, smooth_min, softplus, Gradients, Graph, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum AdError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward needs a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("index {index} out of range for length {len} in {op}")]
    IndexOutOfRange { op: &'static str, index: usize, len: usize },
    #[error("graph was built without gradient recording")]
    NoTape,
    #[error("non-finite gradient in parameter block {block}")]
    NonFiniteGradient { block: usize },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
}

//! Dense `f64` tensors with a reverse-mode differentiation tape.
//!
//! Values live in plain [`Tensor`]s. To differentiate, attach them to a
//! [`Tape`] as leaves, compose operations through [`Var`], and call
//! [`Tape::backward`] on a scalar result:
//!
//! ```
//! use gsdyn_autodiff::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let y = x.square().unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).item(), 6.0);
//! ```
//!
//! Fused kernels with hand-written adjoints plug in through [`CustomOp`].

pub mod check;
mod error;
pub mod linalg;
mod op;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use op::{sigmoid, softplus, CustomOp, Op};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{broadcast_shape, Tensor};

/// Evaluate `op` on detached tensors.
pub fn forward_op(op: &Op, inputs: &[&Tensor]) -> Result<Tensor> {
    op.forward(inputs)
}

/// Polar decomposition `F = R S` of each trailing 3×3 block of `f`.
///
/// Fails with [`TensorError::InvertedElement`] when a block has
/// `det(F) ≤ 0`.
pub fn polar_decompose(f: &Tensor) -> Result<(Tensor, Tensor)> {
    let r = Op::PolarRotation.forward(&[f])?;
    let rt = Op::Transpose.forward(&[&r])?;
    let s = Op::MatMul.forward(&[&rt, f])?;
    Ok((r, s))
}

//! Dense `f64` tensors and a tape-based reverse-mode differentiation engine.
//!
//! A [`Tape`] records every operation applied to its [`Var`] handles. Leaves
//! created with [`Tape::param`] are grad-flagged; leaves created with
//! [`Tape::constant`] are not, and operations whose inputs are all untracked
//! produce untracked outputs. [`Tape::backward`] walks the recording in
//! reverse and returns one gradient per grad-flagged leaf.
//!
//! ```
//! use bloinst_autodiff::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.param(Tensor::from_vec(vec![2.0]));
//! let y = x.square().sum();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[4.0]);
//! ```
//!
//! Tapes are meant to live for one forward/backward pass and are confined to
//! a single thread; plain [`Tensor`] values are `Send + Sync`.

mod error;
pub mod gradcheck;
mod ops;
mod tape;
mod tensor;

pub use error::AdError;
pub use gradcheck::{finite_diff_grad, relative_error};
pub use ops::{log_sigmoid, sigmoid};
pub use tape::{Entry, Gradients, NodeId, Tape, Var};
pub use tensor::Tensor;

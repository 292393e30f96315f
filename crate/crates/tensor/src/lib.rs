//! A small, shape-checked tensor engine with tape-based reverse-mode
//! differentiation.
//!
//! The engine is deliberately narrow: it knows exactly the layers needed to
//! build a convolutional encoder/decoder pair and a patch classifier, plus the
//! per-channel statistics used for instance normalization. Everything is
//! generic over [`Scalar`] so the same graph can be run in `f32` for training
//! and in `f64` for finite-difference gradient checks.
//!
//! ```
//! use umt_tensor::{Graph, Tensor};
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.leaf(Tensor::from_vec(vec![3], vec![1.0, -2.0, 3.0]).unwrap(), true);
//! let sq = g.square(x);
//! let loss = g.sum(sq);
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap(), &[2.0, -4.0, 6.0]);
//! ```

mod adam;
mod checkpoint;
mod error;
pub mod gradcheck;
mod graph;
mod kernels;
mod param;
mod scalar;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointEntry,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use error::{NnError, Result};
pub use graph::{Graph, Padding, Var};
pub use param::{Bound, ParamId, ParamStore, Parameter};
pub use scalar::Scalar;
pub use tensor::Tensor;

//! Building blocks for spatiotemporal action recognition networks.
//!
//! The crate bundles a small reverse-mode tensor engine, the STM block
//! family (channel-wise spatiotemporal module and channel-wise motion
//! module) on a ResNet-style backbone, an exact analytic cost model, a
//! synthetic order-sensitive video benchmark, and the training, evaluation
//! and audit routines used by the `stm` command line tool.
//!
//! All numerics are generic over the scalar type via [`Element`];
//! `f32` is the training dtype, `f64` backs the gradient audits.

pub mod block;
pub mod checkpoint;
pub mod cmm;
pub mod configfile;
pub mod cost;
pub mod cstm;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod init;
pub mod graph;
pub mod network;
pub mod norm;
pub mod ops;
pub mod rng;
pub mod sampling;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use ops::{ConvSpec, KernelSize};
pub use scalar::{Dtype, Element};
pub use tensor::{Shape, Tensor};

/// Dense tensor in the default training precision.
pub type Tensor32 = Tensor<f32>;
/// Dense tensor in audit precision.
pub type Tensor64 = Tensor<f64>;

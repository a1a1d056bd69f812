//! Poincare ResNet building blocks.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] and [`tape`]: dense tensors and a reverse-mode tape whose
//!   nodes are fused hyperbolic primitives with hand-written backward rules;
//! * [`gyro`]: Mobius addition, scalar multiplication, gyration, distance,
//!   exponential and logarithmic maps, parallel transport and projection;
//! * [`layers`]: Poincare MLR, fully connected layer, beta-concatenation,
//!   convolution, ReLU, midpoint and Frechet means, batch normalization and
//!   the residual block;
//! * [`models`]: initialization schemes and ResNet/ConvNet assembly;
//! * [`training`]: loss, optimizers, CIFAR-10 ingestion, checkpoints and
//!   the training loop;
//! * [`verify`]: gradient certification and the benchmark harnesses.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]
#![cfg_attr(test, allow(clippy::excessive_precision))]

pub mod error;
pub mod gyro;
pub mod layers;
pub mod models;
pub mod tape;
pub mod tensor;
pub mod training;
pub mod verify;

use std::sync::OnceLock;

pub use error::{Error, Result};
pub use gyro::{BallTensor, Curvature, TangentTensor};
pub use tape::{GradMap, Mode, NodeId, Tape};
pub use tensor::Tensor;

/// Whether `RESNET_DEBUG_CHECKS=1` is set; read once per process.
pub fn debug_checks_enabled() -> bool {
    static FLAG: OnceLock<bool> = OnceLock::new();
    *FLAG.get_or_init(|| std::env::var("RESNET_DEBUG_CHECKS").is_ok_and(|v| v == "1"))
}

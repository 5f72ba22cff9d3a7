//! Spiking neural network engine with temporal-channel joint attention.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: dense tensors with a reverse-mode tape
//! - [`neuron`]: LIF dynamics and surrogate gradients
//! - [`attention`]: squeeze, temporal/channel local attention, fusion
//! - [`arch`] and [`network`]: architecture strings and layer stacks
//! - [`data`]: event streams, frame integration, augmentation
//! - [`train`]: loss, optimisers, training loop, checkpoints

pub mod arch;
pub mod attention;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod network;
pub mod neuron;
pub mod report;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, ErrorKind, Result};
pub use scalar::{Precision, Scalar};
pub use tensor::Tensor;

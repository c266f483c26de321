//! Core library for a 3D convolutional encoder/decoder that predicts
//! per-pixel saliency from short clips of three frames.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod net;
pub mod ops;
pub mod optim;
pub mod persist;
pub mod tensor5;

pub use error::{Error, Result};

//! Image reconstruction from voxel responses through convolutional-network
//! features.
//!
//! The pipeline: simulate or load voxel responses ([`synth`]), train one
//! sparse linear decoder per network feature ([`decoder`], backed by
//! [`sparse`]), predict a feature vector for a held-out response and invert
//! it to an image by regularized momentum gradient descent ([`inversion`]),
//! then score reconstructions ([`metrics`]).

pub mod convnet;
pub mod decoder;
pub mod error;
pub mod inversion;
pub mod io;
pub mod metrics;
pub mod sparse;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;

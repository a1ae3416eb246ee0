//! Partitioned-latent variational autoencoders trained with gated
//! backpropagation, plus the dSprites tooling and DCI evaluation around them.

// lets the shared test oracle in tests/common use the public crate path
extern crate self as gated_vae;

pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod reporting;
pub mod tensor;

pub use error::{Error, Result};

#[cfg(test)]
#[path = "../tests/common/gradcheck.rs"]
pub(crate) mod gradcheck;

//! Lossy image compression as a preprocessing defense against
//! gradient-based adversarial attacks, evaluated at desk scale.
//!
//! The crate is organized around a small reverse-mode autodiff engine
//! ([`tensor`]); classifiers ([`nn`]), a differentiable/bit-exact JPEG
//! codec ([`jpeg`]) and a trainable quantized-latent codec ([`learned`])
//! are built on top of it, attacked by [`attack`] and composed/scored
//! by [`eval`].

pub mod attack;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod jpeg;
pub mod learned;
pub mod nn;
pub mod rng;
pub mod tensor;

pub use error::{CoreError, Result};
pub use tensor::{ImageBatch, Tensor};

//! Parametric image-noise synthesis and quantification.
//!
//! This crate is `no_std` (it needs `alloc`). Everything in it is a pure
//! function of its inputs and an explicit [`rng::RngStream`], so results are
//! reproducible bit-for-bit across runs, threads and platforms. Transcendental
//! functions come from `libm` rather than the platform math library for the
//! same reason.
//!
//! Layout:
//!
//! * [`rng`], [`tensor`], [`stats`], [`linalg`]: numerical foundation.
//! * [`engine`]: the six noise primitives and their sequential composition.
//! * [`procedural`]: seeded clean-image textures, so nothing needs external data.
//! * [`baseline`]: closed-form per-primitive estimators.
//! * [`model`]: the contrastive encoder, quantification head and training loops.
//! * [`analysis`]: regression metrics, MMD, KDE, t-tests, SSIM, Shapley values and friends.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod baseline;
pub mod engine;
mod error;
pub mod linalg;
pub(crate) mod math;
pub mod model;
pub mod procedural;
pub mod rng;
pub mod stats;
pub mod tensor;

pub use engine::{NoiseSample, NoiseStrengths, Primitive};
pub use error::{Error, Result};
pub use rng::RngStream;
pub use tensor::ImageTensor;

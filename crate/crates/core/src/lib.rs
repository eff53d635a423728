//! Conditional score-based emulation of chaotic dynamical systems with
//! discriminator guidance.

pub mod autodiff;
pub mod container;
pub mod diffusion;
pub mod discriminator;
pub mod error;
pub mod field;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod sampler;
pub mod spectral;
pub mod training;

pub use error::{Error, Result};

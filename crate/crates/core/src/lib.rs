//! Particle filtering, likelihood estimation and PMMH calibration for linear
//! Gaussian diffusions observed through a marked Cox process.
//!
//! The central object is the Poisson estimator of `exp(-∫λ(X_s) ds)` over a
//! short segment, which turns the intractable continuous-time weight into an
//! unbiased random weight. Around it sit exact SDE transition samplers,
//! observation models (including a defocus-aware Born–Wolf PSF), the two
//! particle filters, closed-form oracles for a 1D Brownian benchmark, a
//! thinning simulator and an adaptive PMMH sampler.

pub mod calibration;
pub mod datagen;
pub mod error;
pub mod estimator;
pub mod filters;
pub mod model;
pub mod observation;
pub mod oracles;
pub mod rng;
pub mod sde;
pub mod special;

pub use error::{Error, Result};
pub use model::{CoxModel, InitialLaw};

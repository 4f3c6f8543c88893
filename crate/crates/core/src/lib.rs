//! Spectrum-map estimation from energy-limited UAV measurements.
//!
//! * [`rf_env`] synthesises ground-truth SNR maps.
//! * [`mission`] flies lawnmower sweeps under an energy budget.
//! * [`nn`] is the dense-network substrate (gradients, Adam, checkpoints).
//! * [`diffusion`] trains a conditional denoising-diffusion map estimator.
//! * [`baselines`] holds interpolation and recurrent comparison estimators.
//! * [`policy`] optimises the estimation/transmission energy split.
//! * [`experiments`] drives reproducible runs and writes their artifacts.

pub mod baselines;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod experiments;
pub mod export;
pub mod mission;
pub mod nn;
pub mod policy;
pub mod rf_env;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};

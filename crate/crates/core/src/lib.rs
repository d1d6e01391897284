//! Denoising toolkit for 350-channel short-wave infrared reflectance spectra.
//!
//! The crate covers the whole pipeline at desk scale:
//!
//! - [`spectral`]: wavelength grid, spectra, datasets and their CSV layout
//! - [`synthetic`]: labelled synthetic mineral and bland spectra grouped into "images"
//! - [`preprocess`]: bad-value and artifact-band imputation, composite noise injection
//! - [`nn`]: a from-scratch 1D convolutional U-Net with Adam training and checkpoints
//! - [`baselines`]: Savitzky-Golay filtering and a simplified CoTCAT-style smoother
//! - [`eval`]: reconstruction MSE, relative classification metrics, ratioing and band depths

pub mod baselines;
pub mod error;
pub mod eval;
pub mod nn;
pub mod preprocess;
pub mod rng;
pub mod spectral;
pub mod synthetic;

pub use error::{Error, Result};

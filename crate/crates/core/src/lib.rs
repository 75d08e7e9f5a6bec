//! Speech enhancement by regression of clean log-power spectra from noisy ones.
//!
//! The crate covers the whole chain: WAV I/O, STFT analysis and overlap-add
//! synthesis, multi-noise corruption, noise power tracking, psychoacoustic
//! frequency weighting, a feedforward network trained with plain minibatch SGD,
//! feature assembly and inference, a Log-MMSE baseline, and objective metrics.

pub mod audio;
pub mod dsp;
mod error;
pub mod metrics;
pub mod mixer;
pub mod mlp;
pub mod noise;
pub mod pipeline;
pub mod psycho;
pub mod synth;

pub use error::{Error, Result};

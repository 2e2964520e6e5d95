//! Conditional score-based diffusion for speech enhancement and
//! prompt-controlled speech editing.
//!
//! The crate is organised bottom-up:
//!
//! - [`dsp`]: waveforms, WAV I/O and the hop-320 STFT/iSTFT pair.
//! - [`sde`]: the forward SDE, its closed-form perturbation kernel and sampling.
//! - [`solver`]: reverse-time predictor-corrector integration.
//! - [`score`]: analytic Gaussian scores and the trainable conditional network.
//! - [`conditioning`]: acoustic and textual conditions for the network.
//! - [`prompt`]: the edit-instruction grammar.
//! - [`sim`]: paired-data simulation (mixing, room responses, manifests).
//! - [`metrics`]: SI-SDR, segmental SNR, log-spectral distance, RT60.
//! - [`config`], [`pipeline`], [`checks`]: run configuration and the
//!   workflows exposed by the command-line tool.

pub mod checks;
pub mod conditioning;
pub mod config;
pub mod dsp;
mod error;
pub mod metrics;
pub mod pipeline;
pub mod prompt;
pub mod rng;
pub mod score;
pub mod sde;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};

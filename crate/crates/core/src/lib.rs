//! Blind multichannel late-reverberation suppression by delayed linear
//! prediction, with periodogram, all-pole and autoencoder PSD priors.
//!
//! The usual flow is [`stft::analyze`] on the microphone signals,
//! [`wpe::run_wpe`] with a [`priors::PsdEstimator`], then
//! [`stft::synthesize`] on the residual.

pub mod config;
pub mod error;
pub mod io;
pub mod linalg;
pub mod lpc;
pub mod metrics;
pub mod neural;
pub mod pipeline;
pub mod priors;
pub mod room_sim;
pub mod stft;
pub mod wpe;

pub use error::{Error, Result};
pub use priors::{ArEnvelope, NeuralPrior, Periodogram, PriorKind, PsdEstimator};
pub use stft::{analyze, synthesize, ComplexSpectrogram, StftConfig};
pub use wpe::{run_wpe, run_wpe_with_observer, MclpConfig, PsdMap, WpeOutput};

//! End-to-end helpers: scene simulation, dereverberation of time signals and
//! autoencoder training data.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::neural::log_power_db;
use crate::priors::PsdEstimator;
use crate::room_sim::{convolve, split_rir_after_direct, Rir};
use crate::stft::{analyze, synthesize, StftConfig};
use crate::wpe::{run_wpe_with_observer, IterationDiagnostics, MclpConfig, PsdMap};

/// Reverberant microphone signals and the early-reflection reference.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedUtterance {
    /// One signal per microphone, as long as the source.
    pub reverberant: Vec<Vec<f64>>,
    /// Source convolved with the reference microphone's response up to the
    /// early/late boundary after its direct path.
    pub early_reference: Vec<f64>,
}

/// Convolves `source` with every response; outputs are cut to the source
/// length.
pub fn simulate(source: &[f64], rir: &Rir, reference_channel: usize) -> Result<SimulatedUtterance> {
    if source.is_empty() {
        return Err(Error::EmptySignal);
    }
    if reference_channel >= rir.num_mics() {
        return Err(Error::OutOfRange(format!(
            "reference channel {reference_channel} of {} microphones",
            rir.num_mics()
        )));
    }
    let n = source.len();
    let cut = |mut v: Vec<f64>| {
        v.resize(n, 0.0);
        v
    };
    let reverberant = rir.taps.iter().map(|h| cut(convolve(source, h))).collect();
    let (early, _) = split_rir_after_direct(rir, reference_channel, rir.early_late_boundary_ms);
    let early_reference = cut(convolve(source, &early.taps[reference_channel]));
    Ok(SimulatedUtterance {
        reverberant,
        early_reference,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dereverberated {
    /// Enhanced reference channel, as long as the input.
    pub output: Vec<f64>,
    pub diagnostics: Vec<IterationDiagnostics>,
    /// Time-domain estimate after each iteration, when requested.
    pub per_iteration: Vec<Vec<f64>>,
}

fn to_time(spec: &crate::stft::ComplexSpectrogram, stft: &StftConfig, len: usize) -> Result<Vec<f64>> {
    let mut y = synthesize(spec, stft)?;
    y.resize(len, 0.0);
    Ok(y)
}

/// STFT, iterative prediction-error weighting, and synthesis of the
/// reference channel. Channels beyond `mclp.num_channels` are ignored.
pub fn dereverberate<S: AsRef<[f64]>>(
    channels: &[S],
    stft: &StftConfig,
    mclp: &MclpConfig,
    prior: &dyn PsdEstimator,
    keep_iterations: bool,
) -> Result<Dereverberated> {
    if channels.len() < mclp.num_channels {
        return Err(Error::InvalidConfig(format!(
            "{} channels supplied, configuration needs {}",
            channels.len(),
            mclp.num_channels
        )));
    }
    let used = &channels[..mclp.num_channels];
    let len = used[0].as_ref().len();
    let spec = analyze(used, stft)?;
    let mut per_iteration = Vec::new();
    let mut failure = None;
    let out = run_wpe_with_observer(&spec, prior, mclp, |_, residual| {
        if keep_iterations && failure.is_none() {
            match to_time(residual, stft, len) {
                Ok(y) => per_iteration.push(y),
                Err(e) => failure = Some(e),
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(Dereverberated {
        output: to_time(&out.residual, stft, len)?,
        diagnostics: out.diagnostics,
        per_iteration,
    })
}

/// Log-power frames `(frames x bins)` in dB of one signal, the training
/// representation of the autoencoder priors.
pub fn log_power_frames(signal: &[f64], stft: &StftConfig) -> Result<Array2<f64>> {
    let spec = analyze(&[signal], stft)?;
    Ok(log_power_db(PsdMap::power_of(&spec).values().view()))
}

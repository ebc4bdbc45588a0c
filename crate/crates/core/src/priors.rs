//! Desired-signal PSD estimators evaluated on the current residual.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::lpc::levinson_durbin;
use crate::neural::{log_power_db, AutoencoderModel, NetworkKind};
use crate::stft::ComplexSpectrogram;
use crate::wpe::PsdMap;

/// Maps a single-channel residual spectrogram to a strictly positive PSD of
/// the same `(frame, bin)` shape.
pub trait PsdEstimator: Send + Sync {
    fn name(&self) -> &str;
    fn estimate(&self, residual: &ComplexSpectrogram) -> Result<PsdMap>;
}

pub const DEFAULT_AR_ORDER: usize = 21;

/// Classic WPE weighting: `gamma = |d|^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Periodogram {
    pub floor_rel: f64,
}

impl Periodogram {
    pub fn new(floor_rel: f64) -> Self {
        Periodogram { floor_rel }
    }
}

pub fn periodogram_prior(residual: &ComplexSpectrogram, floor_rel: f64) -> PsdMap {
    crate::wpe::update_gamma(residual, floor_rel)
}

impl PsdEstimator for Periodogram {
    fn name(&self) -> &str {
        "periodogram"
    }

    fn estimate(&self, residual: &ComplexSpectrogram) -> Result<PsdMap> {
        Ok(periodogram_prior(residual, self.floor_rel))
    }
}

/// Per-frame all-pole spectral envelope.
#[derive(Debug)]
pub struct ArEnvelope {
    pub order: usize,
    pub floor_rel: f64,
    fallbacks: AtomicUsize,
}

impl Clone for ArEnvelope {
    fn clone(&self) -> Self {
        ArEnvelope {
            order: self.order,
            floor_rel: self.floor_rel,
            fallbacks: AtomicUsize::new(self.fallback_frames()),
        }
    }
}

impl ArEnvelope {
    pub fn new(order: usize, floor_rel: f64) -> Self {
        ArEnvelope {
            order,
            floor_rel,
            fallbacks: AtomicUsize::new(0),
        }
    }

    /// Frames that fell back to the periodogram across all calls so far.
    pub fn fallback_frames(&self) -> usize {
        self.fallbacks.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArEnvelopeOutput {
    pub psd: PsdMap,
    /// Frames where the Levinson recursion broke down.
    pub fallback_frames: usize,
}

/// Power spectrum -> autocorrelation (inverse DFT of the mirrored spectrum)
/// -> Levinson-Durbin -> `sigma_e^2 / |A(e^{jw})|^2`, frame by frame.
pub fn ar_envelope_prior(
    residual: &ComplexSpectrogram,
    lp_order: usize,
    floor_rel: f64,
) -> Result<ArEnvelopeOutput> {
    let bins = residual.num_bins();
    let k_full = 2 * (bins - 1);
    if lp_order == 0 || lp_order >= k_full {
        return Err(Error::InvalidConfig(format!(
            "LP order {lp_order} must lie in 1..{k_full}"
        )));
    }
    let power = PsdMap::power_of(residual).into_inner();
    let cos: Vec<f64> = (0..k_full)
        .map(|i| (2.0 * PI * i as f64 / k_full as f64).cos())
        .collect();
    let sin: Vec<f64> = (0..k_full)
        .map(|i| (2.0 * PI * i as f64 / k_full as f64).sin())
        .collect();

    let mut out = Array2::zeros(power.dim());
    let mut fallback_frames = 0;
    let mut r = vec![0.0; lp_order + 1];
    for (n, frame) in power.rows().into_iter().enumerate() {
        for (lag, slot) in r.iter_mut().enumerate() {
            let nyq = if lag % 2 == 0 { 1.0 } else { -1.0 };
            let mut acc = frame[0] + nyq * frame[bins - 1];
            for k in 1..bins - 1 {
                acc += 2.0 * frame[k] * cos[(k * lag) % k_full];
            }
            *slot = acc / k_full as f64;
        }
        match levinson_durbin(&r, lp_order) {
            Ok(sol) => {
                for k in 0..bins {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (i, a) in sol.poly.iter().enumerate() {
                        let idx = (k * i) % k_full;
                        re += a * cos[idx];
                        im -= a * sin[idx];
                    }
                    out[[n, k]] = sol.error_power / (re * re + im * im);
                }
            }
            Err(_) => {
                fallback_frames += 1;
                out.row_mut(n).assign(&frame);
            }
        }
    }
    let mut psd = PsdMap::new(out);
    psd.apply_floor(floor_rel);
    Ok(ArEnvelopeOutput {
        psd,
        fallback_frames,
    })
}

impl PsdEstimator for ArEnvelope {
    fn name(&self) -> &str {
        "ar"
    }

    fn estimate(&self, residual: &ComplexSpectrogram) -> Result<PsdMap> {
        let out = ar_envelope_prior(residual, self.order, self.floor_rel)?;
        if out.fallback_frames > 0 {
            log::warn!(
                "AR envelope: {} frames fell back to the periodogram",
                out.fallback_frames
            );
            self.fallbacks
                .fetch_add(out.fallback_frames, Ordering::Relaxed);
        }
        Ok(out.psd)
    }
}

/// Log-power normalization, network pass, and inverse normalization.
///
/// `network` maps normalized frames `(frames x bins)` to their
/// reconstruction. With an identity network the result is `|d|^2 + delta`.
pub fn neural_psd<F>(
    residual: &ComplexSpectrogram,
    mu: ArrayView2<'_, f64>,
    sigma: ArrayView2<'_, f64>,
    floor_rel: f64,
    network: F,
) -> Result<PsdMap>
where
    F: FnOnce(ArrayView2<'_, f64>) -> Result<Array2<f64>>,
{
    let bins = residual.num_bins();
    if mu.ncols() != bins || sigma.ncols() != bins {
        return Err(Error::DimensionMismatch(format!(
            "normalization has {} bins, residual has {bins}",
            mu.ncols()
        )));
    }
    let power = PsdMap::power_of(residual).into_inner();
    let log_power = log_power_db(power.view());
    let normalized = (&log_power - &mu) / &sigma;
    let reconstructed = network(normalized.view())?;
    if reconstructed.dim() != normalized.dim() {
        return Err(Error::DimensionMismatch(
            "network output shape differs from its input".into(),
        ));
    }
    let db = &reconstructed * &sigma + &mu;
    let mut psd = PsdMap::new(db.mapv(|v| 10f64.powf(v / 10.0)));
    psd.apply_floor(floor_rel);
    Ok(psd)
}

/// Autoencoder prior.
#[derive(Debug, Clone)]
pub struct NeuralPrior {
    pub model: AutoencoderModel,
    pub floor_rel: f64,
    name: String,
}

impl NeuralPrior {
    pub fn new(model: AutoencoderModel, floor_rel: f64) -> Self {
        let name = format!("neural-{}", model.spec.kind);
        NeuralPrior {
            model,
            floor_rel,
            name,
        }
    }
}

pub fn neural_prior(
    residual: &ComplexSpectrogram,
    model: &AutoencoderModel,
    floor_rel: f64,
) -> Result<PsdMap> {
    if model.num_bins() != residual.num_bins() {
        return Err(Error::DimensionMismatch(format!(
            "model has {} bins, residual has {}",
            model.num_bins(),
            residual.num_bins()
        )));
    }
    let mu = model.norm_mu.view().insert_axis(ndarray::Axis(0));
    let sigma = model.norm_sigma.view().insert_axis(ndarray::Axis(0));
    neural_psd(residual, mu, sigma, floor_rel, |x| model.reconstruct(x))
}

impl PsdEstimator for NeuralPrior {
    fn name(&self) -> &str {
        &self.name
    }

    fn estimate(&self, residual: &ComplexSpectrogram) -> Result<PsdMap> {
        neural_prior(residual, &self.model, self.floor_rel)
    }
}

/// Estimator names accepted on the command line and in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PriorKind {
    Periodogram,
    Ar,
    NeuralFc,
    NeuralLstm,
}

impl PriorKind {
    pub const ALL: [PriorKind; 4] = [
        PriorKind::Periodogram,
        PriorKind::Ar,
        PriorKind::NeuralFc,
        PriorKind::NeuralLstm,
    ];

    pub fn needs_model(self) -> bool {
        matches!(self, PriorKind::NeuralFc | PriorKind::NeuralLstm)
    }

    pub fn network_kind(self) -> Option<NetworkKind> {
        match self {
            PriorKind::NeuralFc => Some(NetworkKind::Fc),
            PriorKind::NeuralLstm => Some(NetworkKind::Lstm),
            _ => None,
        }
    }

    /// Instantiates the estimator; neural kinds require a matching model.
    pub fn build(
        self,
        floor_rel: f64,
        ar_order: usize,
        model: Option<AutoencoderModel>,
    ) -> Result<Box<dyn PsdEstimator>> {
        Ok(match self {
            PriorKind::Periodogram => Box::new(Periodogram::new(floor_rel)),
            PriorKind::Ar => Box::new(ArEnvelope::new(ar_order, floor_rel)),
            PriorKind::NeuralFc | PriorKind::NeuralLstm => {
                let model = model.ok_or_else(|| {
                    Error::InvalidConfig(format!("prior `{self}` requires a model file"))
                })?;
                let want = self.network_kind().expect("neural kind");
                if model.spec.kind != want {
                    return Err(Error::InvalidConfig(format!(
                        "prior `{self}` needs a {want} model, got {}",
                        model.spec.kind
                    )));
                }
                Box::new(NeuralPrior::new(model, floor_rel))
            }
        })
    }
}

impl FromStr for PriorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "periodogram" => Ok(PriorKind::Periodogram),
            "ar" => Ok(PriorKind::Ar),
            "neural-fc" => Ok(PriorKind::NeuralFc),
            "neural-lstm" => Ok(PriorKind::NeuralLstm),
            other => Err(Error::InvalidConfig(format!(
                "unknown prior `{other}` (expected periodogram | ar | neural-fc | neural-lstm)"
            ))),
        }
    }
}

impl fmt::Display for PriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PriorKind::Periodogram => "periodogram",
            PriorKind::Ar => "ar",
            PriorKind::NeuralFc => "neural-fc",
            PriorKind::NeuralLstm => "neural-lstm",
        })
    }
}

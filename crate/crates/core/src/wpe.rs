//! Delayed multichannel linear prediction with weighted-prediction-error
//! estimation.
//!
//! For every frequency bin `k` the reference channel is modelled as
//!
//! ```text
//! x_ref[n,k] = g[k]^H phi[n-D,k] + d[n,k]
//! ```
//!
//! where `phi[n,k]` stacks `L` past samples of each of the `M` channels. The
//! filter `g[k]` solves a PSD-weighted least-squares problem; the desired
//! signal PSD comes from a pluggable [`PsdEstimator`], evaluated on the
//! current residual at the start of every iteration.

use ndarray::{Array2, Array3, ArrayView1};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_in_place, cholesky_solve};
use crate::priors::PsdEstimator;
use crate::stft::ComplexSpectrogram;

/// Lower bound applied to every PSD value, whatever the relative floor.
pub const ABSOLUTE_PSD_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MclpConfig {
    /// Prediction delay in frames.
    pub delay: usize,
    /// Taps per channel.
    pub order: usize,
    pub num_channels: usize,
    pub max_iterations: usize,
    pub reference_channel: usize,
    /// Diagonal loading relative to the mean diagonal of the covariance.
    pub diagonal_load_eps: f64,
    /// PSD floor relative to the largest residual power.
    pub gamma_floor_rel: f64,
}

impl Default for MclpConfig {
    fn default() -> Self {
        MclpConfig {
            delay: 2,
            order: 16,
            num_channels: 4,
            max_iterations: 5,
            reference_channel: 0,
            diagonal_load_eps: 1e-8,
            gamma_floor_rel: 1e-8,
        }
    }
}

impl MclpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.delay < 1 {
            return bad("delay must be at least one frame");
        }
        if self.order < 1 {
            return bad("prediction order must be at least 1");
        }
        if self.num_channels < 1 {
            return bad("need at least one channel");
        }
        if self.max_iterations < 1 {
            return bad("need at least one iteration");
        }
        if self.reference_channel >= self.num_channels {
            return bad("reference channel out of range");
        }
        if !(self.diagonal_load_eps >= 0.0) || !(self.gamma_floor_rel >= 0.0) {
            return bad("loading and floor must be nonnegative");
        }
        Ok(())
    }

    /// Predictor length `M * L`.
    pub fn taps(&self) -> usize {
        self.num_channels * self.order
    }

    /// Conventional prediction order for a microphone count: 48, 32, 16 and
    /// 8 taps for 1, 2, 4 and 8 microphones.
    pub fn order_for_channels(channels: usize) -> usize {
        match channels {
            0 | 1 => 48,
            2 => 32,
            3 | 4 => 16,
            _ => 8,
        }
    }
}

/// Per-cell desired-signal variance, indexed `(frame, bin)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdMap(Array2<f64>);

impl PsdMap {
    pub fn new(values: Array2<f64>) -> Self {
        PsdMap(values)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn num_frames(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.0.ncols()
    }

    #[inline]
    pub fn get(&self, frame: usize, bin: usize) -> f64 {
        self.0[[frame, bin]]
    }

    pub fn scaled(&self, c: f64) -> PsdMap {
        PsdMap(&self.0 * c)
    }

    /// `|X[n,k]|^2` of the first channel, unfloored.
    pub fn power_of(spec: &ComplexSpectrogram) -> PsdMap {
        PsdMap(spec.channel_view(0).mapv(|c| c.norm_sqr()))
    }

    /// Clamp to `max(value, floor_rel * max, ABSOLUTE_PSD_FLOOR)`.
    pub fn apply_floor(&mut self, floor_rel: f64) {
        let peak = self.0.iter().cloned().fold(0.0f64, f64::max);
        let floor = (floor_rel * peak).max(ABSOLUTE_PSD_FLOOR);
        self.0.mapv_inplace(|v| if v >= floor { v } else { floor });
    }

    pub fn check_positive(&self) -> Result<()> {
        for ((frame, bin), &value) in self.0.indexed_iter() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::NonPositivePsd { frame, bin, value });
            }
        }
        Ok(())
    }
}

/// Prediction filters `g[k]`, one row of `M * L` taps per bin.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    taps: Array2<Complex64>,
    num_channels: usize,
    order: usize,
}

impl FilterBank {
    pub fn zeros(bins: usize, num_channels: usize, order: usize) -> Self {
        FilterBank {
            taps: Array2::zeros((bins, num_channels * order)),
            num_channels,
            order,
        }
    }

    pub fn from_rows(rows: Vec<Vec<Complex64>>, num_channels: usize, order: usize) -> Result<Self> {
        let len = num_channels * order;
        let mut fb = FilterBank::zeros(rows.len(), num_channels, order);
        for (k, row) in rows.into_iter().enumerate() {
            if row.len() != len {
                return Err(Error::DimensionMismatch(format!(
                    "bin {k} filter has {} taps, expected {len}",
                    row.len()
                )));
            }
            if row.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
                return Err(Error::NonFinite(format!("filter of bin {k}")));
            }
            fb.taps.row_mut(k).assign(&ArrayView1::from(&row));
        }
        Ok(fb)
    }

    pub fn num_bins(&self) -> usize {
        self.taps.nrows()
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn bin(&self, k: usize) -> ArrayView1<'_, Complex64> {
        self.taps.row(k)
    }

    pub fn taps(&self) -> &Array2<Complex64> {
        &self.taps
    }

    pub fn norm(&self, k: usize) -> f64 {
        self.taps.row(k).iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// One bin of a multichannel spectrogram laid out `(channel, frame)`.
struct BinSeries {
    channels: Vec<Vec<Complex64>>,
}

impl BinSeries {
    fn gather(spec: &ComplexSpectrogram, k: usize, channels: usize) -> Self {
        let data = spec.data();
        BinSeries {
            channels: (0..channels)
                .map(|m| (0..spec.num_frames()).map(|n| data[[m, n, k]]).collect())
                .collect(),
        }
    }

    fn frames(&self) -> usize {
        self.channels[0].len()
    }

    /// Writes `phi[n-D]` into `out`; taps before frame 0 read as zero.
    #[inline]
    fn predictor(&self, n: usize, delay: usize, order: usize, out: &mut [Complex64]) {
        for (m, ch) in self.channels.iter().enumerate() {
            for l in 0..order {
                out[m * order + l] = if n >= delay + l {
                    ch[n - delay - l]
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
        }
    }
}

fn check_spec(spec: &ComplexSpectrogram, config: &MclpConfig) -> Result<()> {
    config.validate()?;
    if spec.num_channels() < config.num_channels {
        return Err(Error::DimensionMismatch(format!(
            "configuration uses {} channels, spectrogram has {}",
            config.num_channels,
            spec.num_channels()
        )));
    }
    Ok(())
}

fn check_gamma(spec: &ComplexSpectrogram, gamma: &PsdMap) -> Result<()> {
    if gamma.num_frames() != spec.num_frames() || gamma.num_bins() != spec.num_bins() {
        return Err(Error::DimensionMismatch(format!(
            "PSD is {}x{}, spectrogram is {}x{}",
            gamma.num_frames(),
            gamma.num_bins(),
            spec.num_frames(),
            spec.num_bins()
        )));
    }
    Ok(())
}

/// Stacked predictor vector `phi[n-D, k]` of length `M * L`.
pub fn build_predictor_vector(
    spec: &ComplexSpectrogram,
    n: usize,
    k: usize,
    config: &MclpConfig,
) -> Result<Vec<Complex64>> {
    check_spec(spec, config)?;
    if k >= spec.num_bins() {
        return Err(Error::OutOfRange(format!(
            "bin {k} of {}",
            spec.num_bins()
        )));
    }
    if n >= spec.num_frames() {
        return Err(Error::OutOfRange(format!(
            "frame {n} of {}",
            spec.num_frames()
        )));
    }
    let data = spec.data();
    let mut out = vec![Complex64::new(0.0, 0.0); config.taps()];
    for m in 0..config.num_channels {
        for l in 0..config.order {
            if n >= config.delay + l {
                out[m * config.order + l] = data[[m, n - config.delay - l, k]];
            }
        }
    }
    Ok(out)
}

/// Loaded weighted normal equations `(R + eps I) g = r` of one bin.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    pub size: usize,
    /// Full Hermitian matrix, row-major, including the diagonal loading.
    pub matrix: Vec<Complex64>,
    pub rhs: Vec<Complex64>,
    pub loading: f64,
}

/// Accumulates the lower triangle of `R` and the vector `r`.
fn accumulate(
    series: &BinSeries,
    weights_from: impl Fn(usize) -> f64,
    config: &MclpConfig,
) -> (Vec<Complex64>, Vec<Complex64>, f64) {
    let p = config.taps();
    let zero = Complex64::new(0.0, 0.0);
    let mut mat = vec![zero; p * p];
    let mut rhs = vec![zero; p];
    let mut phi = vec![zero; p];
    let reference = &series.channels[config.reference_channel];
    for n in config.delay..series.frames() {
        series.predictor(n, config.delay, config.order, &mut phi);
        let w = 1.0 / weights_from(n);
        let xr = reference[n].conj();
        for i in 0..p {
            let wi = phi[i] * w;
            let row = &mut mat[i * p..i * p + i + 1];
            for (slot, pj) in row.iter_mut().zip(&phi[..=i]) {
                *slot += wi * pj.conj();
            }
            rhs[i] += wi * xr;
        }
    }
    let trace: f64 = (0..p).map(|i| mat[i * p + i].re).sum();
    let loading = config.diagonal_load_eps * trace / p as f64;
    for i in 0..p {
        mat[i * p + i] += loading;
    }
    (mat, rhs, trace)
}

fn solve_bin(
    series: &BinSeries,
    gamma: &PsdMap,
    k: usize,
    config: &MclpConfig,
) -> Result<Vec<Complex64>> {
    let p = config.taps();
    let (mut mat, mut rhs, trace) = accumulate(series, |n| gamma.get(n, k), config);
    if trace == 0.0 {
        // no predictor energy at all (silent bin or N <= D)
        return Ok(vec![Complex64::new(0.0, 0.0); p]);
    }
    cholesky_in_place(&mut mat, p).map_err(|f| Error::SingularSystem {
        bin: k,
        condition: f.condition,
    })?;
    cholesky_solve(&mat, p, &mut rhs);
    if rhs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::SingularSystem {
            bin: k,
            condition: f64::INFINITY,
        });
    }
    Ok(rhs)
}

/// Builds the loaded weighted normal equations of bin `k`.
pub fn weighted_normal_equations(
    spec: &ComplexSpectrogram,
    gamma: &PsdMap,
    k: usize,
    config: &MclpConfig,
) -> Result<NormalEquations> {
    check_spec(spec, config)?;
    check_gamma(spec, gamma)?;
    if k >= spec.num_bins() {
        return Err(Error::OutOfRange(format!("bin {k}")));
    }
    let series = BinSeries::gather(spec, k, config.num_channels);
    let (mut mat, rhs, trace) = accumulate(&series, |n| gamma.get(n, k), config);
    let p = config.taps();
    for i in 0..p {
        for j in i + 1..p {
            mat[i * p + j] = mat[j * p + i].conj();
        }
    }
    Ok(NormalEquations {
        size: p,
        matrix: mat,
        rhs,
        loading: config.diagonal_load_eps * trace / p as f64,
    })
}

/// Weighted least-squares prediction filter of bin `k`.
pub fn estimate_filter(
    spec: &ComplexSpectrogram,
    gamma: &PsdMap,
    k: usize,
    config: &MclpConfig,
) -> Result<Vec<Complex64>> {
    check_spec(spec, config)?;
    check_gamma(spec, gamma)?;
    if k >= spec.num_bins() {
        return Err(Error::OutOfRange(format!("bin {k}")));
    }
    let series = BinSeries::gather(spec, k, config.num_channels);
    solve_bin(&series, gamma, k, config)
}

fn estimate_all(
    series: &[BinSeries],
    gamma: &PsdMap,
    config: &MclpConfig,
) -> Result<FilterBank> {
    let rows = series
        .par_iter()
        .enumerate()
        .map(|(k, s)| solve_bin(s, gamma, k, config))
        .collect::<Result<Vec<_>>>()?;
    FilterBank::from_rows(rows, config.num_channels, config.order)
}

/// Filters for every bin.
pub fn estimate_filters(
    spec: &ComplexSpectrogram,
    gamma: &PsdMap,
    config: &MclpConfig,
) -> Result<FilterBank> {
    check_spec(spec, config)?;
    check_gamma(spec, gamma)?;
    let series: Vec<BinSeries> = (0..spec.num_bins())
        .map(|k| BinSeries::gather(spec, k, config.num_channels))
        .collect();
    estimate_all(&series, gamma, config)
}

fn residual_from_series(
    series: &[BinSeries],
    filters: &FilterBank,
    config: &MclpConfig,
    spec: &ComplexSpectrogram,
) -> Result<ComplexSpectrogram> {
    let frames = spec.num_frames();
    let bins = spec.num_bins();
    let p = config.taps();
    let mut out = Array3::zeros((1, frames, bins));
    let zero = Complex64::new(0.0, 0.0);
    let mut phi = vec![zero; p];
    for (k, s) in series.iter().enumerate() {
        let g = filters.bin(k);
        let reference = &s.channels[config.reference_channel];
        for n in 0..frames {
            s.predictor(n, config.delay, config.order, &mut phi);
            let mut pred = zero;
            for i in 0..p {
                pred += g[i].conj() * phi[i];
            }
            out[[0, n, k]] = reference[n] - pred;
        }
    }
    ComplexSpectrogram::new(out, *spec.config())
}

/// `d[n,k] = x_ref[n,k] - g[k]^H phi[n-D,k]`.
pub fn compute_residual(
    spec: &ComplexSpectrogram,
    filters: &FilterBank,
    config: &MclpConfig,
) -> Result<ComplexSpectrogram> {
    check_spec(spec, config)?;
    if filters.num_bins() != spec.num_bins()
        || filters.num_channels() != config.num_channels
        || filters.order() != config.order
    {
        return Err(Error::DimensionMismatch(format!(
            "filter bank ({} bins, {} x {} taps) does not match spectrogram/config",
            filters.num_bins(),
            filters.num_channels(),
            filters.order()
        )));
    }
    let series: Vec<BinSeries> = (0..spec.num_bins())
        .map(|k| BinSeries::gather(spec, k, config.num_channels))
        .collect();
    residual_from_series(&series, filters, config, spec)
}

/// Variance update `gamma = |d|^2`, floored at `floor_rel * max |d|^2`.
pub fn update_gamma(residual: &ComplexSpectrogram, floor_rel: f64) -> PsdMap {
    let mut psd = PsdMap::power_of(residual);
    if psd.values().iter().all(|&v| v == 0.0) {
        log::warn!("all-zero residual; PSD set to the absolute floor");
    }
    psd.apply_floor(floor_rel);
    psd
}

/// `sum_k sum_n log(gamma) + |d|^2 / gamma`.
pub fn negative_log_likelihood(residual: &ComplexSpectrogram, gamma: &PsdMap) -> Result<f64> {
    check_gamma(residual, gamma)?;
    gamma.check_positive()?;
    let d = residual.channel_view(0);
    let mut total = 0.0;
    for k in 0..residual.num_bins() {
        for n in 0..residual.num_frames() {
            let g = gamma.get(n, k);
            total += g.ln() + d[[n, k]].norm_sqr() / g;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    /// Likelihood of the new residual under the PSD used to estimate it.
    pub negative_log_likelihood: f64,
    pub residual_energy: f64,
}

#[derive(Debug, Clone)]
pub struct WpeOutput {
    pub residual: ComplexSpectrogram,
    pub filters: FilterBank,
    pub diagnostics: Vec<IterationDiagnostics>,
}

pub fn run_wpe(
    spec: &ComplexSpectrogram,
    prior: &dyn PsdEstimator,
    config: &MclpConfig,
) -> Result<WpeOutput> {
    run_wpe_with_observer(spec, prior, config, |_, _| {})
}

/// Like [`run_wpe`], calling `observer(iteration, residual)` after each
/// iteration.
pub fn run_wpe_with_observer<F>(
    spec: &ComplexSpectrogram,
    prior: &dyn PsdEstimator,
    config: &MclpConfig,
    mut observer: F,
) -> Result<WpeOutput>
where
    F: FnMut(usize, &ComplexSpectrogram),
{
    check_spec(spec, config)?;
    if spec.num_frames() <= config.delay {
        return Err(Error::InvalidConfig(format!(
            "{} frames do not exceed the prediction delay {}",
            spec.num_frames(),
            config.delay
        )));
    }
    let series: Vec<BinSeries> = (0..spec.num_bins())
        .map(|k| BinSeries::gather(spec, k, config.num_channels))
        .collect();

    let mut estimate = spec.channel(config.reference_channel);
    let mut filters = FilterBank::zeros(spec.num_bins(), config.num_channels, config.order);
    let mut diagnostics = Vec::with_capacity(config.max_iterations);
    for iteration in 0..config.max_iterations {
        let prior_err = |source: Error| Error::Prior {
            prior: prior.name().to_string(),
            iteration,
            source: Box::new(source),
        };
        let gamma = prior.estimate(&estimate).map_err(prior_err)?;
        check_gamma(&estimate, &gamma).map_err(prior_err)?;
        gamma.check_positive().map_err(prior_err)?;

        filters = estimate_all(&series, &gamma, config)?;
        let residual = residual_from_series(&series, &filters, config, spec)?;
        diagnostics.push(IterationDiagnostics {
            iteration,
            negative_log_likelihood: negative_log_likelihood(&residual, &gamma)?,
            residual_energy: residual.energy(),
        });
        observer(iteration, &residual);
        estimate = residual;
    }
    Ok(WpeOutput {
        residual: estimate,
        filters,
        diagnostics,
    })
}

//! Objective quality measures: log-spectral distance, frequency-weighted
//! segmental SNR, LP cepstral distance and log-likelihood ratio.
//!
//! Frames for the LP measures are taken every `hop` samples with a periodic
//! Hann window of `window_len` samples.

use std::f64::consts::{LN_10, PI};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::Record;
use crate::lpc::{autocorrelation, levinson_durbin, lpc_to_cepstrum, LpSolution};
use crate::stft::{analyze, StftConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricParams {
    pub fwsnr_bands: usize,
    /// Exponent applied to reference band magnitudes to form band weights.
    pub fwsnr_weight_exponent: f64,
    pub fwsnr_min_db: f64,
    pub fwsnr_max_db: f64,
    /// Frames whose reference energy lies this far below the loudest frame
    /// are ignored.
    pub activity_threshold_db: f64,
    pub lp_order: usize,
    /// Fraction of the largest per-frame cepstral distances discarded.
    pub cd_trim: f64,
    /// Alignment search radius in frames; 0 disables the search.
    pub align_frames: usize,
}

impl Default for MetricParams {
    fn default() -> Self {
        MetricParams {
            fwsnr_bands: 25,
            fwsnr_weight_exponent: 0.2,
            fwsnr_min_db: -10.0,
            fwsnr_max_db: 35.0,
            activity_threshold_db: -40.0,
            lp_order: 10,
            cd_trim: 0.05,
            align_frames: 2,
        }
    }
}

impl MetricParams {
    pub fn validate(&self) -> Result<()> {
        if self.fwsnr_bands == 0 {
            return Err(Error::InvalidConfig("fwsnr_bands must be positive".into()));
        }
        if self.fwsnr_min_db >= self.fwsnr_max_db {
            return Err(Error::InvalidConfig("fwsnr clamp range is empty".into()));
        }
        if self.lp_order == 0 {
            return Err(Error::InvalidConfig("lp_order must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.cd_trim) {
            return Err(Error::InvalidConfig("cd_trim must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsdResult {
    pub per_frame_db: Vec<f64>,
    pub mean_db: f64,
}

/// `LSD(n) = mean_k |10 log10(ref[n,k] / est[n,k])|`, averaged over frames.
pub fn lsd(reference: ArrayView2<'_, f64>, estimate: ArrayView2<'_, f64>) -> Result<LsdResult> {
    if reference.dim() != estimate.dim() {
        return Err(Error::DimensionMismatch(format!(
            "reference {:?} vs estimate {:?}",
            reference.dim(),
            estimate.dim()
        )));
    }
    if reference.nrows() == 0 || reference.ncols() == 0 {
        return Err(Error::EmptySignal);
    }
    for ((frame, bin), &v) in reference.indexed_iter().chain(estimate.indexed_iter()) {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::NonPositivePsd {
                frame,
                bin,
                value: v,
            });
        }
    }
    let per_frame_db: Vec<f64> = reference
        .rows()
        .into_iter()
        .zip(estimate.rows())
        .map(|(r, e)| {
            r.iter()
                .zip(e.iter())
                .map(|(a, b)| (10.0 * (a / b).log10()).abs())
                .sum::<f64>()
                / r.len() as f64
        })
        .collect();
    let mean_db = per_frame_db.iter().sum::<f64>() / per_frame_db.len() as f64;
    Ok(LsdResult {
        per_frame_db,
        mean_db,
    })
}

/// Adds `1e-12 * max` to every value, the flooring used before log-spectra.
pub fn delta_floor(power: ArrayView2<'_, f64>) -> ndarray::Array2<f64> {
    let peak = power.iter().cloned().fold(0.0, f64::max);
    let delta = if peak > 0.0 { 1e-12 * peak } else { 1e-30 };
    power.mapv(|v| v + delta)
}

fn mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_inv(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank `(bands x bins)`. The lowest band is flat below
/// its centre and the highest above its centre, so every bin is covered.
pub fn mel_filterbank(bands: usize, num_bins: usize, sample_rate_hz: u32) -> Vec<Vec<f64>> {
    let nyquist = sample_rate_hz as f64 / 2.0;
    let top = mel(nyquist);
    let edges: Vec<f64> = (0..bands + 2)
        .map(|i| mel_inv(top * i as f64 / (bands + 1) as f64))
        .collect();
    let hz = |k: usize| nyquist * k as f64 / (num_bins - 1) as f64;
    (0..bands)
        .map(|b| {
            let (lo, c, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            (0..num_bins)
                .map(|k| {
                    let f = hz(k);
                    if f <= c {
                        if b == 0 {
                            1.0
                        } else {
                            ((f - lo) / (c - lo)).max(0.0)
                        }
                    } else if b == bands - 1 {
                        1.0
                    } else {
                        ((hi - f) / (hi - c)).max(0.0)
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FwSnrResult {
    pub mean_db: f64,
    pub per_frame_db: Vec<f64>,
    pub active_frames: usize,
}

/// Frequency-weighted segmental SNR of `processed` against `reference`.
///
/// Signals are trimmed to the shorter length. Each frame value is
/// `max - sum_c w_c (max - snr_c) / sum_c w_c`, which equals the clamp
/// ceiling exactly when every band is error-free.
pub fn fwsnr(
    reference: &[f64],
    processed: &[f64],
    stft: &StftConfig,
    params: &MetricParams,
) -> Result<FwSnrResult> {
    params.validate()?;
    let n = reference.len().min(processed.len());
    let (r, p) = (&reference[..n], &processed[..n]);
    if n < stft.window_len {
        return Err(Error::SignalTooShort {
            len: n,
            window: stft.window_len,
        });
    }
    let spec = analyze(&[r, p], stft)?;
    let bins = spec.num_bins();
    let bank = mel_filterbank(params.fwsnr_bands, bins, stft.sample_rate_hz);
    let data = spec.data();
    let frames = spec.num_frames();

    let energies: Vec<f64> = (0..frames)
        .map(|t| (0..bins).map(|k| data[[0, t, k]].norm_sqr()).sum())
        .collect();
    let loudest = energies.iter().cloned().fold(0.0, f64::max);
    if loudest <= 0.0 {
        return Err(Error::NoActiveFrames);
    }
    let threshold = loudest * 10f64.powf(params.activity_threshold_db / 10.0);
    let (lo, hi) = (params.fwsnr_min_db, params.fwsnr_max_db);

    let mut per_frame_db = Vec::new();
    for t in 0..frames {
        if energies[t] < threshold || energies[t] == 0.0 {
            continue;
        }
        let (mut wsum, mut deficit) = (0.0, 0.0);
        for filt in &bank {
            let (mut rb, mut pb) = (0.0, 0.0);
            for k in 0..bins {
                rb += filt[k] * data[[0, t, k]].norm();
                pb += filt[k] * data[[1, t, k]].norm();
            }
            if rb <= 0.0 {
                continue;
            }
            let err = rb - pb;
            let snr = if err == 0.0 {
                hi
            } else {
                (10.0 * (rb * rb / (err * err)).log10()).clamp(lo, hi)
            };
            let w = rb.powf(params.fwsnr_weight_exponent);
            wsum += w;
            deficit += w * (hi - snr);
        }
        if wsum > 0.0 {
            per_frame_db.push(hi - deficit / wsum);
        }
    }
    if per_frame_db.is_empty() {
        return Err(Error::NoActiveFrames);
    }
    let mean_deficit = per_frame_db.iter().map(|v| hi - v).sum::<f64>() / per_frame_db.len() as f64;
    Ok(FwSnrResult {
        mean_db: hi - mean_deficit,
        active_frames: per_frame_db.len(),
        per_frame_db,
    })
}

/// Periodic Hann-windowed frames of `x`.
fn lp_frames<'a>(x: &'a [f64], stft: &'a StftConfig) -> impl Iterator<Item = Vec<f64>> + 'a {
    let len = stft.window_len;
    let window: Vec<f64> = (0..len)
        .map(|i| {
            let s = (PI * i as f64 / len as f64).sin();
            s * s
        })
        .collect();
    let count = stft.num_frames(x.len());
    (0..count).map(move |t| {
        let start = t * stft.hop;
        x[start..start + len]
            .iter()
            .zip(&window)
            .map(|(a, w)| a * w)
            .collect()
    })
}

struct LpFrame {
    r: Vec<f64>,
    lp: LpSolution,
}

fn lp_analyze(frame: &[f64], order: usize) -> Option<LpFrame> {
    let r = autocorrelation(frame, order);
    let lp = levinson_durbin(&r, order).ok()?;
    Some(LpFrame { r, lp })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameMetric {
    /// Trimmed mean for cepstral distance, median for LLR.
    pub value: f64,
    pub per_frame: Vec<f64>,
    /// Frames where LP analysis of either signal broke down.
    pub skipped_frames: usize,
}

fn paired_lp_frames(
    reference: &[f64],
    processed: &[f64],
    stft: &StftConfig,
    order: usize,
    mut f: impl FnMut(&LpFrame, &LpFrame) -> f64,
) -> Result<(Vec<f64>, usize)> {
    let n = reference.len().min(processed.len());
    if n < stft.window_len {
        return Err(Error::SignalTooShort {
            len: n,
            window: stft.window_len,
        });
    }
    let mut values = Vec::new();
    let mut skipped = 0;
    for (fr, fp) in lp_frames(&reference[..n], stft).zip(lp_frames(&processed[..n], stft)) {
        match (lp_analyze(&fr, order), lp_analyze(&fp, order)) {
            (Some(a), Some(b)) => values.push(f(&a, &b)),
            _ => skipped += 1,
        }
    }
    if values.is_empty() {
        return Err(Error::NoAnalyzableFrames);
    }
    if skipped > 0 {
        log::debug!("{skipped} frames skipped by LP analysis");
    }
    Ok((values, skipped))
}

/// Cepstral distance `(10 / ln 10) sqrt(2 sum_q (c_ref[q] - c_proc[q])^2)`
/// over `q = 1..=order`, reported as a trimmed mean.
pub fn cepstral_distance(
    reference: &[f64],
    processed: &[f64],
    stft: &StftConfig,
    params: &MetricParams,
) -> Result<FrameMetric> {
    params.validate()?;
    let order = params.lp_order;
    let (per_frame, skipped_frames) =
        paired_lp_frames(reference, processed, stft, order, |a, b| {
            let ca = lpc_to_cepstrum(&a.lp.poly, order);
            let cb = lpc_to_cepstrum(&b.lp.poly, order);
            let s: f64 = (1..=order).map(|q| (ca[q] - cb[q]).powi(2)).sum();
            (10.0 / LN_10) * (2.0 * s).sqrt()
        })?;
    let mut sorted = per_frame.clone();
    sorted.sort_by(f64::total_cmp);
    let keep = (((1.0 - params.cd_trim) * sorted.len() as f64).round() as usize).max(1);
    let value = sorted[..keep].iter().sum::<f64>() / keep as f64;
    Ok(FrameMetric {
        value,
        per_frame,
        skipped_frames,
    })
}

/// `a R a^T` with `R` the Toeplitz matrix of `r`.
pub fn toeplitz_quadratic(a: &[f64], r: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        for j in 0..a.len() {
            acc += a[i] * r[i.abs_diff(j)] * a[j];
        }
    }
    acc
}

/// Log-likelihood ratio `ln(a_proc R_ref a_proc^T / a_ref R_ref a_ref^T)`,
/// reported as the frame median.
pub fn llr(
    reference: &[f64],
    processed: &[f64],
    stft: &StftConfig,
    params: &MetricParams,
) -> Result<FrameMetric> {
    params.validate()?;
    let (per_frame, skipped_frames) =
        paired_lp_frames(reference, processed, stft, params.lp_order, |a, b| {
            let num = toeplitz_quadratic(&b.lp.poly, &a.r);
            let den = toeplitz_quadratic(&a.lp.poly, &a.r);
            (num / den).ln()
        })?;
    Ok(FrameMetric {
        value: median(&per_frame),
        per_frame,
        skipped_frames,
    })
}

pub fn median(values: &[f64]) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Integer lag in `[-max_lag, max_lag]` maximizing the cross-correlation
/// `sum_n reference[n] processed[n + lag]`.
pub fn best_lag(reference: &[f64], processed: &[f64], max_lag: usize) -> isize {
    let n = reference.len().min(processed.len());
    let max_lag = max_lag.min(n.saturating_sub(1)) as isize;
    let mut best = (0isize, f64::NEG_INFINITY);
    for lag in -max_lag..=max_lag {
        let mut acc = 0.0;
        for i in 0..n as isize {
            let j = i + lag;
            if j >= 0 && (j as usize) < processed.len() {
                acc += reference[i as usize] * processed[j as usize];
            }
        }
        // ties go to the smallest |lag|
        if acc > best.1 || (acc == best.1 && lag.abs() < best.0.abs()) {
            best = (lag, acc);
        }
    }
    best.0
}

/// Overlapping sections of both signals after shifting `processed` by `lag`.
pub fn apply_lag<'a>(reference: &'a [f64], processed: &'a [f64], lag: isize) -> (&'a [f64], &'a [f64]) {
    let (r, p) = if lag >= 0 {
        let l = (lag as usize).min(processed.len());
        (reference, &processed[l..])
    } else {
        let l = (lag.unsigned_abs()).min(reference.len());
        (&reference[l..], processed)
    };
    let n = r.len().min(p.len());
    (&r[..n], &p[..n])
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceMetrics {
    pub fwsnr_db: f64,
    pub cd: f64,
    pub llr: f64,
    pub lsd_db: Option<f64>,
    /// Active frames entering the FwSNR average.
    pub frames_compared: usize,
    pub lag_samples: isize,
    pub skipped_lp_frames: usize,
}

impl UtteranceMetrics {
    pub fn to_record(&self, name: &str) -> Record {
        let mut r = Record::new()
            .with("record", "utterance")
            .with("name", name)
            .with("fwsnr_db", self.fwsnr_db)
            .with("cd", self.cd)
            .with("llr", self.llr);
        if let Some(l) = self.lsd_db {
            r.set("lsd_db", l);
        }
        r.with("frames", self.frames_compared)
            .with("lag_samples", self.lag_samples)
            .with("skipped_lp_frames", self.skipped_lp_frames)
    }
}

/// FwSNR, CD and LLR of one processed signal against its reference, after
/// the optional alignment search.
pub fn evaluate_pair(
    reference: &[f64],
    processed: &[f64],
    stft: &StftConfig,
    params: &MetricParams,
) -> Result<UtteranceMetrics> {
    params.validate()?;
    let lag = if params.align_frames > 0 {
        best_lag(reference, processed, params.align_frames * stft.hop)
    } else {
        0
    };
    let (r, p) = apply_lag(reference, processed, lag);
    let fw = fwsnr(r, p, stft, params)?;
    let cd = cepstral_distance(r, p, stft, params)?;
    let ll = llr(r, p, stft, params)?;
    Ok(UtteranceMetrics {
        fwsnr_db: fw.mean_db,
        cd: cd.value,
        llr: ll.value,
        lsd_db: None,
        frames_compared: fw.active_frames,
        lag_samples: lag,
        skipped_lp_frames: cd.skipped_frames,
    })
}

/// Per-utterance metrics and their corpus means.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub utterances: Vec<(String, UtteranceMetrics)>,
}

impl MetricReport {
    pub fn push(&mut self, name: impl Into<String>, m: UtteranceMetrics) {
        self.utterances.push((name.into(), m));
    }

    fn mean_of(&self, f: impl Fn(&UtteranceMetrics) -> Option<f64>) -> Option<f64> {
        let v: Vec<f64> = self.utterances.iter().filter_map(|(_, m)| f(m)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn mean_fwsnr_db(&self) -> Option<f64> {
        self.mean_of(|m| Some(m.fwsnr_db))
    }

    pub fn mean_cd(&self) -> Option<f64> {
        self.mean_of(|m| Some(m.cd))
    }

    pub fn mean_llr(&self) -> Option<f64> {
        self.mean_of(|m| Some(m.llr))
    }

    pub fn mean_lsd_db(&self) -> Option<f64> {
        self.mean_of(|m| m.lsd_db)
    }

    pub fn summary_record(&self) -> Record {
        let mut r = Record::new()
            .with("record", "summary")
            .with("utterances", self.utterances.len());
        for (key, v) in [
            ("fwsnr_db", self.mean_fwsnr_db()),
            ("cd", self.mean_cd()),
            ("llr", self.mean_llr()),
            ("lsd_db", self.mean_lsd_db()),
        ] {
            if let Some(v) = v {
                r.set(key, v);
            }
        }
        let frames: usize = self.utterances.iter().map(|(_, m)| m.frames_compared).sum();
        r.with("frames", frames)
    }

    /// One record per utterance followed by the summary.
    pub fn to_records(&self) -> Vec<Record> {
        let mut out: Vec<Record> = self
            .utterances
            .iter()
            .map(|(n, m)| m.to_record(n))
            .collect();
        out.push(self.summary_record());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn speechy(seed: u64) -> Vec<f64> {
        crate::room_sim::make_test_corpus(seed, 1, 1.0, 16000).remove(0)
    }

    #[test]
    fn lsd_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Array2<f64> = Array2::from_shape_simple_fn((7, 9), || rng.random_range(0.01..5.0));
        assert_eq!(lsd(a.view(), a.view()).unwrap().mean_db, 0.0);
        let b = &a * 10.0;
        let r = lsd(a.view(), b.view()).unwrap();
        for v in &r.per_frame_db {
            assert!((v - 10.0).abs() < 1e-12);
        }
        let c: Array2<f64> = Array2::from_shape_simple_fn((7, 9), || rng.random_range(0.01..5.0));
        let mut oracle = 0.0;
        for n in 0..7 {
            let mut s = 0.0;
            for k in 0..9 {
                s += (10.0 * a[[n, k]].log10() - 10.0 * c[[n, k]].log10()).abs();
            }
            oracle += s / 9.0;
        }
        oracle /= 7.0;
        let got = lsd(a.view(), c.view()).unwrap().mean_db;
        assert!((got - oracle).abs() < 1e-12);
        let back = lsd(c.view(), a.view()).unwrap().mean_db;
        assert!((got - back).abs() < 1e-12);
        assert!(lsd(a.view(), c.slice(ndarray::s![..6, ..]).view()).is_err());
        let mut z = a.clone();
        z[[2, 3]] = 0.0;
        assert!(matches!(
            lsd(z.view(), a.view()),
            Err(Error::NonPositivePsd { frame: 2, bin: 3, .. })
        ));
    }

    #[test]
    fn fwsnr_identity_hits_clamp() {
        let x = speechy(2);
        let r = fwsnr(&x, &x, &StftConfig::default(), &MetricParams::default()).unwrap();
        assert_eq!(r.mean_db, 35.0);
    }

    #[test]
    fn fwsnr_zero_db_noise_is_in_band() {
        let x = noise(3, 16000);
        let n = noise(4, 16000);
        let y: Vec<f64> = x.iter().zip(&n).map(|(a, b)| a + b).collect();
        let r = fwsnr(&x, &y, &StftConfig::default(), &MetricParams::default()).unwrap();
        assert!((-10.0..=10.0).contains(&r.mean_db), "{}", r.mean_db);
    }

    #[test]
    fn fwsnr_silence_is_an_error() {
        let z = vec![0.0; 4000];
        assert!(matches!(
            fwsnr(&z, &z, &StftConfig::default(), &MetricParams::default()),
            Err(Error::NoActiveFrames)
        ));
    }

    #[test]
    fn fwsnr_monotone_in_noise() {
        let x = speechy(5);
        let n = noise(6, x.len());
        let cfg = StftConfig::default();
        let mut last = f64::INFINITY;
        for s in [0.001, 0.01, 0.05, 0.2] {
            let y: Vec<f64> = x.iter().zip(&n).map(|(a, b)| a + s * b).collect();
            let v = fwsnr(&x, &y, &cfg, &MetricParams::default()).unwrap().mean_db;
            assert!(v <= last + 1e-12, "{s}: {v} > {last}");
            last = v;
        }
    }

    #[test]
    fn filterbank_covers_every_bin() {
        let bank = mel_filterbank(25, 257, 16000);
        for k in 0..257 {
            let s: f64 = bank.iter().map(|b| b[k]).sum();
            assert!(s > 0.0, "bin {k}");
        }
    }

    #[test]
    fn cd_identity_and_gain_invariance() {
        let x = speechy(7);
        let cfg = StftConfig::default();
        let p = MetricParams::default();
        assert_eq!(cepstral_distance(&x, &x, &cfg, &p).unwrap().value, 0.0);
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        assert_eq!(cepstral_distance(&x, &x2, &cfg, &p).unwrap().value, 0.0);
        assert_eq!(llr(&x, &x, &cfg, &p).unwrap().value, 0.0);
    }

    /// Independent route: direct normal-equation solve and the cepstrum of
    /// `ln(1/|A|^2)` via a dense DFT.
    fn cd_oracle_frame(a: &[f64], b: &[f64], order: usize) -> f64 {
        fn lp(frame: &[f64], p: usize) -> Vec<f64> {
            let r: Vec<f64> = (0..=p)
                .map(|l| (0..frame.len() - l).map(|n| frame[n] * frame[n + l]).sum())
                .collect();
            // Gaussian elimination on R a = -r
            let mut m = vec![vec![0.0; p + 1]; p];
            for i in 0..p {
                for j in 0..p {
                    m[i][j] = r[i.abs_diff(j)];
                }
                m[i][p] = -r[i + 1];
            }
            for c in 0..p {
                let piv = (c..p).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
                m.swap(c, piv);
                for rr in 0..p {
                    if rr != c {
                        let f = m[rr][c] / m[c][c];
                        for k in c..=p {
                            m[rr][k] -= f * m[c][k];
                        }
                    }
                }
            }
            let mut poly = vec![1.0];
            poly.extend((0..p).map(|i| m[i][p] / m[i][i]));
            poly
        }
        fn cep(poly: &[f64], q: usize) -> f64 {
            let n = 4096;
            let mut acc = 0.0;
            for k in 0..n {
                let w = 2.0 * PI * k as f64 / n as f64;
                let (mut re, mut im) = (0.0, 0.0);
                for (i, a) in poly.iter().enumerate() {
                    re += a * (w * i as f64).cos();
                    im -= a * (w * i as f64).sin();
                }
                acc += -(re * re + im * im).ln() * (w * q as f64).cos();
            }
            // ln(1/|A|^2) = sum_q 2 c_q cos(wq)
            acc / n as f64
        }
        let (pa, pb) = (lp(a, order), lp(b, order));
        let s: f64 = (1..=order).map(|q| (cep(&pa, q) - cep(&pb, q)).powi(2)).sum();
        (10.0 / LN_10) * (2.0 * s).sqrt()
    }

    #[test]
    fn cd_matches_direct_formula() {
        let cfg = StftConfig {
            window_len: 256,
            hop: 256 / 2,
            fft_size: 256,
            ..Default::default()
        };
        let p = MetricParams {
            cd_trim: 0.0,
            ..Default::default()
        };
        let x = speechy(8);
        let y = noise(9, x.len());
        let (xs, ys) = (&x[2000..2000 + 512], &y[..512]);
        let got = cepstral_distance(xs, ys, &cfg, &p).unwrap();
        let frames: Vec<_> = lp_frames(xs, &cfg).zip(lp_frames(ys, &cfg)).collect();
        assert_eq!(frames.len(), got.per_frame.len());
        for ((fa, fb), v) in frames.iter().zip(&got.per_frame) {
            let want = cd_oracle_frame(fa, fb, 10);
            assert!((want - v).abs() < 1e-6 * want.max(1.0), "{want} vs {v}");
        }
    }

    #[test]
    fn llr_matches_explicit_quadratic_forms() {
        let cfg = StftConfig::default();
        let x = speechy(10);
        let y = noise(11, x.len());
        let got = llr(&x, &y, &cfg, &MetricParams::default()).unwrap();
        let mut oracle = Vec::new();
        for (fa, fb) in lp_frames(&x, &cfg).zip(lp_frames(&y, &cfg)) {
            let r: Vec<f64> = (0..=10)
                .map(|l| (0..fa.len() - l).map(|n| fa[n] * fa[n + l]).sum())
                .collect();
            let rp: Vec<f64> = (0..=10)
                .map(|l| (0..fb.len() - l).map(|n| fb[n] * fb[n + l]).sum())
                .collect();
            let (Ok(a), Ok(b)) = (levinson_durbin(&r, 10), levinson_durbin(&rp, 10)) else {
                continue;
            };
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..=10 {
                for j in 0..=10 {
                    let rij = r[if i > j { i - j } else { j - i }];
                    num += b.poly[i] * rij * b.poly[j];
                    den += a.poly[i] * rij * a.poly[j];
                }
            }
            oracle.push((num / den).ln());
        }
        assert_eq!(oracle.len(), got.per_frame.len());
        for (a, b) in oracle.iter().zip(&got.per_frame) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!((median(&oracle) - got.value).abs() < 1e-9);
    }

    #[test]
    fn llr_white_vs_lowpassed_is_positive() {
        let x = noise(12, 16000);
        let mut y = vec![0.0; x.len()];
        let mut s = 0.0;
        for (o, v) in y.iter_mut().zip(&x) {
            s = 0.95 * s + 0.05 * v;
            *o = s;
        }
        let cfg = StftConfig::default();
        let v = llr(&x, &y, &cfg, &MetricParams::default()).unwrap().value;
        assert!(v > 0.0, "{v}");
    }

    #[test]
    fn lag_recovered() {
        let x = noise(13, 4000);
        let mut y = vec![0.0; 37];
        y.extend_from_slice(&x[..4000 - 37]);
        assert_eq!(best_lag(&x, &y, 256), 37);
        let (a, b) = apply_lag(&x, &y, 37);
        assert_eq!(a[..100], b[..100]);
        assert_eq!(best_lag(&y, &x, 256), -37);
    }

    #[test]
    fn evaluate_pair_identity() {
        let x = speechy(14);
        let m = evaluate_pair(&x, &x, &StftConfig::default(), &MetricParams::default()).unwrap();
        assert_eq!((m.fwsnr_db, m.cd, m.llr, m.lag_samples), (35.0, 0.0, 0.0, 0));
        let mut report = MetricReport::default();
        report.push("a", m.clone());
        report.push("b", m);
        let recs = report.to_records();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[2].get("record"), Some("summary"));
        assert_eq!(recs[2].parse_field::<f64>("fwsnr_db"), Some(35.0));
    }
}

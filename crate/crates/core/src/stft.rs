//! Short-time Fourier analysis and weighted overlap-add synthesis.
//!
//! Analysis and synthesis both use a square-root periodic Hann window, so the
//! product window is a periodic Hann that overlap-adds to a constant whenever
//! the hop divides the window length at least twice. Synthesis normalizes by
//! the accumulated product window, which makes `synthesize(analyze(x))` exact
//! everywhere the window sum is not vanishing (all but a few edge samples).

use std::f64::consts::PI;

use ndarray::{Array3, ArrayView2, Axis};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub sample_rate_hz: u32,
    pub window_len: usize,
    pub hop: usize,
    pub fft_size: usize,
}

impl Default for StftConfig {
    /// 32 ms window, 75% overlap at 16 kHz.
    fn default() -> Self {
        StftConfig {
            sample_rate_hz: 16_000,
            window_len: 512,
            hop: 128,
            fft_size: 512,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.sample_rate_hz == 0 || self.window_len == 0 || self.hop == 0 {
            return bad("sample rate, window length and hop must be positive".into());
        }
        if self.window_len % self.hop != 0 {
            return bad(format!(
                "hop {} does not divide window length {}",
                self.hop, self.window_len
            ));
        }
        if self.window_len / self.hop < 2 {
            return bad("window must overlap (window_len / hop >= 2)".into());
        }
        if self.fft_size < self.window_len || self.fft_size % 2 != 0 {
            return bad(format!(
                "fft_size {} must be even and >= window length {}",
                self.fft_size, self.window_len
            ));
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of complete frames that fit in `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        if len < self.window_len {
            0
        } else {
            (len - self.window_len) / self.hop + 1
        }
    }

    /// Number of samples spanned by `frames` frames.
    pub fn signal_len(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.window_len
        }
    }

    /// Square-root periodic Hann window, used for both analysis and synthesis.
    pub fn window(&self) -> Vec<f64> {
        let n = self.window_len as f64;
        (0..self.window_len)
            .map(|i| (PI * i as f64 / n).sin())
            .collect()
    }

    /// Overlap-add constant of the product window in the fully covered region.
    pub fn cola_gain(&self) -> f64 {
        self.window_len as f64 / (2.0 * self.hop as f64)
    }

    pub fn bin_frequency_hz(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate_hz as f64 / self.fft_size as f64
    }
}

/// Complex STFT indexed `(channel, frame, bin)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    data: Array3<Complex64>,
    config: StftConfig,
}

impl ComplexSpectrogram {
    pub fn new(data: Array3<Complex64>, config: StftConfig) -> Result<Self> {
        config.validate()?;
        if data.shape()[2] != config.num_bins() {
            return Err(Error::DimensionMismatch(format!(
                "spectrogram has {} bins, config implies {}",
                data.shape()[2],
                config.num_bins()
            )));
        }
        if data.shape()[0] == 0 {
            return Err(Error::DimensionMismatch("spectrogram has no channels".into()));
        }
        Ok(ComplexSpectrogram { data, config })
    }

    pub fn zeros(channels: usize, frames: usize, config: StftConfig) -> Result<Self> {
        Self::new(
            Array3::zeros((channels, frames, config.num_bins())),
            config,
        )
    }

    pub fn num_channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn num_frames(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn num_bins(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn data(&self) -> &Array3<Complex64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<Complex64> {
        &mut self.data
    }

    pub fn into_data(self) -> Array3<Complex64> {
        self.data
    }

    #[inline]
    pub fn get(&self, channel: usize, frame: usize, bin: usize) -> Complex64 {
        self.data[[channel, frame, bin]]
    }

    /// `(frame, bin)` view of one channel.
    pub fn channel_view(&self, channel: usize) -> ArrayView2<'_, Complex64> {
        self.data.index_axis(Axis(0), channel)
    }

    /// Copy of a single channel as its own spectrogram.
    pub fn channel(&self, channel: usize) -> ComplexSpectrogram {
        let view = self.channel_view(channel);
        ComplexSpectrogram {
            data: view.to_owned().insert_axis(Axis(0)),
            config: self.config,
        }
    }

    /// Spectrogram restricted to the first `channels` channels.
    pub fn first_channels(&self, channels: usize) -> Result<ComplexSpectrogram> {
        if channels == 0 || channels > self.num_channels() {
            return Err(Error::OutOfRange(format!(
                "requested {channels} channels from a {}-channel spectrogram",
                self.num_channels()
            )));
        }
        Ok(ComplexSpectrogram {
            data: self
                .data
                .slice(ndarray::s![..channels, .., ..])
                .to_owned(),
            config: self.config,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Total energy `sum |X|^2` over all cells.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Analyze equally long channels into a multichannel spectrogram.
pub fn analyze<S: AsRef<[f64]>>(signals: &[S], config: &StftConfig) -> Result<ComplexSpectrogram> {
    config.validate()?;
    let first = signals.first().ok_or(Error::EmptySignal)?.as_ref();
    let len = first.len();
    if len == 0 {
        return Err(Error::EmptySignal);
    }
    for (channel, s) in signals.iter().enumerate() {
        if s.as_ref().len() != len {
            return Err(Error::ChannelLengthMismatch {
                channel,
                len: s.as_ref().len(),
                expected: len,
            });
        }
    }
    if len < config.window_len {
        return Err(Error::SignalTooShort {
            len,
            window: config.window_len,
        });
    }

    let frames = config.num_frames(len);
    let bins = config.num_bins();
    let window = config.window();
    let fft = FftPlanner::new().plan_fft_forward(config.fft_size);
    let mut buf = vec![Complex64::new(0.0, 0.0); config.fft_size];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut data = Array3::zeros((signals.len(), frames, bins));

    for (m, s) in signals.iter().enumerate() {
        let s = s.as_ref();
        for n in 0..frames {
            let start = n * config.hop;
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = if i < config.window_len {
                    Complex64::new(s[start + i] * window[i], 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            for k in 0..bins {
                data[[m, n, k]] = buf[k];
            }
        }
    }
    ComplexSpectrogram::new(data, *config)
}

/// Weighted overlap-add synthesis of a single-channel spectrogram.
///
/// Returns `(frames - 1) * hop + window_len` samples.
pub fn synthesize(spec: &ComplexSpectrogram, config: &StftConfig) -> Result<Vec<f64>> {
    config.validate()?;
    if spec.config() != config {
        return Err(Error::InvalidConfig(
            "spectrogram was produced with a different STFT configuration".into(),
        ));
    }
    if spec.num_channels() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "synthesis expects one channel, got {}",
            spec.num_channels()
        )));
    }
    let frames = spec.num_frames();
    if frames == 0 {
        return Err(Error::EmptySignal);
    }

    let k_full = config.fft_size;
    let bins = config.num_bins();
    let window = config.window();
    let ifft = FftPlanner::new().plan_fft_inverse(k_full);
    let mut buf = vec![Complex64::new(0.0, 0.0); k_full];
    let mut scratch = vec![Complex64::new(0.0, 0.0); ifft.get_inplace_scratch_len()];

    let out_len = config.signal_len(frames);
    let mut out = vec![0.0; out_len];
    let mut wsum = vec![0.0; out_len];
    let scale = 1.0 / k_full as f64;

    for n in 0..frames {
        buf[0] = Complex64::new(spec.get(0, n, 0).re, 0.0);
        for k in 1..bins - 1 {
            let v = spec.get(0, n, k);
            buf[k] = v;
            buf[k_full - k] = v.conj();
        }
        buf[bins - 1] = Complex64::new(spec.get(0, n, bins - 1).re, 0.0);
        ifft.process_with_scratch(&mut buf, &mut scratch);

        let start = n * config.hop;
        for i in 0..config.window_len {
            out[start + i] += buf[i].re * scale * window[i];
            wsum[start + i] += window[i] * window[i];
        }
    }

    // Bounded normalization at the first and last few samples where the
    // window sum vanishes; exact elsewhere.
    let min_gain = 0.01 * config.cola_gain();
    for (y, w) in out.iter_mut().zip(&wsum) {
        *y /= w.max(min_gain);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn relative_interior_error(x: &[f64], y: &[f64], margin: usize) -> f64 {
        let end = y.len().min(x.len()) - margin;
        let (mut num, mut den) = (0.0, 0.0);
        for i in margin..end {
            num += (x[i] - y[i]).powi(2);
            den += x[i] * x[i];
        }
        (num / den).sqrt()
    }

    #[test]
    fn config_validation() {
        assert!(StftConfig::default().validate().is_ok());
        assert_eq!(StftConfig::default().num_bins(), 257);
        let bad_hop = StftConfig {
            hop: 100,
            ..Default::default()
        };
        assert!(bad_hop.validate().is_err());
        let small_fft = StftConfig {
            fft_size: 256,
            ..Default::default()
        };
        assert!(small_fft.validate().is_err());
        let no_overlap = StftConfig {
            hop: 512,
            ..Default::default()
        };
        assert!(no_overlap.validate().is_err());
    }

    #[test]
    fn impulse_has_flat_first_frame() {
        let cfg = StftConfig::default();
        let mut x = vec![0.0; 2048];
        x[0] = 1.0;
        let spec = analyze(&[x], &cfg).unwrap();
        let w0 = cfg.window()[0];
        for k in 0..cfg.num_bins() {
            assert!((spec.get(0, 0, k).norm() - w0).abs() < 1e-15);
        }
        // sample 0 of a periodic sqrt-Hann is zero; check a shifted impulse too
        let mut x = vec![0.0; 2048];
        x[10] = 1.0;
        let spec = analyze(&[x], &cfg).unwrap();
        let w10 = cfg.window()[10];
        for k in 0..cfg.num_bins() {
            assert!((spec.get(0, 0, k).norm() - w10).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_signal_concentrates_in_dc() {
        let cfg = StftConfig::default();
        let x = vec![1.0; 4096];
        let spec = analyze(&[x], &cfg).unwrap();
        let wsum: f64 = cfg.window().iter().sum();
        for n in 0..spec.num_frames() {
            assert!((spec.get(0, n, 0).re - wsum).abs() < 1e-9);
            // sqrt-Hann sidelobes fall as 1/(4k^2 - 1)
            for k in 6..cfg.num_bins() {
                assert!(spec.get(0, n, k).norm() < 1e-2 * wsum);
            }
        }
    }

    #[test]
    fn round_trip_random_signal() {
        let cfg = StftConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..16_000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let spec = analyze(&[x.clone()], &cfg).unwrap();
        let y = synthesize(&spec, &cfg).unwrap();
        assert!(relative_interior_error(&x, &y, cfg.window_len / 2) < 1e-6);
    }

    #[test]
    fn round_trip_tone() {
        let cfg = StftConfig::default();
        let fs = cfg.sample_rate_hz as f64;
        let x: Vec<f64> = (0..8000)
            .map(|i| 0.5 * (2.0 * PI * 440.0 * i as f64 / fs).sin())
            .collect();
        let spec = analyze(&[x.clone()], &cfg).unwrap();
        let y = synthesize(&spec, &cfg).unwrap();
        let margin = cfg.window_len / 2;
        for i in margin..y.len() - margin {
            assert!((x[i] - y[i]).abs() < 1e-6 * 0.5);
        }
    }

    #[test]
    fn zero_spectrogram_synthesizes_silence() {
        let cfg = StftConfig::default();
        let spec = ComplexSpectrogram::zeros(1, 10, cfg).unwrap();
        let y = synthesize(&spec, &cfg).unwrap();
        assert_eq!(y.len(), cfg.signal_len(10));
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_frame_output_is_local() {
        let cfg = StftConfig::default();
        let mut spec = ComplexSpectrogram::zeros(1, 12, cfg).unwrap();
        for k in 0..cfg.num_bins() {
            spec.data_mut()[[0, 5, k]] = Complex64::new(1.0, 0.5);
        }
        let y = synthesize(&spec, &cfg).unwrap();
        let span = 5 * cfg.hop..5 * cfg.hop + cfg.window_len;
        for (i, v) in y.iter().enumerate() {
            if !span.contains(&i) {
                assert_eq!(*v, 0.0, "leak at sample {i}");
            }
        }
        assert!(y[span].iter().any(|v| *v != 0.0));
    }

    #[test]
    fn parseval_per_frame() {
        let cfg = StftConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..4096).map(|_| rng.random_range(-1.0..1.0)).collect();
        let spec = analyze(&[x.clone()], &cfg).unwrap();
        let w = cfg.window();
        let kf = cfg.fft_size as f64;
        for n in 0..spec.num_frames() {
            let time: f64 = (0..cfg.window_len)
                .map(|i| (x[n * cfg.hop + i] * w[i]).powi(2))
                .sum();
            let bins = cfg.num_bins();
            let mut freq = spec.get(0, n, 0).norm_sqr() + spec.get(0, n, bins - 1).norm_sqr();
            for k in 1..bins - 1 {
                freq += 2.0 * spec.get(0, n, k).norm_sqr();
            }
            freq /= kf;
            assert!(((freq - time) / time).abs() < 1e-9);
        }
    }

    #[test]
    fn analysis_errors() {
        let cfg = StftConfig::default();
        let empty: [Vec<f64>; 0] = [];
        assert!(matches!(analyze(&empty, &cfg), Err(Error::EmptySignal)));
        assert!(matches!(
            analyze(&[Vec::<f64>::new()], &cfg),
            Err(Error::EmptySignal)
        ));
        assert!(matches!(
            analyze(&[vec![0.0; 1000], vec![0.0; 999]], &cfg),
            Err(Error::ChannelLengthMismatch { channel: 1, .. })
        ));
        assert!(matches!(
            analyze(&[vec![0.0; 100]], &cfg),
            Err(Error::SignalTooShort { .. })
        ));
    }

    #[test]
    fn synthesis_rejects_mismatched_config() {
        let cfg = StftConfig::default();
        let spec = ComplexSpectrogram::zeros(1, 4, cfg).unwrap();
        let other = StftConfig {
            hop: 256,
            ..cfg
        };
        assert!(synthesize(&spec, &other).is_err());
        let stereo = ComplexSpectrogram::zeros(2, 4, cfg).unwrap();
        assert!(synthesize(&stereo, &cfg).is_err());
    }

    #[test]
    fn frames_past_the_end_are_dropped() {
        let cfg = StftConfig::default();
        let spec = analyze(&[vec![0.1; 1000]], &cfg).unwrap();
        assert_eq!(spec.num_frames(), (1000 - 512) / 128 + 1);
    }
}

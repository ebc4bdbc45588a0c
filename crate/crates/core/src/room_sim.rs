//! Shoebox-room impulse responses by the image-source method, early/late
//! splitting, convolution and a synthetic speech-like corpus.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::Audio;

pub const SPEED_OF_SOUND: f64 = 343.0;
/// Early/late boundary after the direct path: two 8 ms frame hops.
pub const DEFAULT_BOUNDARY_MS: f64 = 16.0;
/// Taps of the windowed-sinc fractional delay kernel.
pub const SINC_TAPS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomScene {
    /// Room extent along x, y and z in metres.
    pub room_dims: [f64; 3],
    pub source: [f64; 3],
    pub mics: Vec<[f64; 3]>,
    /// Wall energy absorption, identical for all six walls.
    pub absorption: f64,
    #[serde(default = "default_max_order")]
    pub max_order: usize,
    #[serde(default = "default_rate")]
    pub sample_rate_hz: u32,
    #[serde(default = "default_speed")]
    pub speed_of_sound: f64,
    /// Impulse response length in seconds; `None` uses 1.5 x the Sabine
    /// reverberation time, at least 0.1 s.
    #[serde(default)]
    pub rir_length_s: Option<f64>,
}

fn default_max_order() -> usize {
    60
}

fn default_rate() -> u32 {
    16_000
}

fn default_speed() -> f64 {
    SPEED_OF_SOUND
}

/// `count` microphones on a horizontal circle, the first on the +x axis.
pub fn uca(center: [f64; 3], radius: f64, count: usize) -> Vec<[f64; 3]> {
    (0..count)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / count as f64;
            [
                center[0] + radius * a.cos(),
                center[1] + radius * a.sin(),
                center[2],
            ]
        })
        .collect()
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

impl RoomScene {
    pub fn new(room_dims: [f64; 3], source: [f64; 3], mics: Vec<[f64; 3]>, absorption: f64) -> Self {
        RoomScene {
            room_dims,
            source,
            mics,
            absorption,
            max_order: default_max_order(),
            sample_rate_hz: default_rate(),
            speed_of_sound: SPEED_OF_SOUND,
            rir_length_s: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.room_dims.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::Scene("room dimensions must be positive".into()));
        }
        if !(self.absorption > 0.0 && self.absorption <= 1.0) {
            return Err(Error::Scene(format!(
                "absorption {} outside (0, 1]",
                self.absorption
            )));
        }
        if self.mics.is_empty() {
            return Err(Error::Scene("no microphones".into()));
        }
        if self.sample_rate_hz == 0 || !(self.speed_of_sound > 0.0) {
            return Err(Error::Scene("sample rate and speed of sound must be positive".into()));
        }
        if let Some(l) = self.rir_length_s {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Scene("RIR length must be positive".into()));
            }
        }
        let inside = |p: &[f64; 3]| (0..3).all(|i| p[i] > 0.0 && p[i] < self.room_dims[i]);
        if !inside(&self.source) {
            return Err(Error::Scene(format!("source {:?} outside the room", self.source)));
        }
        for (i, m) in self.mics.iter().enumerate() {
            if !inside(m) {
                return Err(Error::Scene(format!("microphone {i} at {m:?} outside the room")));
            }
        }
        Ok(())
    }

    pub fn sabine_rt60(&self) -> f64 {
        sabine_rt60(self.room_dims, self.absorption)
    }

    pub fn rir_len(&self) -> usize {
        let secs = self
            .rir_length_s
            .unwrap_or_else(|| (1.5 * self.sabine_rt60()).max(0.1));
        (secs * self.sample_rate_hz as f64).ceil() as usize
    }

    /// Direct-path delay in (fractional) samples to each microphone.
    pub fn direct_delays(&self) -> Vec<f64> {
        self.mics
            .iter()
            .map(|&m| distance(self.source, m) / self.speed_of_sound * self.sample_rate_hz as f64)
            .collect()
    }
}

/// `0.161 V / (alpha S)` in seconds.
pub fn sabine_rt60(room_dims: [f64; 3], absorption: f64) -> f64 {
    let [x, y, z] = room_dims;
    let volume = x * y * z;
    let surface = 2.0 * (x * y + x * z + y * z);
    0.161 * volume / (absorption * surface)
}

/// Per-microphone impulse responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    pub taps: Vec<Vec<f64>>,
    pub sample_rate_hz: u32,
    pub early_late_boundary_ms: f64,
}

impl Rir {
    pub fn new(taps: Vec<Vec<f64>>, sample_rate_hz: u32) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::EmptySignal);
        }
        if taps.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("RIR taps".into()));
        }
        Ok(Rir {
            taps,
            sample_rate_hz,
            early_late_boundary_ms: DEFAULT_BOUNDARY_MS,
        })
    }

    /// Unit impulse at every microphone.
    pub fn identity(num_mics: usize, sample_rate_hz: u32) -> Self {
        Rir {
            taps: vec![vec![1.0]; num_mics],
            sample_rate_hz,
            early_late_boundary_ms: DEFAULT_BOUNDARY_MS,
        }
    }

    pub fn num_mics(&self) -> usize {
        self.taps.len()
    }

    pub fn len(&self) -> usize {
        self.taps.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_audio(&self) -> Audio {
        let n = self.len();
        let channels = self
            .taps
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.resize(n, 0.0);
                t
            })
            .collect();
        Audio {
            sample_rate: self.sample_rate_hz,
            channels,
        }
    }

    pub fn from_audio(audio: Audio) -> Result<Self> {
        Rir::new(audio.channels, audio.sample_rate)
    }

    pub fn boundary_samples(&self, boundary_ms: f64) -> usize {
        (boundary_ms * self.sample_rate_hz as f64 / 1000.0).round().max(0.0) as usize
    }

    /// Index of the largest-magnitude tap of `channel`, taken as the
    /// direct-path arrival.
    pub fn direct_index(&self, channel: usize) -> usize {
        let t = &self.taps[channel];
        (0..t.len())
            .max_by(|&a, &b| t[a].abs().total_cmp(&t[b].abs()).then(b.cmp(&a)))
            .unwrap_or(0)
    }
}

/// Windowed-sinc fractional delay: adds `gain * h(n - delay)` into `out` at
/// the eight integer taps surrounding `delay`.
fn add_fractional_impulse(out: &mut [f64], delay: f64, gain: f64) {
    let base = delay.floor() as isize;
    let half = (SINC_TAPS / 2) as isize;
    if (delay - delay.round()).abs() < 1e-12 {
        let i = delay.round() as isize;
        if i >= 0 && (i as usize) < out.len() {
            out[i as usize] += gain;
        }
        return;
    }
    for i in (base - half + 1)..=(base + half) {
        if i < 0 || i as usize >= out.len() {
            continue;
        }
        let t = i as f64 - delay;
        let sinc = (PI * t).sin() / (PI * t);
        // Hann window spanning the kernel support
        let w = 0.5 * (1.0 + (PI * t / half as f64).cos());
        out[i as usize] += gain * sinc * w;
    }
}

/// Image-source impulse responses with wall reflection coefficient
/// `sqrt(1 - alpha)` and spherical spreading `1 / (4 pi r)`.
///
/// Images are enumerated in a fixed order, so the output is bit-reproducible.
pub fn image_source_rir(scene: &RoomScene) -> Result<Rir> {
    scene.validate()?;
    let beta = (1.0 - scene.absorption).sqrt();
    let len = scene.rir_len();
    let fs = scene.sample_rate_hz as f64;
    let c = scene.speed_of_sound;
    let max_dist = len as f64 / fs * c;
    let n_max = scene.max_order as isize;
    let [lx, ly, lz] = scene.room_dims;
    let s = scene.source;

    let mut taps = vec![vec![0.0; len]; scene.mics.len()];
    for (mic, out) in scene.mics.iter().zip(taps.iter_mut()) {
        for nx in -n_max..=n_max {
            for qx in 0..2isize {
                let rx = (nx - qx).unsigned_abs() + nx.unsigned_abs();
                if rx > scene.max_order {
                    continue;
                }
                let px = (1 - 2 * qx) as f64 * s[0] + 2.0 * nx as f64 * lx;
                let dx = px - mic[0];
                if dx.abs() > max_dist {
                    continue;
                }
                for ny in -n_max..=n_max {
                    for qy in 0..2isize {
                        let ry = rx + (ny - qy).unsigned_abs() + ny.unsigned_abs();
                        if ry > scene.max_order {
                            continue;
                        }
                        let py = (1 - 2 * qy) as f64 * s[1] + 2.0 * ny as f64 * ly;
                        let dy = py - mic[1];
                        if dx * dx + dy * dy > max_dist * max_dist {
                            continue;
                        }
                        for nz in -n_max..=n_max {
                            for qz in 0..2isize {
                                let refl = ry + (nz - qz).unsigned_abs() + nz.unsigned_abs();
                                if refl > scene.max_order {
                                    continue;
                                }
                                let gain_refl = if refl == 0 { 1.0 } else { beta.powi(refl as i32) };
                                if gain_refl == 0.0 {
                                    continue;
                                }
                                let pz = (1 - 2 * qz) as f64 * s[2] + 2.0 * nz as f64 * lz;
                                let dz = pz - mic[2];
                                let d = (dx * dx + dy * dy + dz * dz).sqrt();
                                if d > max_dist {
                                    continue;
                                }
                                let gain = gain_refl / (4.0 * PI * d.max(1e-3));
                                add_fractional_impulse(out, d / c * fs, gain);
                            }
                        }
                    }
                }
            }
        }
    }
    Rir::new(taps, scene.sample_rate_hz)
}

/// Splits every channel at `boundary_ms` from the start of the response.
/// `early + late` reproduces the input sample for sample.
pub fn split_rir(rir: &Rir, boundary_ms: f64) -> (Rir, Rir) {
    split_rir_at(rir, rir.boundary_samples(boundary_ms), boundary_ms)
}

/// Splits every channel `boundary_ms` after the direct-path arrival of
/// `channel`, the split used for dereverberation references.
pub fn split_rir_after_direct(rir: &Rir, channel: usize, boundary_ms: f64) -> (Rir, Rir) {
    let b = rir.direct_index(channel) + rir.boundary_samples(boundary_ms);
    split_rir_at(rir, b, boundary_ms)
}

fn split_rir_at(rir: &Rir, b: usize, boundary_ms: f64) -> (Rir, Rir) {
    let mut early = Vec::with_capacity(rir.num_mics());
    let mut late = Vec::with_capacity(rir.num_mics());
    for t in &rir.taps {
        let cut = b.min(t.len());
        early.push(t[..cut].to_vec());
        let mut l = vec![0.0; t.len()];
        l[cut..].copy_from_slice(&t[cut..]);
        if cut == t.len() {
            l.clear();
        }
        late.push(l);
    }
    let make = |taps| Rir {
        taps,
        sample_rate_hz: rir.sample_rate_hz,
        early_late_boundary_ms: boundary_ms,
    };
    (make(early), make(late))
}

/// Full linear convolution, `a.len() + b.len() - 1` samples, via FFT.
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    if a.len().min(b.len()) <= 32 {
        return convolve_direct(a, b);
    }
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let load = |x: &[f64]| {
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (d, &v) in buf.iter_mut().zip(x) {
            d.re = v;
        }
        buf
    };
    let mut fa = load(a);
    let mut fb = load(b);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    fa[..out_len].iter().map(|c| c.re / n as f64).collect()
}

pub fn convolve_direct(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// `x_m = h_m * s` for every microphone, each `len(s) + len(h_m) - 1` long.
pub fn convolve_scene(source: &[f64], rir: &Rir) -> Vec<Vec<f64>> {
    rir.taps.iter().map(|h| convolve(source, h)).collect()
}

/// Schroeder backward integration with a least-squares line fitted to the
/// energy decay curve between -5 and -35 dB, extrapolated to -60 dB.
pub fn schroeder_rt60(taps: &[f64], sample_rate_hz: u32) -> Option<f64> {
    let mut edc = vec![0.0; taps.len()];
    let mut acc = 0.0;
    for i in (0..taps.len()).rev() {
        acc += taps[i] * taps[i];
        edc[i] = acc;
    }
    let total = *edc.first()?;
    if total <= 0.0 {
        return None;
    }
    let (mut n, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, &e) in edc.iter().enumerate() {
        let db = 10.0 * (e / total).log10();
        if (-35.0..=-5.0).contains(&db) {
            let t = i as f64 / sample_rate_hz as f64;
            n += 1.0;
            sx += t;
            sy += db;
            sxx += t * t;
            sxy += t * db;
        }
    }
    if n < 2.0 {
        return None;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    (slope < 0.0).then(|| -60.0 / slope)
}

/// Deterministic harmonic-plus-noise utterances with gliding pitch
/// (80-300 Hz), three moving formants and 3-8 Hz syllabic modulation.
/// Each utterance peaks at 0.5.
pub fn make_test_corpus(seed: u64, count: usize, duration_s: f64, sample_rate_hz: u32) -> Vec<Vec<f64>> {
    (0..count)
        .map(|i| synth_utterance(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i as u64), duration_s, sample_rate_hz))
        .collect()
}

fn synth_utterance(seed: u64, duration_s: f64, sample_rate_hz: u32) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = sample_rate_hz as f64;
    let n = (duration_s * fs).round() as usize;
    let nyq = fs / 2.0;

    let f0_base = rng.random_range(100.0..200.0);
    let f0_depth = rng.random_range(0.1..0.35);
    let f0_rate = rng.random_range(0.3..1.5);
    let am_rate = rng.random_range(3.5..7.0);
    let am_phase = rng.random_range(0.0..2.0 * PI);

    // formant targets per syllable
    let syllables = (duration_s * am_rate).ceil() as usize + 2;
    let targets: Vec<[f64; 3]> = (0..syllables)
        .map(|_| {
            [
                rng.random_range(300.0..800.0),
                rng.random_range(900.0..2300.0),
                rng.random_range(2400.0..3300.0),
            ]
        })
        .collect();
    let levels: Vec<f64> = (0..syllables).map(|_| rng.random_range(0.5..1.0)).collect();
    let voiced: Vec<bool> = (0..syllables).map(|_| rng.random_bool(0.85)).collect();
    let bandwidths = [90.0, 120.0, 160.0];

    const BLOCK: usize = 32;
    let mut out = vec![0.0; n];
    let mut phase = 0.0f64;
    let mut amps: Vec<f64> = Vec::new();
    let mut noise_lp = 0.0;
    for start in (0..n).step_by(BLOCK) {
        let t = start as f64 / fs;
        let syl_pos = (t * am_rate + am_phase / (2.0 * PI)).max(0.0);
        let si = (syl_pos.floor() as usize).min(syllables - 2);
        let frac = syl_pos - syl_pos.floor();
        let formants: Vec<f64> = (0..3)
            .map(|j| targets[si][j] + (targets[si + 1][j] - targets[si][j]) * frac)
            .collect();
        let f0 = (f0_base * (1.0 + f0_depth * (2.0 * PI * f0_rate * t).sin()))
            .clamp(80.0, 300.0);
        let harmonics = (nyq / f0).floor() as usize;
        amps.clear();
        for h in 1..=harmonics {
            let f = h as f64 * f0;
            let mut a = 0.0;
            for (j, fc) in formants.iter().enumerate() {
                let bw = bandwidths[j];
                a += 1.0 / (1.0 + ((f - fc) / bw).powi(2)) / (1.0 + j as f64);
            }
            // glottal tilt
            amps.push(a / (1.0 + f / 1000.0));
        }
        for i in start..(start + BLOCK).min(n) {
            let ti = i as f64 / fs;
            let env = (0.5 * (1.0 - (2.0 * PI * am_rate * ti + am_phase).cos())).powf(1.5);
            let s_idx = ((ti * am_rate + am_phase / (2.0 * PI)).floor() as usize).min(syllables - 1);
            let level = levels[s_idx] * env;
            phase += 2.0 * PI * f0 / fs;
            if phase > 2.0 * PI {
                phase -= 2.0 * PI;
            }
            let mut v = 0.0;
            if voiced[s_idx] {
                for (h, a) in amps.iter().enumerate() {
                    v += a * ((h + 1) as f64 * phase).sin();
                }
            }
            let white: f64 = rng.random_range(-1.0..1.0);
            noise_lp = 0.6 * noise_lp + 0.4 * white;
            let noise_gain = if voiced[s_idx] { 0.02 } else { 0.15 };
            out[i] = level * (v + noise_gain * (white - noise_lp));
        }
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        for v in &mut out {
            *v *= 0.5 / peak;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shoebox(absorption: f64) -> RoomScene {
        let mut s = RoomScene::new(
            [6.0, 5.0, 3.0],
            [2.0, 3.5, 1.5],
            uca([4.0, 2.0, 1.2], 0.1, 4),
            absorption,
        );
        s.rir_length_s = Some(0.8);
        s
    }

    #[test]
    fn anechoic_room_has_only_direct_path() {
        let s = shoebox(1.0);
        let rir = image_source_rir(&s).unwrap();
        for (taps, delay) in rir.taps.iter().zip(s.direct_delays()) {
            let nz: Vec<usize> = (0..taps.len()).filter(|&i| taps[i] != 0.0).collect();
            assert!(nz.len() <= SINC_TAPS);
            assert!(nz.iter().all(|&i| (i as f64 - delay).abs() <= SINC_TAPS as f64 / 2.0));
        }
    }

    #[test]
    fn direct_delay_matches_geometry() {
        let s = shoebox(0.4);
        let rir = image_source_rir(&s).unwrap();
        for (m, taps) in s.mics.iter().zip(&rir.taps) {
            let expected = (distance(s.source, *m) / 343.0 * 16000.0).floor();
            let peak = (0..taps.len())
                .max_by(|&a, &b| taps[a].abs().total_cmp(&taps[b].abs()))
                .unwrap();
            assert!((peak as f64 - expected).abs() <= 1.0, "{peak} vs {expected}");
            let first = taps.iter().position(|&v| v != 0.0).unwrap();
            assert!(first as f64 >= expected - (SINC_TAPS / 2) as f64);
        }
    }

    #[test]
    fn integer_delay_is_a_single_tap() {
        let mut out = vec![0.0; 20];
        add_fractional_impulse(&mut out, 5.0, 2.0);
        assert_eq!(out[5], 2.0);
        assert_eq!(out.iter().filter(|&&v| v != 0.0).count(), 1);
        let mut frac = vec![0.0; 20];
        add_fractional_impulse(&mut frac, 5.5, 1.0);
        assert_eq!(frac.iter().filter(|&&v| v != 0.0).count(), SINC_TAPS);
        assert!((frac[5] - frac[6]).abs() < 1e-15);
    }

    #[test]
    fn rt60_near_sabine_and_monotone() {
        let mut last = f64::INFINITY;
        for alpha in [0.1, 0.3, 0.6] {
            // near-cubic room: uniform-absorption image decay is closest to diffuse
            let mut s = RoomScene::new([4.0, 4.0, 4.0], [1.7, 2.3, 1.4], vec![[2.7, 2.9, 1.2]], alpha);
            s.rir_length_s = Some(1.5 * s.sabine_rt60());
            let rir = image_source_rir(&s).unwrap();
            let rt = schroeder_rt60(&rir.taps[0], 16000).unwrap();
            if alpha == 0.3 {
                let sab = s.sabine_rt60();
                assert!((rt - sab).abs() <= 0.2 * sab, "rt {rt} vs sabine {sab}");
            }
            assert!(rt < last);
            last = rt;
        }
    }

    #[test]
    fn split_examples() {
        let rir = Rir::new(vec![vec![1.0, 2.0, 3.0, 4.0]], 1000).unwrap();
        let (e, l) = split_rir(&rir, 100.0);
        assert_eq!(e.taps[0], vec![1.0, 2.0, 3.0, 4.0]);
        assert!(l.taps[0].is_empty());
        let (e, l) = split_rir(&rir, 0.0);
        assert!(e.taps[0].is_empty());
        assert_eq!(l.taps[0], vec![1.0, 2.0, 3.0, 4.0]);
        let (e, l) = split_rir(&rir, 2.0);
        assert_eq!(e.taps[0], vec![1.0, 2.0]);
        assert_eq!(l.taps[0], vec![0.0, 0.0, 3.0, 4.0]);
    }

    #[test]
    fn convolution_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..77).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fast = convolve(&a, &b);
        let slow = convolve_direct(&a, &b);
        assert_eq!(fast.len(), 376);
        for (x, y) in fast.iter().zip(&slow) {
            assert!((x - y).abs() < 1e-9);
        }
        let id = convolve_scene(&a, &Rir::identity(2, 16000));
        assert_eq!(id, vec![a.clone(), a.clone()]);
        let mut delay = vec![0.0; 40];
        delay[39] = 1.0;
        let shifted = convolve(&a, &delay);
        for i in 0..300 {
            assert!((shifted[i + 39] - a[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn scene_validation() {
        let mut s = shoebox(0.3);
        s.source = [7.0, 1.0, 1.0];
        assert!(matches!(image_source_rir(&s), Err(Error::Scene(_))));
        let mut s = shoebox(0.3);
        s.absorption = 0.0;
        assert!(s.validate().is_err());
        let mut s = shoebox(0.3);
        s.mics.push([1.0, 1.0, 3.5]);
        assert!(s.validate().is_err());
    }

    #[test]
    fn corpus_is_deterministic() {
        let a = make_test_corpus(3, 2, 0.5, 16000);
        let b = make_test_corpus(3, 2, 0.5, 16000);
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
        assert_eq!(a[0].len(), 8000);
        assert_ne!(make_test_corpus(4, 1, 0.5, 16000)[0], a[0]);
    }

    fn flatness(x: &[f64]) -> f64 {
        let cfg = crate::stft::StftConfig::default();
        let spec = crate::stft::analyze(&[x], &cfg).unwrap();
        let bins = spec.num_bins();
        let mut psd = vec![0.0; bins];
        for t in 0..spec.num_frames() {
            for (k, p) in psd.iter_mut().enumerate() {
                *p += spec.get(0, t, k).norm_sqr();
            }
        }
        let geo = (psd.iter().map(|p| (p + 1e-20).ln()).sum::<f64>() / bins as f64).exp();
        let ari = psd.iter().sum::<f64>() / bins as f64;
        geo / ari
    }

    #[test]
    fn corpus_is_less_flat_than_noise() {
        let x = make_test_corpus(5, 1, 1.0, 16000).remove(0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w: Vec<f64> = (0..16000).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert!(flatness(&x) < 0.5 * flatness(&w));
    }

    #[test]
    fn modulation_spectrum_peaks_in_syllable_band() {
        for seed in 0..4 {
            let x = make_test_corpus(seed, 1, 3.0, 16000).remove(0);
            // 10 ms RMS envelope
            let env: Vec<f64> = x
                .chunks(160)
                .map(|c| (c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64).sqrt())
                .collect();
            let mean = env.iter().sum::<f64>() / env.len() as f64;
            let rate = 100.0;
            let mut best = (0.0, 0.0);
            let mut f = 0.5;
            while f <= 20.0 {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, e) in env.iter().enumerate() {
                    let w = 2.0 * PI * f * i as f64 / rate;
                    re += (e - mean) * w.cos();
                    im += (e - mean) * w.sin();
                }
                let p = re * re + im * im;
                if p > best.1 {
                    best = (f, p);
                }
                f += 0.25;
            }
            assert!((3.0..=8.0).contains(&best.0), "seed {seed}: peak {}", best.0);
        }
    }
}

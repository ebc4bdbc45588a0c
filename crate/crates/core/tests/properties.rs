use derevrb::io::{encode_wav, read_wav, Audio, Record, SampleFormat};
use derevrb::priors::{periodogram_prior, Periodogram};
use derevrb::room_sim::{convolve, convolve_direct, split_rir, Rir};
use derevrb::wpe::{
    build_predictor_vector, estimate_filter, update_gamma, weighted_normal_equations,
};
use derevrb::{analyze, run_wpe, synthesize, ComplexSpectrogram, MclpConfig, PsdEstimator, PsdMap, StftConfig};
use ndarray::{Array2, Array3};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_stft() -> StftConfig {
    StftConfig {
        sample_rate_hz: 8000,
        window_len: 16,
        hop: 4,
        fft_size: 16,
    }
}

fn random_spec(seed: u64, channels: usize, frames: usize, cfg: StftConfig) -> ComplexSpectrogram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = Array3::from_shape_fn((channels, frames, cfg.num_bins()), |_| {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    ComplexSpectrogram::new(data, cfg).unwrap()
}

fn random_gamma(seed: u64, frames: usize, bins: usize) -> PsdMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PsdMap::new(Array2::from_shape_fn((frames, bins), |_| rng.random_range(0.1..3.0)))
}

/// Gaussian elimination with partial pivoting on a dense complex system.
fn dense_solve(mut a: Vec<Vec<Complex64>>, mut b: Vec<Complex64>) -> Vec<Complex64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].norm().total_cmp(&a[j][col].norm()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for c in col..n {
                let v = a[col][c];
                a[row][c] -= f * v;
            }
            let v = b[col];
            b[row] -= f * v;
        }
    }
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for c in row + 1..n {
            s -= a[row][c] * x[c];
        }
        x[row] = s / a[row][row];
    }
    x
}

fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn stft_round_trip(seed in any::<u64>(), len in 512usize..6000) {
        let cfg = StftConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = synthesize(&analyze(&[&x], &cfg).unwrap(), &cfg).unwrap();
        let covered = y.len();
        prop_assert!(covered <= len && covered + cfg.hop > len);
        let (lo, hi) = (cfg.window_len, covered.saturating_sub(cfg.window_len));
        for i in lo..hi {
            prop_assert!((x[i] - y[i]).abs() < 1e-12, "sample {} differs", i);
        }
    }

    #[test]
    fn stft_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let cfg = small_stft();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let (sx, sy, sz) = (analyze(&[&x], &cfg).unwrap(), analyze(&[&y], &cfg).unwrap(), analyze(&[&z], &cfg).unwrap());
        for ((p, q), r) in sx.data().iter().zip(sy.data().iter()).zip(sz.data().iter()) {
            prop_assert!((a * p + b * q - r).norm() < 1e-12);
        }
    }

    #[test]
    fn filter_matches_brute_force(
        seed in any::<u64>(),
        frames in 3usize..=8,
        channels in 1usize..=2,
        order in 1usize..=2,
        delay in 1usize..=2,
        loaded in any::<bool>(),
    ) {
        let cfg = small_stft();
        let spec = random_spec(seed, channels, frames, cfg);
        let gamma = random_gamma(seed ^ 1, frames, cfg.num_bins());
        let config = MclpConfig {
            num_channels: channels,
            order,
            delay,
            diagonal_load_eps: if loaded { 1e-3 } else { 0.0 },
            ..Default::default()
        };
        let p = channels * order;
        if !loaded && frames < delay + p + 1 {
            // too few frames for a full-rank unloaded system
            return Ok(());
        }
        for k in 0..cfg.num_bins() {
            let zero = Complex64::new(0.0, 0.0);
            let mut r = vec![vec![zero; p]; p];
            let mut rhs = vec![zero; p];
            for n in delay..frames {
                let phi = build_predictor_vector(&spec, n, k, &config).unwrap();
                let w = 1.0 / gamma.get(n, k);
                for i in 0..p {
                    for j in 0..p {
                        r[i][j] += w * phi[i] * phi[j].conj();
                    }
                    rhs[i] += w * phi[i] * spec.get(0, n, k).conj();
                }
            }
            let trace: f64 = (0..p).map(|i| r[i][i].re).sum();
            if trace == 0.0 {
                continue;
            }
            let load = config.diagonal_load_eps * trace / p as f64;
            for (i, row) in r.iter_mut().enumerate() {
                row[i] += load;
            }
            let want = dense_solve(r, rhs);
            let got = estimate_filter(&spec, &gamma, k, &config).unwrap();
            prop_assert!(rel_err(&got, &want) < 1e-10, "bin {}: {:?} vs {:?}", k, got, want);
        }
    }

    #[test]
    fn periodogram_prior_is_update_gamma(seed in any::<u64>(), floor_exp in -12i32..-2) {
        let floor = 10f64.powi(floor_exp);
        let spec = random_spec(seed, 1, 12, small_stft());
        let want = update_gamma(&spec, floor);
        prop_assert_eq!(periodogram_prior(&spec, floor).into_inner(), want.values().clone());
        prop_assert_eq!(Periodogram::new(floor).estimate(&spec).unwrap().into_inner(), want.values().clone());
    }

    #[test]
    fn convolution_is_bilinear_and_commutative(
        a in prop::collection::vec(-1.0f64..1.0, 1..120),
        b in prop::collection::vec(-1.0f64..1.0, 1..120),
        c in -2.0f64..2.0,
    ) {
        let ab = convolve(&a, &b);
        let ba = convolve(&b, &a);
        let direct = convolve_direct(&a, &b);
        prop_assert_eq!(ab.len(), a.len() + b.len() - 1);
        for i in 0..ab.len() {
            prop_assert!((ab[i] - ba[i]).abs() < 1e-10);
            prop_assert!((ab[i] - direct[i]).abs() < 1e-10);
        }
        let ca: Vec<f64> = a.iter().map(|v| c * v).collect();
        let cab = convolve(&ca, &b);
        for i in 0..ab.len() {
            prop_assert!((cab[i] - c * ab[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn split_is_additive(
        taps in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 1..400), 1..4),
        boundary_ms in 0.0f64..30.0,
    ) {
        let len = taps[0].len();
        let taps: Vec<Vec<f64>> = taps.into_iter().map(|mut t| { t.resize(len, 0.0); t }).collect();
        let rir = Rir::new(taps, 16000).unwrap();
        let (early, late) = split_rir(&rir, boundary_ms);
        let b = rir.boundary_samples(boundary_ms).min(len);
        for m in 0..rir.num_mics() {
            // early is truncated at the boundary; late is empty when nothing follows it
            let at = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
            prop_assert_eq!(early.taps[m].len(), b);
            for i in 0..len {
                let (e, l) = (at(&early.taps[m], i), at(&late.taps[m], i));
                prop_assert_eq!(e + l, rir.taps[m][i]);
                prop_assert_eq!(if i < b { l } else { e }, 0.0);
            }
        }
    }

    #[test]
    fn record_round_trip(
        fields in prop::collection::vec(("[a-z][a-z0-9_]{0,8}", "\\PC{0,12}"), 0..6),
    ) {
        let mut r = Record::new();
        for (k, v) in &fields {
            r.set(k, v);
        }
        let parsed = Record::parse_line(&r.to_string()).unwrap();
        prop_assert_eq!(parsed, r);
    }

    #[test]
    fn float_wav_round_trip(
        samples in prop::collection::vec(-1.0f32..1.0, 1..300),
        channels in 1usize..4,
    ) {
        let audio = Audio::new(
            16000,
            (0..channels).map(|c| samples.iter().map(|&s| f64::from(s * (c + 1) as f32 / 4.0)).collect()).collect(),
        ).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        std::fs::write(&path, encode_wav(&audio, SampleFormat::Float32).unwrap()).unwrap();
        prop_assert_eq!(read_wav(&path).unwrap(), audio);
    }
}

#[test]
fn normal_equation_residual_on_full_size_bins() {
    let cfg = StftConfig::default();
    let spec = random_spec(11, 4, 120, cfg);
    let gamma = random_gamma(12, 120, cfg.num_bins());
    let config = MclpConfig::default();
    for k in [0, 1, 64, 128, 200, 256] {
        let eq = weighted_normal_equations(&spec, &gamma, k, &config).unwrap();
        let g = estimate_filter(&spec, &gamma, k, &config).unwrap();
        let p = eq.size;
        let resid: Vec<Complex64> = (0..p)
            .map(|i| (0..p).map(|j| eq.matrix[i * p + j] * g[j]).sum::<Complex64>() - eq.rhs[i])
            .collect();
        let norm = |v: &[Complex64]| v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let rel = norm(&resid) / norm(&eq.rhs);
        assert!(rel < 1e-8, "bin {k}: relative residual {rel:e}");
    }
}

#[test]
fn wpe_is_deterministic() {
    let spec = random_spec(21, 2, 40, small_stft());
    let config = MclpConfig {
        num_channels: 2,
        order: 3,
        ..Default::default()
    };
    let prior = Periodogram::new(1e-8);
    let a = run_wpe(&spec, &prior, &config).unwrap();
    let b = run_wpe(&spec, &prior, &config).unwrap();
    assert_eq!(a.residual, b.residual);
    assert_eq!(a.diagnostics, b.diagnostics);
}

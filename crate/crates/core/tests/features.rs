use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tcan_core::audio::AudioClip;
use tcan_core::features::{
    extract_features, hann_window, mel_filterbank_matrix, power_spectrum, FeatureConfig, FeatureError, FeatureExtractor,
};

fn dft_power(x: &[f64], n: usize) -> Vec<f64> {
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &v) in x.iter().enumerate() {
                let a = -2.0 * PI * (k * i % n) as f64 / n as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            re * re + im * im
        })
        .collect()
}

fn noise_clip(seconds: f64, seed: u64, gain: f64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * 16_000.0) as usize;
    AudioClip::new((0..n).map(|_| gain * rng.random_range(-1.0..1.0)).collect(), 16_000).unwrap()
}

#[test]
fn two_seconds_give_124_by_40() {
    for secs in [2.0, 2.5, 3.0] {
        let f = extract_features(&noise_clip(secs, 1, 0.3)).unwrap();
        assert_eq!((f.frames(), f.dims()), (124, 40));
    }
}

#[test]
fn fft_matches_direct_dft() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = hann_window(512);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let frame: Vec<f64> = (0..512).map(|_| rng.random_range(-1.0..1.0)).collect();
        let windowed: Vec<f64> = frame.iter().zip(&w).map(|(a, b)| a * b).collect();
        let fast = power_spectrum(&frame).unwrap();
        for (a, b) in fast.iter().zip(dft_power(&windowed, 512)) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst < 1e-9, "max deviation {worst:e}");
}

#[test]
fn short_frames_are_zero_padded() {
    let frame: Vec<f64> = (0..300).map(|i| (i as f64 * 0.37).sin()).collect();
    let windowed: Vec<f64> = frame.iter().zip(hann_window(300)).map(|(a, b)| a * b).collect();
    for (a, b) in power_spectrum(&frame).unwrap().iter().zip(dft_power(&windowed, 512)) {
        assert!((a - b).abs() < 1e-9);
    }
}

proptest! {
    #[test]
    fn parseval(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frame: Vec<f64> = (0..512).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = power_spectrum(&frame).unwrap();
        let full = p[0] + p[256] + 2.0 * p[1..256].iter().sum::<f64>();
        let time: f64 = frame.iter().zip(hann_window(512)).map(|(x, w)| (x * w).powi(2)).sum();
        prop_assert!((full / 512.0 - time).abs() < 1e-9 * time.max(1.0));
    }
}

#[test]
fn tone_peaks_at_its_bin() {
    // Bin k sits at k · 31.25 Hz.
    for k in [16usize, 64, 100, 200] {
        let hz = k as f64 * 16_000.0 / 512.0;
        let frame: Vec<f64> = (0..512).map(|i| (2.0 * PI * hz * i as f64 / 16_000.0).cos()).collect();
        let p = power_spectrum(&frame).unwrap();
        let argmax = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        assert_eq!(argmax, k);
        // A periodic Hann window leaks into exactly one neighbour on each side.
        assert!(p[k - 2] < 1e-12 * p[k] && p[k + 2] < 1e-12 * p[k]);
    }
}

#[test]
fn filterbank_matches_textbook_triangles() {
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let hz = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let top = mel(8000.0);
    let fb = mel_filterbank_matrix();
    for f in 0..40 {
        let edge = |i: usize| hz(top * i as f64 / 41.0);
        let (l, c, r) = (edge(f), edge(f + 1), edge(f + 2));
        for (b, &w) in fb.filter(f).iter().enumerate() {
            let x = b as f64 * 31.25;
            let want = if x <= l || x >= r {
                0.0
            } else if x <= c {
                (x - l) / (c - l)
            } else {
                (r - x) / (r - c)
            };
            assert!((w - want).abs() < 1e-9, "filter {f} bin {b}: {w} vs {want}");
        }
    }
}

#[test]
fn log_energy_tracks_gain_and_normalization_removes_it() {
    let raw = FeatureConfig {
        normalize: false,
        ..FeatureConfig::default()
    };
    let mut plain = FeatureExtractor::new(raw).unwrap();
    let mut norm = FeatureExtractor::new(FeatureConfig::default()).unwrap();
    let (quiet, loud) = (noise_clip(2.0, 3, 0.1), noise_clip(2.0, 3, 0.4));
    let (a, b) = (plain.extract(&quiet).unwrap(), plain.extract(&loud).unwrap());
    // Broadband energies sit far above the log floor, so the shift is 2·ln 4.
    for (x, y) in a.values().iter().zip(b.values()) {
        assert!((y - x - 2.0 * 4f64.ln()).abs() < 1e-6);
    }
    let (a, b) = (norm.extract(&quiet).unwrap(), norm.extract(&loud).unwrap());
    for (x, y) in a.values().iter().zip(b.values()) {
        assert!((x - y).abs() < 1e-6);
    }
}

#[test]
fn silence_hits_the_log_floor() {
    let mut fx = FeatureExtractor::new(FeatureConfig {
        normalize: false,
        ..FeatureConfig::default()
    })
    .unwrap();
    let f = fx.extract(&AudioClip::new(vec![0.0; 32_000], 16_000).unwrap()).unwrap();
    assert!(f.values().iter().all(|&v| v == 1e-10f64.ln()));
}

#[test]
fn rejects_short_and_mismatched_clips() {
    assert!(matches!(extract_features(&noise_clip(1.99, 4, 0.3)), Err(FeatureError::ClipTooShort { .. })));
    let wrong_rate = AudioClip::new(vec![0.1; 40_000], 8_000).unwrap();
    assert!(matches!(extract_features(&wrong_rate), Err(FeatureError::SampleRate { .. })));
}

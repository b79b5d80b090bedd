//! Speech-like surrogate clips: a sawtooth source with a wandering pitch,
//! shaped by three gliding resonators and a slow amplitude envelope.

use std::f64::consts::PI;

use rand::Rng;

use super::{DataError, Result};
use crate::audio::AudioClip;
use crate::seed::{derive_seed, rng_from, STREAM_SYNTH};

pub const DEFAULT_SYNTH_DURATION_S: f64 = 3.0;
const PEAK: f64 = 0.5;
const FORMANT_RANGES: [(f64, f64); 3] = [(300.0, 900.0), (900.0, 2500.0), (2500.0, 3500.0)];

/// Two-pole resonator whose centre frequency glides linearly over the clip.
struct Resonator {
    f_start: f64,
    f_end: f64,
    r: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn step(&mut self, x: f64, progress: f64, sample_rate: f64) -> f64 {
        let f = self.f_start + (self.f_end - self.f_start) * progress;
        let a1 = 2.0 * self.r * (2.0 * PI * f / sample_rate).cos();
        let a2 = self.r * self.r;
        let y = (1.0 - self.r) * x + a1 * self.y1 - a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

pub fn synth_clip(seed: u64, duration_s: f64, sample_rate: u32) -> Result<AudioClip> {
    if !(duration_s >= 2.5) || !duration_s.is_finite() {
        return Err(DataError::InvalidArgument(format!(
            "synthetic clips must last at least 2.5 s, got {duration_s}"
        )));
    }
    if sample_rate < 8_000 {
        return Err(DataError::InvalidArgument(format!(
            "sample rate {sample_rate} Hz cannot hold the formant range"
        )));
    }
    let mut rng = rng_from(derive_seed(seed, STREAM_SYNTH, 0));
    let fs = f64::from(sample_rate);
    let n = (duration_s * fs).round() as usize;

    let pitch_centre = rng.random_range(110.0..200.0);
    let pitch_depth = rng.random_range(10.0..45.0);
    let pitch_rate = rng.random_range(0.5..3.0);
    let pitch_phase = rng.random_range(0.0..2.0 * PI);
    let env_rate = rng.random_range(1.0..4.0);
    let env_phase = rng.random_range(0.0..2.0 * PI);
    let mut resonators: Vec<Resonator> = FORMANT_RANGES
        .iter()
        .map(|&(lo, hi)| {
            let bandwidth = rng.random_range(60.0..200.0);
            Resonator {
                f_start: rng.random_range(lo..hi),
                f_end: rng.random_range(lo..hi),
                r: (-PI * bandwidth / fs).exp(),
                y1: 0.0,
                y2: 0.0,
            }
        })
        .collect();

    let mut phase = 0.0f64;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / fs;
        let progress = i as f64 / n as f64;
        let f0 = (pitch_centre + pitch_depth * (2.0 * PI * pitch_rate * t + pitch_phase).sin()).clamp(80.0, 250.0);
        phase = (phase + f0 / fs).fract();
        let mut y = 2.0 * phase - 1.0;
        for r in &mut resonators {
            y = r.step(y, progress, fs);
        }
        let envelope = 0.6 + 0.4 * (2.0 * PI * env_rate * t + env_phase).sin();
        out.push(y * envelope);
    }

    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    out.iter_mut().for_each(|v| *v *= PEAK / peak);
    Ok(AudioClip::new(out, sample_rate)?)
}

//! Waveform-domain distortions for the five anomaly classes and exact SNR
//! calibration.
//!
//! For every class the "noise" is the residual `y − x` between the
//! distorted and the clean clip. Calibration rescales that residual so the
//! clean-to-residual power ratio hits the requested SNR exactly, which
//! makes the SNR axis uniform across additive and non-additive classes.

use std::fmt;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioClip;
use crate::seed::rng_from;

/// Reported SNR when the residual is exactly zero.
pub const SNR_CAP_DB: f64 = 300.0;

/// Default SNR levels for sweeps.
pub const STANDARD_SNRS_DB: [f64; 6] = [5.0, 10.0, 15.0, 20.0, 25.0, 30.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugmentError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("length mismatch: clean has {clean} samples, corrupted has {corrupted}")]
    LengthMismatch { clean: usize, corrupted: usize },
    #[error("clean signal is silent; SNR is undefined")]
    SilentClean,
    #[error("distortion left the clip unchanged; cannot calibrate to {target_db} dB")]
    CalibrationImpossible { target_db: f64 },
}

pub type Result<T> = std::result::Result<T, AugmentError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DistortionClass {
    TimeWarp,
    Pooling,
    Dropout,
    Drift,
    GaussianNoise,
}

impl DistortionClass {
    pub const ALL: [DistortionClass; 5] = [
        DistortionClass::TimeWarp,
        DistortionClass::Pooling,
        DistortionClass::Dropout,
        DistortionClass::Drift,
        DistortionClass::GaussianNoise,
    ];

    /// Stable label code, 1 through 5.
    pub fn code(self) -> u8 {
        self.index() as u8 + 1
    }

    /// Zero-based index used as the classifier target.
    pub fn index(self) -> usize {
        match self {
            DistortionClass::TimeWarp => 0,
            DistortionClass::Pooling => 1,
            DistortionClass::Dropout => 2,
            DistortionClass::Drift => 3,
            DistortionClass::GaussianNoise => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        (1..=5).contains(&code).then(|| Self::ALL[code as usize - 1])
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    /// Short name, `C1` … `C5`.
    pub fn short_name(self) -> String {
        format!("C{}", self.code())
    }
}

impl fmt::Display for DistortionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            DistortionClass::TimeWarp => "time-warp",
            DistortionClass::Pooling => "pooling",
            DistortionClass::Dropout => "dropout",
            DistortionClass::Drift => "drift",
            DistortionClass::GaussianNoise => "gaussian-noise",
        };
        f.write_str(name)
    }
}

/// Raw (pre-calibration) parameters of one distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ClassParams {
    TimeWarp { n_speed_changes: usize, max_speed_ratio: f64 },
    Pooling { pool_size: usize },
    Dropout { drop_fraction: f64 },
    Drift { max_drift: f64, n_knots: usize },
    GaussianNoise { sigma: f64 },
}

impl ClassParams {
    pub fn class(&self) -> DistortionClass {
        match self {
            ClassParams::TimeWarp { .. } => DistortionClass::TimeWarp,
            ClassParams::Pooling { .. } => DistortionClass::Pooling,
            ClassParams::Dropout { .. } => DistortionClass::Dropout,
            ClassParams::Drift { .. } => DistortionClass::Drift,
            ClassParams::GaussianNoise { .. } => DistortionClass::GaussianNoise,
        }
    }
}

/// Default raw parameters for every class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistortionDefaults {
    pub n_speed_changes: usize,
    pub max_speed_ratio: f64,
    pub pool_size: usize,
    pub drop_fraction: f64,
    pub max_drift: f64,
    pub drift_knots: usize,
    pub sigma: f64,
}

impl Default for DistortionDefaults {
    fn default() -> Self {
        Self {
            n_speed_changes: 3,
            max_speed_ratio: 3.0,
            pool_size: 8,
            drop_fraction: 0.1,
            max_drift: 0.5,
            drift_knots: 6,
            sigma: 0.1,
        }
    }
}

impl DistortionDefaults {
    pub fn params_for(&self, class: DistortionClass) -> ClassParams {
        match class {
            DistortionClass::TimeWarp => ClassParams::TimeWarp {
                n_speed_changes: self.n_speed_changes,
                max_speed_ratio: self.max_speed_ratio,
            },
            DistortionClass::Pooling => ClassParams::Pooling {
                pool_size: self.pool_size,
            },
            DistortionClass::Dropout => ClassParams::Dropout {
                drop_fraction: self.drop_fraction,
            },
            DistortionClass::Drift => ClassParams::Drift {
                max_drift: self.max_drift,
                n_knots: self.drift_knots,
            },
            DistortionClass::GaussianNoise => ClassParams::GaussianNoise { sigma: self.sigma },
        }
    }
}

/// Everything needed to reproduce one corruption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionSpec {
    pub params: ClassParams,
    pub target_snr_db: f64,
    pub seed: u64,
}

impl DistortionSpec {
    pub fn class(&self) -> DistortionClass {
        self.params.class()
    }
}

/// Piecewise-linear monotone time map with `n_speed_changes` interior
/// breakpoints, endpoints fixed at 0 and `n − 1`.
pub fn time_warp_map(n: usize, n_speed_changes: usize, max_speed_ratio: f64, seed: u64) -> Result<Vec<f64>> {
    if n_speed_changes == 0 {
        return Err(AugmentError::InvalidArgument("n_speed_changes must be at least 1".into()));
    }
    if !(max_speed_ratio >= 1.0 && max_speed_ratio.is_finite()) {
        return Err(AugmentError::InvalidArgument(format!(
            "max_speed_ratio must be >= 1, got {max_speed_ratio}"
        )));
    }
    if n <= 1 {
        return Ok(vec![0.0; n]);
    }
    let last = (n - 1) as f64;
    let segments = n_speed_changes + 1;
    let breaks: Vec<f64> = (0..=segments)
        .map(|j| (j as f64 * last / segments as f64).round())
        .collect();

    let mut rng = rng_from(seed);
    // Log-uniform speeds in [1, ratio] keep max/min within the ratio.
    let speeds: Vec<f64> = (0..segments)
        .map(|_| max_speed_ratio.powf(rng.random::<f64>()))
        .collect();
    let span: f64 = speeds
        .iter()
        .zip(breaks.windows(2))
        .map(|(s, w)| s * (w[1] - w[0]))
        .sum();
    let scale = last / span;

    let mut tau = Vec::with_capacity(n);
    let mut seg = 0;
    let mut start = 0.0;
    for i in 0..n {
        let t = i as f64;
        while seg + 1 < segments && t > breaks[seg + 1] {
            start += speeds[seg] * scale * (breaks[seg + 1] - breaks[seg]);
            seg += 1;
        }
        tau.push((start + speeds[seg] * scale * (t - breaks[seg])).clamp(0.0, last));
    }
    tau[n - 1] = last;
    Ok(tau)
}

fn interpolate(x: &[f64], pos: f64) -> f64 {
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if frac == 0.0 || i + 1 >= x.len() {
        x[i.min(x.len() - 1)]
    } else {
        x[i] * (1.0 - frac) + x[i + 1] * frac
    }
}

/// Class 1: resample the clip along a random monotone time map.
pub fn time_warp(x: &AudioClip, n_speed_changes: usize, max_speed_ratio: f64, seed: u64) -> Result<AudioClip> {
    let xs = x.samples();
    let tau = time_warp_map(xs.len(), n_speed_changes, max_speed_ratio, seed)?;
    Ok(x.with_samples(tau.iter().map(|&p| interpolate(xs, p)).collect()))
}

/// Class 2: replace each block of `pool_size` samples by its mean.
pub fn pool_series(x: &AudioClip, pool_size: usize) -> Result<AudioClip> {
    if pool_size == 0 {
        return Err(AugmentError::InvalidArgument("pool_size must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(x.len());
    for block in x.samples().chunks(pool_size) {
        let mean = block.iter().sum::<f64>() / block.len() as f64;
        out.extend(std::iter::repeat_n(mean, block.len()));
    }
    Ok(x.with_samples(out))
}

/// Class 3: zero exactly `⌊drop_fraction · N⌋` distinct random samples.
pub fn dropout_series(x: &AudioClip, drop_fraction: f64, seed: u64) -> Result<AudioClip> {
    if !(0.0..=1.0).contains(&drop_fraction) {
        return Err(AugmentError::InvalidArgument(format!(
            "drop_fraction must lie in [0, 1], got {drop_fraction}"
        )));
    }
    let n = x.len();
    let count = ((drop_fraction * n as f64).floor() as usize).min(n);
    let mut out = x.samples().to_vec();
    let mut rng = rng_from(seed);
    for i in sample(&mut rng, n, count) {
        out[i] = 0.0;
    }
    Ok(x.with_samples(out))
}

/// Natural cubic spline through `values` at evenly spaced knots over
/// `[0, n − 1]`, evaluated at every integer position.
pub fn natural_cubic_spline(values: &[f64], n: usize) -> Vec<f64> {
    let m = values.len();
    if n == 0 {
        return Vec::new();
    }
    if m < 2 || n == 1 {
        return vec![values.first().copied().unwrap_or(0.0); n];
    }
    let h = (n - 1) as f64 / (m - 1) as f64;

    // Second derivatives; natural boundary M_0 = M_{m-1} = 0.
    let mut second = vec![0.0; m];
    if m > 2 {
        let k = m - 2;
        let rhs: Vec<f64> = (1..m - 1)
            .map(|j| 6.0 * (values[j + 1] - 2.0 * values[j] + values[j - 1]) / (h * h))
            .collect();
        // Thomas algorithm on the [1, 4, 1] system.
        let mut c = vec![0.0; k];
        let mut d = vec![0.0; k];
        for j in 0..k {
            let denom = 4.0 - if j > 0 { c[j - 1] } else { 0.0 };
            c[j] = 1.0 / denom;
            d[j] = (rhs[j] - if j > 0 { d[j - 1] } else { 0.0 }) / denom;
        }
        for j in (0..k).rev() {
            let next = if j + 1 < k { second[j + 2] } else { 0.0 };
            second[j + 1] = d[j] - c[j] * next;
        }
    }

    (0..n)
        .map(|i| {
            let pos = i as f64 / h;
            let j = (pos.floor() as usize).min(m - 2);
            let t = pos - j as f64;
            let u = 1.0 - t;
            u * values[j]
                + t * values[j + 1]
                + h * h / 6.0 * ((u * u * u - u) * second[j] + (t * t * t - t) * second[j + 1])
        })
        .collect()
}

/// Class 4: add a smooth random curve whose peak magnitude is `max_drift`.
pub fn drift_series(x: &AudioClip, max_drift: f64, n_knots: usize, seed: u64) -> Result<AudioClip> {
    if !(max_drift >= 0.0 && max_drift.is_finite()) {
        return Err(AugmentError::InvalidArgument(format!(
            "max_drift must be a non-negative number, got {max_drift}"
        )));
    }
    if n_knots < 2 {
        return Err(AugmentError::InvalidArgument("drift needs at least 2 knots".into()));
    }
    if max_drift == 0.0 {
        return Ok(x.clone());
    }
    let mut rng = rng_from(seed);
    let knots: Vec<f64> = (0..n_knots).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let curve = natural_cubic_spline(&knots, x.len());
    let peak = curve.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if peak == 0.0 {
        return Ok(x.clone());
    }
    let scale = max_drift / peak;
    Ok(x.with_samples(
        x.samples()
            .iter()
            .zip(&curve)
            .map(|(s, c)| s + c * scale)
            .collect(),
    ))
}

/// Class 5: i.i.d. zero-mean Gaussian noise with standard deviation `sigma`.
pub fn add_gaussian_noise(x: &AudioClip, sigma: f64, seed: u64) -> Result<AudioClip> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(AugmentError::InvalidArgument(format!(
            "sigma must be a non-negative number, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    let mut rng = rng_from(seed);
    Ok(x.with_samples(
        x.samples()
            .iter()
            .map(|s| s + normal.sample(&mut rng))
            .collect(),
    ))
}

fn residual_power(clean: &[f64], corrupted: &[f64]) -> f64 {
    clean
        .iter()
        .zip(corrupted)
        .map(|(x, y)| (y - x) * (y - x))
        .sum::<f64>()
        / clean.len() as f64
}

fn check_lengths(clean: &AudioClip, corrupted: &AudioClip) -> Result<()> {
    if clean.len() != corrupted.len() {
        return Err(AugmentError::LengthMismatch {
            clean: clean.len(),
            corrupted: corrupted.len(),
        });
    }
    Ok(())
}

/// `10·log10(P_clean / P_residual)` in dB, capped at [`SNR_CAP_DB`].
pub fn measure_snr(clean: &AudioClip, corrupted: &AudioClip) -> Result<f64> {
    check_lengths(clean, corrupted)?;
    let px = clean.power();
    if px == 0.0 {
        return Err(AugmentError::SilentClean);
    }
    let pr = residual_power(clean.samples(), corrupted.samples());
    if pr == 0.0 {
        return Ok(SNR_CAP_DB);
    }
    Ok((10.0 * (px / pr).log10()).min(SNR_CAP_DB))
}

/// Residual gain α that brings `raw_corrupted` to `target_snr_db`.
pub fn calibration_gain(clean: &AudioClip, raw_corrupted: &AudioClip, target_snr_db: f64) -> Result<f64> {
    check_lengths(clean, raw_corrupted)?;
    if !target_snr_db.is_finite() {
        return Err(AugmentError::InvalidArgument(format!(
            "target SNR must be finite, got {target_snr_db}"
        )));
    }
    let px = clean.power();
    if px == 0.0 {
        return Err(AugmentError::SilentClean);
    }
    let pr = residual_power(clean.samples(), raw_corrupted.samples());
    if pr == 0.0 {
        return Err(AugmentError::CalibrationImpossible {
            target_db: target_snr_db,
        });
    }
    Ok((px / (pr * 10f64.powf(target_snr_db / 10.0))).sqrt())
}

/// Blends `clean + α·(raw − clean)` so the measured SNR equals the target.
pub fn calibrate_to_snr(clean: &AudioClip, raw_corrupted: &AudioClip, target_snr_db: f64) -> Result<AudioClip> {
    let alpha = calibration_gain(clean, raw_corrupted, target_snr_db)?;
    Ok(clean.with_samples(
        clean
            .samples()
            .iter()
            .zip(raw_corrupted.samples())
            .map(|(x, y)| x + alpha * (y - x))
            .collect(),
    ))
}

/// Runs the class op without calibration.
pub fn distort_raw(x: &AudioClip, params: ClassParams, seed: u64) -> Result<AudioClip> {
    match params {
        ClassParams::TimeWarp { n_speed_changes, max_speed_ratio } => {
            time_warp(x, n_speed_changes, max_speed_ratio, seed)
        }
        ClassParams::Pooling { pool_size } => pool_series(x, pool_size),
        ClassParams::Dropout { drop_fraction } => dropout_series(x, drop_fraction, seed),
        ClassParams::Drift { max_drift, n_knots } => drift_series(x, max_drift, n_knots, seed),
        ClassParams::GaussianNoise { sigma } => add_gaussian_noise(x, sigma, seed),
    }
}

/// Distorts and calibrates one clip; returns the clip and its class label.
pub fn apply_distortion(x: &AudioClip, spec: &DistortionSpec) -> Result<(AudioClip, DistortionClass)> {
    let raw = distort_raw(x, spec.params, spec.seed)?;
    let y = calibrate_to_snr(x, &raw, spec.target_snr_db)?;
    Ok((y, spec.class()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(v: Vec<f64>) -> AudioClip {
        AudioClip::new(v, 16_000).unwrap()
    }

    fn ramp(n: usize) -> AudioClip {
        clip((0..n).map(|i| i as f64 / n as f64).collect())
    }

    fn generic(n: usize) -> AudioClip {
        clip((0..n)
            .map(|i| {
                let t = i as f64;
                0.3 * (0.031 * t).sin() + 0.2 * (0.173 * t + 0.4).sin() + 0.05 * (1.37 * t).cos() + 0.01
            })
            .collect())
    }

    #[test]
    fn class_codes_are_stable() {
        let codes: Vec<u8> = DistortionClass::ALL.iter().map(|c| c.code()).collect();
        assert_eq!(codes, vec![1, 2, 3, 4, 5]);
        for c in DistortionClass::ALL {
            assert_eq!(DistortionClass::from_code(c.code()), Some(c));
        }
        assert_eq!(DistortionClass::from_code(0), None);
        assert_eq!(DistortionClass::from_code(6), None);
    }

    #[test]
    fn time_warp_ratio_one_is_identity() {
        let x = generic(1000);
        let y = time_warp(&x, 3, 1.0, 11).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn time_warp_map_is_monotone_and_endpoint_fixed() {
        let n = 4000;
        let tau = time_warp_map(n, 3, 3.0, 99).unwrap();
        assert_eq!(tau[0], 0.0);
        assert_eq!(tau[n - 1], (n - 1) as f64);
        for w in tau.windows(2) {
            assert!(w[1] > w[0], "{} !< {}", w[0], w[1]);
        }
        // Segment slopes respect the speed ratio bound.
        let slopes: Vec<f64> = tau.windows(2).map(|w| w[1] - w[0]).collect();
        let (lo, hi) = slopes
            .iter()
            .fold((f64::MAX, 0.0f64), |(a, b), &s| (a.min(s), b.max(s)));
        assert!(hi / lo <= 3.0 + 1e-9);

        let y = time_warp(&ramp(n), 3, 3.0, 99).unwrap();
        for w in y.samples().windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn time_warp_rejects_bad_ratio() {
        assert!(matches!(
            time_warp(&ramp(10), 3, 0.5, 0),
            Err(AugmentError::InvalidArgument(_))
        ));
        assert!(time_warp(&ramp(10), 0, 2.0, 0).is_err());
    }

    #[test]
    fn pooling_examples() {
        let x = clip(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(pool_series(&x, 2).unwrap().samples(), &[1.5, 1.5, 3.5, 3.5]);
        assert_eq!(pool_series(&x, 1).unwrap(), x);
        let c = clip(vec![0.25; 13]);
        assert_eq!(pool_series(&c, 5).unwrap(), c);
        // Last partial block uses its own mean.
        let p = pool_series(&clip(vec![1.0, 2.0, 3.0, 4.0, 5.0]), 2).unwrap();
        assert_eq!(p.samples(), &[1.5, 1.5, 3.5, 3.5, 5.0]);
        assert!(pool_series(&x, 0).is_err());
    }

    #[test]
    fn dropout_counts() {
        let x = clip((0..1000).map(|i| 0.5 + i as f64 * 1e-3).collect());
        assert_eq!(dropout_series(&x, 0.0, 3).unwrap(), x);
        assert!(dropout_series(&x, 1.0, 3).unwrap().samples().iter().all(|&v| v == 0.0));
        let y = dropout_series(&x, 0.1, 3).unwrap();
        let changed = x.samples().iter().zip(y.samples()).filter(|(a, b)| a != b).count();
        assert_eq!(changed, 100);
        assert!(dropout_series(&x, 1.5, 3).is_err());
    }

    #[test]
    fn drift_bounds_and_determinism() {
        let x = generic(5000);
        assert_eq!(drift_series(&x, 0.0, 6, 1).unwrap(), x);
        for seed in 0..20 {
            let y = drift_series(&x, 0.5, 6, seed).unwrap();
            let max = x
                .samples()
                .iter()
                .zip(y.samples())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(max <= 0.5 + 1e-12);
            assert!(max > 0.49);
        }
        assert_eq!(drift_series(&x, 0.3, 6, 5).unwrap(), drift_series(&x, 0.3, 6, 5).unwrap());
        assert!(drift_series(&x, 0.3, 1, 5).is_err());
    }

    #[test]
    fn spline_interpolates_knots_and_lines() {
        let n = 101;
        let knots = [0.3, -0.7, 0.9, 0.1, -0.2, 0.5];
        let s = natural_cubic_spline(&knots, n);
        for (j, &k) in knots.iter().enumerate() {
            assert!((s[j * 20] - k).abs() < 1e-12);
        }
        // A natural spline reproduces straight lines exactly.
        let line: Vec<f64> = (0..6).map(|j| 2.0 * j as f64 - 1.0).collect();
        let s = natural_cubic_spline(&line, n);
        for (i, v) in s.iter().enumerate() {
            assert!((v - (2.0 * i as f64 / 20.0 - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_noise_statistics() {
        let x = clip(vec![0.1; 100_000]);
        assert_eq!(add_gaussian_noise(&x, 0.0, 1).unwrap(), x);
        let y = add_gaussian_noise(&x, 0.1, 1).unwrap();
        let r: Vec<f64> = x.samples().iter().zip(y.samples()).map(|(a, b)| b - a).collect();
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (r.len() - 1) as f64;
        assert!((var - 0.01).abs() < 0.05 * 0.01, "variance {var}");
        assert_eq!(y, add_gaussian_noise(&x, 0.1, 1).unwrap());
    }

    #[test]
    fn snr_measurement() {
        let x = generic(1000);
        assert_eq!(measure_snr(&x, &x).unwrap(), SNR_CAP_DB);
        let doubled = clip(x.samples().iter().map(|v| 2.0 * v).collect());
        assert!(measure_snr(&x, &doubled).unwrap().abs() < 1e-12);
        assert!(matches!(
            measure_snr(&x, &generic(999)),
            Err(AugmentError::LengthMismatch { .. })
        ));
        let silent = clip(vec![0.0; 1000]);
        assert_eq!(measure_snr(&silent, &x), Err(AugmentError::SilentClean));
    }

    #[test]
    fn sine_plus_noise_snr() {
        let n = 100_000;
        let x = clip((0..n).map(|i| (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16_000.0).sin()).collect());
        let y = add_gaussian_noise(&x, 0.05, 4).unwrap();
        // Oracle: 10·log10(0.5 / 0.0025) = 23.0103 dB.
        let expected = 10.0 * (0.5f64 / 0.0025).log10();
        assert!((measure_snr(&x, &y).unwrap() - expected).abs() < 0.2);
    }

    #[test]
    fn calibration_hits_target() {
        let x = generic(4000);
        let raw = add_gaussian_noise(&x, 0.2, 8).unwrap();
        for target in [5.0, 30.0, 0.0, -3.0] {
            let y = calibrate_to_snr(&x, &raw, target).unwrap();
            assert!((measure_snr(&x, &y).unwrap() - target).abs() < 1e-9);
        }
    }

    #[test]
    fn calibration_alpha_properties() {
        let x = generic(4000);
        let raw = add_gaussian_noise(&x, 0.2, 8).unwrap();
        let at = measure_snr(&x, &raw).unwrap();
        let alpha = calibration_gain(&x, &raw, at).unwrap();
        assert!((alpha - 1.0).abs() < 1e-12);
        let y = calibrate_to_snr(&x, &raw, at).unwrap();
        for (a, b) in y.samples().iter().zip(raw.samples()) {
            assert!((a - b).abs() < 1e-12);
        }

        let doubled = clip(x.samples().iter().zip(raw.samples()).map(|(a, b)| a + 2.0 * (b - a)).collect());
        let a2 = calibration_gain(&x, &doubled, 12.0).unwrap();
        let a1 = calibration_gain(&x, &raw, 12.0).unwrap();
        assert!((a2 - a1 / 2.0).abs() < 1e-12);
        let y1 = calibrate_to_snr(&x, &raw, 12.0).unwrap();
        let y2 = calibrate_to_snr(&x, &doubled, 12.0).unwrap();
        for (a, b) in y1.samples().iter().zip(y2.samples()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn calibration_rejects_zero_residual() {
        let x = generic(100);
        assert!(matches!(
            calibrate_to_snr(&x, &x, 10.0),
            Err(AugmentError::CalibrationImpossible { .. })
        ));
    }

    #[test]
    fn apply_distortion_gaussian_zero_db() {
        let x = generic(8000);
        let spec = DistortionSpec {
            params: ClassParams::GaussianNoise { sigma: 0.1 },
            target_snr_db: 0.0,
            seed: 21,
        };
        let (y, class) = apply_distortion(&x, &spec).unwrap();
        assert_eq!(class, DistortionClass::GaussianNoise);
        assert!(measure_snr(&x, &y).unwrap().abs() < 1e-9);
        assert_eq!(y, apply_distortion(&x, &spec).unwrap().0);
    }

    #[test]
    fn residual_support() {
        let x = generic(10_000);
        let n = x.len() as f64;
        let d = DistortionDefaults::default();
        for class in [DistortionClass::Pooling, DistortionClass::GaussianNoise] {
            let spec = DistortionSpec { params: d.params_for(class), target_snr_db: 20.0, seed: 5 };
            let (y, _) = apply_distortion(&x, &spec).unwrap();
            let nz = x.samples().iter().zip(y.samples()).filter(|(a, b)| a != b).count();
            assert!(nz as f64 >= 0.99 * n, "{class}: {nz}");
        }
        let spec = DistortionSpec { params: d.params_for(DistortionClass::Dropout), target_snr_db: 20.0, seed: 5 };
        let (y, _) = apply_distortion(&x, &spec).unwrap();
        let nz = x.samples().iter().zip(y.samples()).filter(|(a, b)| a != b).count();
        assert_eq!(nz, (0.1 * n).floor() as usize);
    }
}

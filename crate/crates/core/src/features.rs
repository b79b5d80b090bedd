//! Log mel-filterbank features: 32 ms Hann frames every 16 ms, 512-point
//! FFT, 40 triangular mel filters, natural log, per-clip channel
//! normalization.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioClip;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("signal has {len} samples, fewer than one {window}-sample window")]
    TooShort { len: usize, window: usize },
    #[error("clip is {got_s:.3} s long, feature extraction needs {need_s} s")]
    ClipTooShort { got_s: f64, need_s: f64 },
    #[error("sample rate {got} Hz does not match the extractor's {want} Hz")]
    SampleRate { got: u32, want: u32 },
    #[error("invalid feature configuration: {0}")]
    Config(String),
    #[error("feature matrix of {frames}x{dims} needs {need} values, got {got}")]
    Shape { frames: usize, dims: usize, need: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, FeatureError>;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub fft_size: usize,
    pub n_filters: usize,
    pub f_low_hz: f64,
    pub f_high_hz: f64,
    /// Leading portion of each clip that is featurized.
    pub crop_s: f64,
    pub log_floor: f64,
    pub normalize: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            frame_ms: 32.0,
            hop_ms: 16.0,
            fft_size: 512,
            n_filters: 40,
            f_low_hz: 0.0,
            f_high_hz: 8000.0,
            crop_s: 2.0,
            log_floor: 1e-10,
            normalize: true,
        }
    }
}

impl FeatureConfig {
    pub fn window_samples(&self) -> usize {
        (self.frame_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn crop_samples(&self) -> usize {
        (self.crop_s * self.sample_rate as f64).round() as usize
    }

    pub fn frames_per_clip(&self) -> usize {
        frame_count(self.crop_samples(), self.window_samples(), self.hop_samples())
    }
}

/// `⌊(N − W)/S⌋ + 1`, or 0 when the signal is shorter than one window.
pub fn frame_count(n: usize, window: usize, hop: usize) -> usize {
    if n < window || window == 0 || hop == 0 {
        0
    } else {
        (n - window) / hop + 1
    }
}

/// Non-overlapping-tail framing: frame `j` is `x[jS .. jS + W]`.
pub fn frame_signal(x: &[f64], window: usize, hop: usize) -> Result<Vec<&[f64]>> {
    if window == 0 || hop == 0 {
        return Err(FeatureError::Config("window and hop must be positive".into()));
    }
    if x.len() < window {
        return Err(FeatureError::TooShort { len: x.len(), window });
    }
    let count = frame_count(x.len(), window, hop);
    Ok((0..count).map(|j| &x[j * hop..j * hop + window]).collect())
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

/// Hann-windowed, zero-padded real FFT power spectrum.
pub struct PowerSpectrum {
    fft: Arc<dyn Fft<f64>>,
    size: usize,
    window: Vec<f64>,
    buf: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl PowerSpectrum {
    pub fn new(window_len: usize, fft_size: usize) -> Result<Self> {
        if window_len == 0 || window_len > fft_size {
            return Err(FeatureError::Config(format!(
                "window of {window_len} does not fit a {fft_size}-point FFT"
            )));
        }
        let fft = FftPlanner::new().plan_fft_forward(fft_size);
        let scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
        Ok(Self {
            fft,
            size: fft_size,
            window: hann_window(window_len),
            buf: vec![Complex::default(); fft_size],
            scratch,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.size / 2 + 1
    }

    /// Squared magnitudes of bins `0..=size/2`.
    pub fn compute(&mut self, frame: &[f64]) -> Vec<f64> {
        assert_eq!(frame.len(), self.window.len(), "frame length must match the window");
        for (i, b) in self.buf.iter_mut().enumerate() {
            let v = if i < frame.len() { frame[i] * self.window[i] } else { 0.0 };
            *b = Complex::new(v, 0.0);
        }
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);
        self.buf[..self.n_bins()].iter().map(|c| c.norm_sqr()).collect()
    }
}

/// One-shot power spectrum of a frame of at most 512 samples.
pub fn power_spectrum(frame: &[f64]) -> Result<Vec<f64>> {
    Ok(PowerSpectrum::new(frame.len(), 512)?.compute(frame))
}

/// Triangular filters with peaks equally spaced on the mel scale.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    n_filters: usize,
    n_bins: usize,
    weights: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_filters: usize, f_low: f64, f_high: f64, fft_size: usize, sample_rate: u32) -> Result<Self> {
        let nyquist = sample_rate as f64 / 2.0;
        if n_filters == 0 || !(0.0..f_high).contains(&f_low) || f_high > nyquist || fft_size < 2 {
            return Err(FeatureError::Config(format!(
                "bad filterbank: {n_filters} filters over [{f_low}, {f_high}] Hz at {sample_rate} Hz"
            )));
        }
        let n_bins = fft_size / 2 + 1;
        let (m_lo, m_hi) = (hz_to_mel(f_low), hz_to_mel(f_high));
        let mut edges: Vec<f64> = (0..n_filters + 2)
            .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_filters + 1) as f64))
            .collect();
        // The mel round trip is inexact; keep the band limits exact.
        edges[0] = f_low;
        edges[n_filters + 1] = f_high;
        let bin_hz = sample_rate as f64 / fft_size as f64;
        let mut weights = vec![0.0; n_filters * n_bins];
        for f in 0..n_filters {
            let (l, c, r) = (edges[f], edges[f + 1], edges[f + 2]);
            for b in 0..n_bins {
                let hz = b as f64 * bin_hz;
                let w = ((hz - l) / (c - l)).min((r - hz) / (r - c));
                weights[f * n_bins + b] = w.max(0.0);
            }
        }
        Ok(Self { n_filters, n_bins, weights })
    }

    pub fn n_filters(&self) -> usize {
        self.n_filters
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn filter(&self, f: usize) -> &[f64] {
        &self.weights[f * self.n_bins..(f + 1) * self.n_bins]
    }

    pub fn apply(&self, spectrum: &[f64]) -> Vec<f64> {
        (0..self.n_filters)
            .map(|f| self.filter(f).iter().zip(spectrum).map(|(w, p)| w * p).sum())
            .collect()
    }
}

/// The default 40×257 filterbank for 16 kHz audio and a 512-point FFT.
pub fn mel_filterbank_matrix() -> MelFilterbank {
    MelFilterbank::new(40, 0.0, 8000.0, 512, 16_000).expect("default filterbank is valid")
}

/// `frames × dims` row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    frames: usize,
    dims: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn from_values(frames: usize, dims: usize, values: Vec<f64>) -> Result<Self> {
        if frames * dims != values.len() || frames == 0 || dims == 0 {
            return Err(FeatureError::Shape {
                frames,
                dims,
                need: frames * dims,
                got: values.len(),
            });
        }
        Ok(Self { frames, dims, values })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.dims..(t + 1) * self.dims]
    }

    pub fn get(&self, t: usize, d: usize) -> f64 {
        self.values[t * self.dims + d]
    }

    /// Channel-major copy (`dims × frames`).
    pub fn transposed(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.values.len()];
        for t in 0..self.frames {
            for d in 0..self.dims {
                out[d * self.frames + t] = self.values[t * self.dims + d];
            }
        }
        out
    }
}

/// Zero-mean, unit-variance per column. Constant columns become zero.
pub fn normalize_channels(m: &mut FeatureMatrix) {
    let (t, d) = (m.frames, m.dims);
    for c in 0..d {
        let mean = (0..t).map(|r| m.values[r * d + c]).sum::<f64>() / t as f64;
        let var = (0..t)
            .map(|r| (m.values[r * d + c] - mean).powi(2))
            .sum::<f64>()
            / t as f64;
        let sd = var.sqrt();
        for r in 0..t {
            let v = &mut m.values[r * d + c];
            *v = if sd > 1e-12 { (*v - mean) / sd } else { 0.0 };
        }
    }
}

/// Reusable extractor holding the FFT plan and filterbank.
pub struct FeatureExtractor {
    config: FeatureConfig,
    spectrum: PowerSpectrum,
    bank: MelFilterbank,
}

impl FeatureExtractor {
    pub fn new(config: FeatureConfig) -> Result<Self> {
        let window = config.window_samples();
        let hop = config.hop_samples();
        if hop == 0 || config.crop_samples() < window {
            return Err(FeatureError::Config(format!(
                "crop of {} samples cannot hold a {window}-sample window",
                config.crop_samples()
            )));
        }
        if !(config.log_floor > 0.0) {
            return Err(FeatureError::Config("log floor must be positive".into()));
        }
        let spectrum = PowerSpectrum::new(window, config.fft_size)?;
        let bank = MelFilterbank::new(
            config.n_filters,
            config.f_low_hz,
            config.f_high_hz,
            config.fft_size,
            config.sample_rate,
        )?;
        Ok(Self { config, spectrum, bank })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    /// Log filterbank energies of every frame, before normalization.
    pub fn log_energies(&mut self, samples: &[f64]) -> Result<FeatureMatrix> {
        let window = self.config.window_samples();
        let hop = self.config.hop_samples();
        let frames = frame_signal(samples, window, hop)?;
        let dims = self.bank.n_filters();
        let mut values = Vec::with_capacity(frames.len() * dims);
        for frame in &frames {
            let p = self.spectrum.compute(frame);
            values.extend(self.bank.apply(&p).into_iter().map(|e| (e + self.config.log_floor).ln()));
        }
        FeatureMatrix::from_values(frames.len(), dims, values)
    }

    /// Crops the first `crop_s` seconds and returns the (normalized)
    /// log-filterbank matrix.
    pub fn extract(&mut self, clip: &AudioClip) -> Result<FeatureMatrix> {
        if clip.sample_rate_hz() != self.config.sample_rate {
            return Err(FeatureError::SampleRate {
                got: clip.sample_rate_hz(),
                want: self.config.sample_rate,
            });
        }
        let need = self.config.crop_samples();
        if clip.len() < need {
            return Err(FeatureError::ClipTooShort {
                got_s: clip.duration_s(),
                need_s: self.config.crop_s,
            });
        }
        let mut m = self.log_energies(&clip.samples()[..need])?;
        if self.config.normalize {
            normalize_channels(&mut m);
        }
        Ok(m)
    }
}

/// Featurizes one clip with the default configuration.
pub fn extract_features(clip: &AudioClip) -> Result<FeatureMatrix> {
    FeatureExtractor::new(FeatureConfig::default())?.extract(clip)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_sizes() {
        let c = FeatureConfig::default();
        assert_eq!(c.window_samples(), 512);
        assert_eq!(c.hop_samples(), 256);
        assert_eq!(frame_count(32_000, 512, 256), (32_000 - 512) / 256 + 1);
        assert_eq!(frame_count(32_000, 512, 256), 124);
        let x = vec![0.0; 512];
        assert_eq!(frame_signal(&x, 512, 256).unwrap().len(), 1);
        assert!(matches!(frame_signal(&x[..100], 512, 256), Err(FeatureError::TooShort { .. })));
    }

    #[test]
    fn frames_cover_expected_spans() {
        let x: Vec<f64> = (0..1300).map(|i| i as f64).collect();
        let f = frame_signal(&x, 512, 256).unwrap();
        assert_eq!(f.len(), 4);
        assert_eq!(f[3][0], 768.0);
        assert_eq!(f[3][511], 1279.0);
    }

    #[test]
    fn zero_frame_zero_spectrum() {
        assert!(power_spectrum(&[0.0; 512]).unwrap().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn mel_scale_points() {
        assert!((hz_to_mel(700.0) - 781.17).abs() < 0.01);
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn filterbank_shape_and_support() {
        let fb = mel_filterbank_matrix();
        assert_eq!((fb.n_filters(), fb.n_bins()), (40, 257));
        for f in 0..40 {
            let w = fb.filter(f);
            assert!(w.iter().all(|&v| v >= 0.0));
            let max = w.iter().copied().fold(0.0, f64::max);
            assert_eq!(w.iter().filter(|&&v| v == max).count(), 1, "filter {f}");
            // Support strictly inside [0, 8000] Hz: DC and Nyquist bins carry no weight.
            assert_eq!(w[0], 0.0);
            assert_eq!(w[256], 0.0);
        }
        let flat = fb.apply(&vec![1.0; 257]);
        assert!(flat.iter().all(|&e| e > 0.0));
    }

    #[test]
    fn normalization_contract() {
        let clip = AudioClip::new(
            (0..40_000)
                .map(|i| {
                    let t = i as f64 / 16_000.0;
                    0.3 * (2.0 * std::f64::consts::PI * 220.0 * t).sin() * (1.0 + 0.5 * (7.0 * t).sin())
                        + 0.05 * ((i * 7919 % 104_729) as f64 / 104_729.0 - 0.5)
                })
                .collect(),
            16_000,
        )
        .unwrap();
        let m = extract_features(&clip).unwrap();
        assert_eq!((m.frames(), m.dims()), (124, 40));
        for c in 0..40 {
            let col: Vec<f64> = (0..124).map(|t| m.get(t, c)).collect();
            let mean = col.iter().sum::<f64>() / 124.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 124.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn short_clip_rejected() {
        let clip = AudioClip::new(vec![0.1; 31_999], 16_000).unwrap();
        assert!(matches!(extract_features(&clip), Err(FeatureError::ClipTooShort { .. })));
    }
}

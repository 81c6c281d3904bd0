//! Log-magnitude STFT and mel spectrograms.
//!
//! Frames are Hann-windowed with no center padding, so
//! `T = floor((len - win) / hop) + 1`; each entry is
//! `ln(max(magnitude, log_floor))`.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::wav::Waveform;
use crate::error::{CcatError, Result};
use crate::nncore::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FeatureKind {
    Stft,
    Mel,
}

/// Frontend configuration. Defaults: 32 ms Hann window, 16 ms hop, 512-point
/// FFT at 16 kHz (257 bins), 48 mel bands, context half-width 5 (C = 11).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub kind: FeatureKind,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub fft_size: usize,
    pub mel_bands: usize,
    pub context_half_width: usize,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            kind: FeatureKind::Stft,
            window_ms: 32.0,
            hop_ms: 16.0,
            fft_size: 512,
            mel_bands: 48,
            context_half_width: 5,
            log_floor: 1e-10,
        }
    }
}

impl FeatureConfig {
    pub fn mel() -> Self {
        FeatureConfig {
            kind: FeatureKind::Mel,
            ..Default::default()
        }
    }

    /// Context size C = 2n + 1, always odd.
    pub fn context_size(&self) -> usize {
        2 * self.context_half_width + 1
    }

    /// Feature width the network sees (FFT bins or mel bands).
    pub fn feature_width(&self) -> usize {
        match self.kind {
            FeatureKind::Stft => self.fft_size / 2 + 1,
            FeatureKind::Mel => self.mel_bands,
        }
    }

    pub fn window_samples(&self, sample_rate: u32) -> usize {
        (self.window_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        (self.hop_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if self.window_ms <= 0.0 || self.hop_ms <= 0.0 {
            return Err(CcatError::Config("window and hop must be positive".into()));
        }
        if !self.fft_size.is_power_of_two() {
            return Err(CcatError::Config(format!(
                "fft_size {} is not a power of two",
                self.fft_size
            )));
        }
        if self.fft_size < self.window_samples(sample_rate) {
            return Err(CcatError::Config(format!(
                "fft_size {} smaller than the {}-sample window",
                self.fft_size,
                self.window_samples(sample_rate)
            )));
        }
        if self.kind == FeatureKind::Mel && self.mel_bands == 0 {
            return Err(CcatError::Config("mel_bands must be at least 1".into()));
        }
        if self.log_floor <= 0.0 {
            return Err(CcatError::Config("log_floor must be positive".into()));
        }
        Ok(())
    }
}

/// T x F matrix of log-magnitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct LogSpectrogram<T> {
    frames: Tensor<T>,
}

impl<T: Scalar> LogSpectrogram<T> {
    pub fn new(frames: Tensor<T>) -> Self {
        assert_eq!(frames.ndim(), 2);
        LogSpectrogram { frames }
    }

    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn num_bins(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn frames(&self) -> &Tensor<T> {
        &self.frames
    }

    pub fn at(&self, t: usize, f: usize) -> T {
        self.frames.at(&[t, f])
    }
}

/// Magnitude spectra of all frames (row-major T x F), in f64.
fn magnitude_frames(w: &Waveform, cfg: &FeatureConfig) -> Result<(usize, usize, Vec<f64>)> {
    cfg.validate(w.sample_rate())?;
    let win = cfg.window_samples(w.sample_rate());
    let hop = cfg.hop_samples(w.sample_rate());
    if win == 0 || hop == 0 {
        return Err(CcatError::Config("window/hop round to zero samples".into()));
    }
    let samples = w.samples();
    if samples.len() < win {
        return Err(CcatError::TooShort(format!(
            "{} samples < one {}-sample window",
            samples.len(),
            win
        )));
    }
    let t_len = (samples.len() - win) / hop + 1;
    let f_len = cfg.fft_size / 2 + 1;
    // symmetric Hann: palindromic, so time-reversed audio keeps its spectrum
    let hann: Vec<f64> = (0..win)
        .map(|i| {
            if win == 1 {
                1.0
            } else {
                0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / (win - 1) as f64).cos())
            }
        })
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(cfg.fft_size);
    let mut mags = vec![0.0f64; t_len * f_len];
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
    for t in 0..t_len {
        let start = t * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = if i < win {
                Complex::new(samples[start + i] * hann[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for f in 0..f_len {
            mags[t * f_len + f] = buf[f].norm();
        }
    }
    Ok((t_len, f_len, mags))
}

/// Log-magnitude STFT spectrogram.
pub fn stft_log_magnitude<T: Scalar>(w: &Waveform, cfg: &FeatureConfig) -> Result<LogSpectrogram<T>> {
    if cfg.kind != FeatureKind::Stft {
        return Err(CcatError::Config("stft_log_magnitude requires kind=STFT".into()));
    }
    let (t_len, f_len, mags) = magnitude_frames(w, cfg)?;
    let data: Vec<T> = mags
        .iter()
        .map(|&m| T::from_f64(m.max(cfg.log_floor).ln()))
        .collect();
    Ok(LogSpectrogram::new(Tensor::from_vec(&[t_len, f_len], data)))
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank rows (bands x bins), HTK scale, edges from 0 Hz
/// to Nyquist.
pub fn mel_filterbank(sample_rate: u32, fft_size: usize, bands: usize) -> Vec<Vec<f64>> {
    let f_len = fft_size / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..bands + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (bands + 1) as f64))
        .collect();
    let bin_hz: Vec<f64> = (0..f_len)
        .map(|k| k as f64 * sample_rate as f64 / fft_size as f64)
        .collect();
    (0..bands)
        .map(|b| {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            bin_hz
                .iter()
                .map(|&f| {
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// Log-magnitude mel spectrogram: magnitude STFT through the triangular
/// filterbank, then the same log floor.
pub fn mel_log_magnitude<T: Scalar>(w: &Waveform, cfg: &FeatureConfig) -> Result<LogSpectrogram<T>> {
    if cfg.kind != FeatureKind::Mel {
        return Err(CcatError::Config("mel_log_magnitude requires kind=MEL".into()));
    }
    let (t_len, f_len, mags) = magnitude_frames(w, cfg)?;
    let fb = mel_filterbank(w.sample_rate(), cfg.fft_size, cfg.mel_bands);
    let mut data = vec![T::zero(); t_len * cfg.mel_bands];
    for t in 0..t_len {
        let frame = &mags[t * f_len..(t + 1) * f_len];
        for (b, row) in fb.iter().enumerate() {
            let e: f64 = row.iter().zip(frame).map(|(w, m)| w * m).sum();
            data[t * cfg.mel_bands + b] = T::from_f64(e.max(cfg.log_floor).ln());
        }
    }
    Ok(LogSpectrogram::new(Tensor::from_vec(
        &[t_len, cfg.mel_bands],
        data,
    )))
}

/// Spectrogram for the configured feature kind.
pub fn log_spectrogram<T: Scalar>(w: &Waveform, cfg: &FeatureConfig) -> Result<LogSpectrogram<T>> {
    match cfg.kind {
        FeatureKind::Stft => stft_log_magnitude(w, cfg),
        FeatureKind::Mel => mel_log_magnitude(w, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, n: usize, rate: u32) -> Waveform {
        let s: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin() * 0.5)
            .collect();
        Waveform::new(s, rate).unwrap()
    }

    #[test]
    fn zero_signal_hits_log_floor_everywhere() {
        let w = Waveform::new(vec![0.0; 16_000], 16_000).unwrap();
        let cfg = FeatureConfig::default();
        let spec: LogSpectrogram<f64> = stft_log_magnitude(&w, &cfg).unwrap();
        let floor = 1e-10f64.ln();
        assert!(spec.frames().data().iter().all(|&v| v == floor));
        let mel: LogSpectrogram<f64> = mel_log_magnitude(&w, &FeatureConfig::mel()).unwrap();
        assert!(mel.frames().data().iter().all(|&v| v == floor));
    }

    #[test]
    fn one_second_at_16khz_gives_61_by_257() {
        let w = tone(440.0, 16_000, 16_000);
        let spec: LogSpectrogram<f64> = stft_log_magnitude(&w, &FeatureConfig::default()).unwrap();
        assert_eq!(spec.num_frames(), 61);
        assert_eq!(spec.num_bins(), 257);
    }

    #[test]
    fn short_signal_errors() {
        let w = Waveform::new(vec![0.1; 100], 16_000).unwrap();
        assert!(matches!(
            stft_log_magnitude::<f64>(&w, &FeatureConfig::default()),
            Err(CcatError::TooShort(_))
        ));
    }

    #[test]
    fn sine_at_bin_center_peaks_at_that_bin() {
        // one full window; bin k center frequency = k * rate / fft_size
        let cfg = FeatureConfig::default();
        for k in [3usize, 32, 100] {
            let freq = k as f64 * 16_000.0 / cfg.fft_size as f64;
            let w = tone(freq, 512, 16_000);
            let spec: LogSpectrogram<f64> = stft_log_magnitude(&w, &cfg).unwrap();
            assert_eq!(spec.num_frames(), 1);
            let argmax = (0..spec.num_bins())
                .max_by(|&a, &b| spec.at(0, a).partial_cmp(&spec.at(0, b)).unwrap())
                .unwrap();
            assert_eq!(argmax, k, "peak for tone at bin {k}");

            // independent direct-DFT oracle on the same frame
            let hann: Vec<f64> = (0..512)
                .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / 511.0).cos()))
                .collect();
            let windowed: Vec<f64> = w
                .samples()
                .iter()
                .zip(&hann)
                .map(|(s, h)| s * h)
                .collect();
            let mut dft_argmax = 0;
            let mut best = -1.0f64;
            for bin in 0..257 {
                let (mut re, mut im) = (0.0f64, 0.0f64);
                for (i, &x) in windowed.iter().enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * bin as f64 * i as f64 / 512.0;
                    re += x * ang.cos();
                    im += x * ang.sin();
                }
                let mag = (re * re + im * im).sqrt();
                if mag > best {
                    best = mag;
                    dft_argmax = bin;
                }
                // FFT magnitudes must match the direct DFT
                let got = spec.at(0, bin).exp();
                assert!(
                    (got - mag.max(1e-10)).abs() < 1e-6 * mag.max(1.0),
                    "bin {bin}: fft {got} vs dft {mag}"
                );
            }
            assert_eq!(dft_argmax, k);
        }
    }

    #[test]
    fn filterbank_rows_are_triangular_with_positive_mass() {
        let fb = mel_filterbank(16_000, 512, 48);
        assert_eq!(fb.len(), 48);
        for (b, row) in fb.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            assert!(sum > 0.0, "band {b} collects no bins");
            // monotone up then down
            let peak = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            for w in row[..peak].windows(2) {
                assert!(w[0] <= w[1] + 1e-12);
            }
            for w in row[peak..].windows(2) {
                assert!(w[0] >= w[1] - 1e-12);
            }
        }
    }

    #[test]
    fn mel_energies_match_matrix_multiply_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let samples: Vec<f64> = (0..2048).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let w = Waveform::new(samples, 16_000).unwrap();
        let cfg = FeatureConfig::mel();
        let mel: LogSpectrogram<f64> = mel_log_magnitude(&w, &cfg).unwrap();
        let stft_cfg = FeatureConfig::default();
        let (t_len, f_len, mags) = magnitude_frames(&w, &stft_cfg).unwrap();

        // independent filterbank from the HTK formulas
        let nyq_mel = 2595.0 * (1.0f64 + 8000.0 / 700.0).log10();
        let edge =
            |i: usize| 700.0 * (10f64.powf(nyq_mel * i as f64 / 49.0 / 2595.0) - 1.0);
        for t in 0..t_len {
            for b in 0..48 {
                let (lo, mid, hi) = (edge(b), edge(b + 1), edge(b + 2));
                let mut e = 0.0;
                for k in 0..f_len {
                    let f = k as f64 * 16_000.0 / 512.0;
                    let wgt = if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    };
                    e += wgt * mags[t * f_len + k];
                }
                let want = e.max(1e-10).ln();
                let got = mel.at(t, b);
                assert!(got.is_finite());
                assert!(got >= 1e-10f64.ln());
                assert!((got - want).abs() < 1e-9, "t={t} b={b}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn trailing_zeros_within_hop_do_not_change_output() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let cfg = FeatureConfig::default();
        // frame-aligned length: any pad < hop leaves T unchanged
        let len = 512 + 256 * 9;
        let base: Vec<f64> = (0..len).map(|_| rng.gen_range(-0.8..0.8)).collect();
        let w0 = Waveform::new(base.clone(), 16_000).unwrap();
        let s0: LogSpectrogram<f64> = stft_log_magnitude(&w0, &cfg).unwrap();
        for pad in [1usize, 100, 255] {
            let mut padded = base.clone();
            padded.extend(std::iter::repeat(0.0).take(pad));
            let w1 = Waveform::new(padded, 16_000).unwrap();
            let s1: LogSpectrogram<f64> = stft_log_magnitude(&w1, &cfg).unwrap();
            assert_eq!(s0.num_frames(), s1.num_frames());
            assert_eq!(s0.frames().data(), s1.frames().data());
        }
    }

    #[test]
    fn config_validation_catches_bad_values() {
        let mut cfg = FeatureConfig::default();
        cfg.fft_size = 500;
        assert!(matches!(cfg.validate(16_000), Err(CcatError::Config(_))));
        let mut cfg = FeatureConfig::default();
        cfg.fft_size = 256; // smaller than the 512-sample window
        assert!(matches!(cfg.validate(16_000), Err(CcatError::Config(_))));
        let mut cfg = FeatureConfig::mel();
        cfg.mel_bands = 0;
        assert!(matches!(cfg.validate(16_000), Err(CcatError::Config(_))));
    }
}

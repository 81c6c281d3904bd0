//! RIFF/WAVE decoding (PCM16 and IEEE float32), channel downmix and linear
//! resampling to the 16 kHz analysis rate.

use std::fs;
use std::path::Path;

use crate::error::{CcatError, Result};

/// Analysis sample rate everything is resampled to.
pub const TARGET_RATE: u32 = 16_000;

/// Mono audio signal with amplitudes in [-1, 1].
#[derive(Clone, Debug)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(CcatError::Parse("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(CcatError::Parse("waveform has no samples".into()));
        }
        if !samples.iter().all(|s| s.is_finite()) {
            return Err(CcatError::Parse("waveform contains non-finite samples".into()));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

fn u16_at(b: &[u8], off: usize) -> Result<u16> {
    b.get(off..off + 2)
        .map(|s| u16::from_le_bytes([s[0], s[1]]))
        .ok_or_else(|| CcatError::Parse(format!("unexpected end of file at byte {off}")))
}

fn u32_at(b: &[u8], off: usize) -> Result<u32> {
    b.get(off..off + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| CcatError::Parse(format!("unexpected end of file at byte {off}")))
}

struct FmtChunk {
    audio_format: u16,
    channels: u16,
    sample_rate: u32,
    bits_per_sample: u16,
}

/// Decode a RIFF/WAVE file, downmix to mono by channel averaging and resample
/// to 16 kHz via linear interpolation.
pub fn load_wav(path: &Path) -> Result<Waveform> {
    let bytes = fs::read(path)?;
    decode_wav(&bytes)
}

/// Decode from bytes; see [`load_wav`].
pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(CcatError::Parse("not a RIFF/WAVE file".into()));
    }
    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    let mut off = 12;
    while off + 8 <= bytes.len() {
        let id = &bytes[off..off + 4];
        let size = u32_at(bytes, off + 4)? as usize;
        let body_start = off + 8;
        if body_start + size > bytes.len() {
            return Err(CcatError::Parse(format!(
                "chunk {:?} overruns file",
                String::from_utf8_lossy(id)
            )));
        }
        let body = &bytes[body_start..body_start + size];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(CcatError::Parse("fmt chunk too short".into()));
                }
                fmt = Some(FmtChunk {
                    audio_format: u16_at(body, 0)?,
                    channels: u16_at(body, 2)?,
                    sample_rate: u32_at(body, 4)?,
                    bits_per_sample: u16_at(body, 14)?,
                });
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word-aligned
        off = body_start + size + (size & 1);
    }
    let fmt = fmt.ok_or_else(|| CcatError::Parse("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| CcatError::Parse("missing data chunk".into()))?;
    if fmt.channels == 0 {
        return Err(CcatError::Parse("zero channels".into()));
    }
    if fmt.sample_rate == 0 {
        return Err(CcatError::Parse("zero sample rate".into()));
    }

    let interleaved: Vec<f64> = match (fmt.audio_format, fmt.bits_per_sample) {
        (1, 16) => data
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
            .collect(),
        (3, 32) => {
            let vals: Vec<f64> = data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            if !vals.iter().all(|v| v.is_finite()) {
                return Err(CcatError::Parse("non-finite float sample".into()));
            }
            vals
        }
        (fmt_code, bits) => {
            return Err(CcatError::UnsupportedFormat(format!(
                "audio format {fmt_code} with {bits} bits per sample"
            )))
        }
    };

    let ch = fmt.channels as usize;
    let frames = interleaved.len() / ch;
    if frames == 0 {
        return Err(CcatError::Parse("empty data chunk".into()));
    }
    let mono: Vec<f64> = (0..frames)
        .map(|f| interleaved[f * ch..(f + 1) * ch].iter().sum::<f64>() / ch as f64)
        .collect();

    let samples = if fmt.sample_rate == TARGET_RATE {
        mono
    } else {
        resample_linear(&mono, fmt.sample_rate, TARGET_RATE)
    };
    Waveform::new(samples, TARGET_RATE)
}

/// Linear-interpolation resampling. Output length is
/// `floor((len - 1) * dst / src) + 1` so the last output sample never reads
/// past the input.
pub fn resample_linear(samples: &[f64], src_rate: u32, dst_rate: u32) -> Vec<f64> {
    assert!(src_rate > 0 && dst_rate > 0);
    if samples.is_empty() || src_rate == dst_rate {
        return samples.to_vec();
    }
    let out_len = ((samples.len() as u64 - 1) * dst_rate as u64 / src_rate as u64) as usize + 1;
    let ratio = src_rate as f64 / dst_rate as f64;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let lo = (pos.floor() as usize).min(samples.len() - 1);
            let hi = (lo + 1).min(samples.len() - 1);
            let frac = pos - lo as f64;
            samples[lo] * (1.0 - frac) + samples[hi] * frac
        })
        .collect()
}

/// Write a 16-bit PCM WAV file. `interleaved` holds channel-interleaved
/// samples in [-1, 1].
pub fn save_wav_pcm16(
    path: &Path,
    interleaved: &[f64],
    channels: u16,
    sample_rate: u32,
) -> Result<()> {
    let mut pcm = Vec::with_capacity(interleaved.len() * 2);
    for &s in interleaved {
        let v = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        pcm.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, wav_bytes(1, 16, channels, sample_rate, &pcm))?;
    Ok(())
}

/// Write an IEEE float32 WAV file.
pub fn save_wav_f32(
    path: &Path,
    interleaved: &[f64],
    channels: u16,
    sample_rate: u32,
) -> Result<()> {
    let mut raw = Vec::with_capacity(interleaved.len() * 4);
    for &s in interleaved {
        raw.extend_from_slice(&(s as f32).to_le_bytes());
    }
    fs::write(path, wav_bytes(3, 32, channels, sample_rate, &raw))?;
    Ok(())
}

fn wav_bytes(format: u16, bits: u16, channels: u16, sample_rate: u32, data: &[u8]) -> Vec<u8> {
    let block_align = channels * bits / 8;
    let byte_rate = sample_rate * block_align as u32;
    let mut out = Vec::with_capacity(44 + data.len());
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&byte_rate.to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data.len() as u32).to_le_bytes());
    out.extend_from_slice(data);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pcm16_file(samples: &[i16], channels: u16, rate: u32) -> Vec<u8> {
        let mut data = Vec::new();
        for s in samples {
            data.extend_from_slice(&s.to_le_bytes());
        }
        wav_bytes(1, 16, channels, rate, &data)
    }

    #[test]
    fn pcm16_full_scale_maps_just_below_one() {
        let bytes = pcm16_file(&[32767], 1, 16_000);
        let w = decode_wav(&bytes).unwrap();
        assert!((w.samples()[0] - 32767.0 / 32768.0).abs() < 1e-12);
        assert!((w.samples()[0] - 0.99997).abs() < 1e-4);
    }

    #[test]
    fn stereo_downmix_averages_channels() {
        let one = (1.0f64 * 32768.0).min(32767.0) as i16; // 32767
        let bytes = pcm16_file(&[one, 0, one, 0], 2, 16_000);
        let w = decode_wav(&bytes).unwrap();
        assert_eq!(w.len(), 2);
        for s in w.samples() {
            assert!((s - 0.5).abs() < 1e-4);
        }
    }

    #[test]
    fn eight_khz_input_resamples_to_double_length_minus_one() {
        for t in [5usize, 100, 1601] {
            let samples: Vec<i16> = (0..t).map(|i| (i % 17) as i16 * 100).collect();
            let bytes = pcm16_file(&samples, 1, 8_000);
            let w = decode_wav(&bytes).unwrap();
            // independent length oracle: count positions i with i/2 <= t-1
            let oracle = (0..).take_while(|&i| i * 8000 <= (t - 1) * 16000).count();
            assert_eq!(w.len(), oracle);
            assert!(w.len() >= 2 * t - 1 && w.len() <= 2 * t);
            assert_eq!(w.sample_rate(), 16_000);
        }
    }

    #[test]
    fn resampled_values_match_direct_interpolation_oracle() {
        let src: Vec<f64> = (0..50).map(|i| ((i as f64) * 0.37).sin()).collect();
        let out = resample_linear(&src, 8_000, 16_000);
        for (i, &v) in out.iter().enumerate() {
            let pos = i as f64 / 2.0;
            let lo = pos.floor() as usize;
            let expect = if pos.fract() == 0.0 {
                src[lo]
            } else {
                0.5 * (src[lo] + src[lo + 1])
            };
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn float32_wav_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let samples: Vec<f64> = (0..100).map(|i| (i as f64 / 30.0).sin() * 0.7).collect();
        save_wav_f32(&path, &samples, 1, 16_000).unwrap();
        let w = load_wav(&path).unwrap();
        assert_eq!(w.len(), samples.len());
        for (a, b) in w.samples().iter().zip(&samples) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn malformed_header_is_parse_error() {
        assert!(matches!(
            decode_wav(b"RIFX....WAVE"),
            Err(CcatError::Parse(_))
        ));
        assert!(matches!(decode_wav(b"RI"), Err(CcatError::Parse(_))));
    }

    #[test]
    fn unsupported_codec_is_rejected() {
        // 24-bit PCM
        let bytes = wav_bytes(1, 24, 1, 16_000, &[0, 0, 0]);
        assert!(matches!(
            decode_wav(&bytes),
            Err(CcatError::UnsupportedFormat(_))
        ));
        // a-law
        let bytes = wav_bytes(6, 8, 1, 8_000, &[0]);
        assert!(matches!(
            decode_wav(&bytes),
            Err(CcatError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn empty_data_chunk_is_parse_error() {
        let bytes = wav_bytes(1, 16, 1, 16_000, &[]);
        assert!(matches!(decode_wav(&bytes), Err(CcatError::Parse(_))));
    }
}

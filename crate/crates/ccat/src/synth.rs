//! Seeded synthetic speech-like test signals: sine + white noise mixtures at
//! controlled SNR, with MOS labels derived from the SNR through a smooth
//! monotone map. Used by the desk-scale experiments and examples.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::UtteranceRecord;
use crate::error::Result;
use crate::frontend::{save_wav_pcm16, Waveform, TARGET_RATE};

/// Logistic function.
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Synthetic MOS label for a clip at the given SNR:
/// `1 + 4 * sigmoid(0.3 * (snr_db - 10))`. Smooth, monotone, in (1, 5).
pub fn mos_from_snr(snr_db: f64) -> f64 {
    1.0 + 4.0 * sigmoid(0.3 * (snr_db - 10.0))
}

/// Recipe for one clip.
#[derive(Clone, Debug)]
pub struct ClipSpec {
    pub id: String,
    pub seed: u64,
    pub duration_s: f64,
    pub tone_hz: f64,
    pub snr_db: f64,
    pub mos: f64,
}

/// Synthesize the clip: a sine carrier plus uniform white noise scaled to
/// the target SNR, peak-normalized when the mix would clip. Scaling both
/// components together preserves the SNR.
pub fn render_clip(spec: &ClipSpec) -> Waveform {
    let n = (spec.duration_s * TARGET_RATE as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let tone_amp = 0.25f64;
    let tone_power = tone_amp * tone_amp / 2.0;
    let noise_power = tone_power / 10f64.powf(spec.snr_db / 10.0);
    // uniform[-b, b] has power b^2 / 3
    let noise_amp = (3.0 * noise_power).sqrt();
    let mut samples: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / TARGET_RATE as f64;
            let tone = tone_amp * (2.0 * std::f64::consts::PI * spec.tone_hz * t).sin();
            tone + rng.gen_range(-noise_amp..=noise_amp)
        })
        .collect();
    let peak = samples.iter().fold(0.0f64, |a, &s| a.max(s.abs()));
    if peak > 0.99 {
        let scale = 0.99 / peak;
        for s in &mut samples {
            *s *= scale;
        }
    }
    Waveform::new(samples, TARGET_RATE).expect("synthesized clip is valid")
}

/// Clip recipes with SNRs evenly covering [snr_lo, snr_hi] and seeded
/// per-clip noise and duration.
pub fn snr_corpus(
    count: usize,
    seed: u64,
    snr_lo: f64,
    snr_hi: f64,
    dur_lo: f64,
    dur_hi: f64,
    id_prefix: &str,
) -> Vec<ClipSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let frac = if count > 1 {
                i as f64 / (count - 1) as f64
            } else {
                0.5
            };
            let snr_db = snr_lo + (snr_hi - snr_lo) * frac;
            ClipSpec {
                id: format!("{id_prefix}{i:04}"),
                seed: seed.wrapping_mul(31).wrapping_add(i as u64),
                duration_s: rng.gen_range(dur_lo..=dur_hi),
                tone_hz: rng.gen_range(180.0..320.0),
                snr_db,
                mos: mos_from_snr(snr_db),
            }
        })
        .collect()
}

/// Write clips as PCM16 WAV files plus a manifest; returns the manifest path.
pub fn write_corpus(dir: &Path, specs: &[ClipSpec], corpus_tag: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut records = Vec::with_capacity(specs.len());
    for spec in specs {
        let wav_path = dir.join(format!("{}.wav", spec.id));
        let w = render_clip(spec);
        save_wav_pcm16(&wav_path, w.samples(), 1, w.sample_rate())?;
        records.push(UtteranceRecord {
            id: spec.id.clone(),
            path: wav_path,
            mos: spec.mos,
            ci95: None,
            tags: vec![corpus_tag.to_string()],
        });
    }
    let manifest = dir.join("manifest.csv");
    crate::data::write_manifest(&manifest, &records, None)?;
    Ok(manifest)
}

/// Empirical SNR of a rendered clip against its pure-tone component, in dB.
pub fn measured_snr_db(spec: &ClipSpec) -> f64 {
    let w = render_clip(spec);
    let n = w.len();
    let mut tone = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / TARGET_RATE as f64;
        tone.push(0.25 * (2.0 * std::f64::consts::PI * spec.tone_hz * t).sin());
    }
    // the mix may have been peak-normalized; recover the scale by projection
    let dot: f64 = w.samples().iter().zip(&tone).map(|(a, b)| a * b).sum();
    let tt: f64 = tone.iter().map(|b| b * b).sum();
    let scale = dot / tt;
    let signal: Vec<f64> = tone.iter().map(|b| b * scale).collect();
    let ps: f64 = signal.iter().map(|s| s * s).sum::<f64>() / n as f64;
    let pn: f64 = w
        .samples()
        .iter()
        .zip(&signal)
        .map(|(a, s)| (a - s) * (a - s))
        .sum::<f64>()
        / n as f64;
    10.0 * (ps / pn).log10()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_map_hits_known_points() {
        assert!((mos_from_snr(10.0) - 3.0).abs() < 1e-12);
        assert!(mos_from_snr(-60.0) < 1.01);
        assert!(mos_from_snr(80.0) > 4.99);
        // strictly monotone
        let mut prev = mos_from_snr(-20.0);
        for i in 1..100 {
            let v = mos_from_snr(-20.0 + i as f64 * 0.6);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn rendered_snr_matches_target() {
        for &snr in &[-5.0, 0.0, 10.0, 25.0] {
            let spec = ClipSpec {
                id: "t".into(),
                seed: 9,
                duration_s: 1.0,
                tone_hz: 250.0,
                snr_db: snr,
                mos: mos_from_snr(snr),
            };
            let measured = measured_snr_db(&spec);
            assert!(
                (measured - snr).abs() < 0.5,
                "target {snr} dB, measured {measured} dB"
            );
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let specs = snr_corpus(3, 7, 0.0, 20.0, 1.0, 2.0, "c");
        for spec in &specs {
            let a = render_clip(spec);
            let b = render_clip(spec);
            assert_eq!(a.samples(), b.samples());
        }
    }

    #[test]
    fn corpus_writes_manifest_and_files() {
        let dir = tempfile::tempdir().unwrap();
        let specs = snr_corpus(4, 3, 5.0, 15.0, 0.5, 0.8, "syn");
        let manifest = write_corpus(dir.path(), &specs, "syn").unwrap();
        let records = crate::data::load_manifest(&manifest).unwrap();
        assert_eq!(records.len(), 4);
        for r in &records {
            assert!(r.path.exists());
            assert!((1.0..=5.0).contains(&r.mos));
            assert_eq!(r.corpus(), "syn");
        }
    }
}

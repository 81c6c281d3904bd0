//! Decode a WAV file and turn it into the context-aware feature tensor the
//! network consumes. Generates its own test clip if no path is given.
//!
//! Usage: cargo run --example extract_features [-- path/to/file.wav]

use ccat::frontend::{extract_features, load_wav, make_context, stft_log_magnitude, FeatureConfig};
use ccat::synth::{mos_from_snr, render_clip, ClipSpec};

fn main() -> ccat::Result<()> {
    let wav = match std::env::args().nth(1) {
        Some(path) => load_wav(path.as_ref())?,
        None => render_clip(&ClipSpec {
            id: "demo".into(),
            seed: 1,
            duration_s: 1.0,
            tone_hz: 240.0,
            snr_db: 15.0,
            mos: mos_from_snr(15.0),
        }),
    };
    println!(
        "waveform: {} samples at {} Hz ({:.2} s)",
        wav.len(),
        wav.sample_rate(),
        wav.duration_secs()
    );

    let cfg = FeatureConfig::default();
    let spec = stft_log_magnitude::<f32>(&wav, &cfg)?;
    println!(
        "log-magnitude STFT: {} frames x {} bins",
        spec.num_frames(),
        spec.num_bins()
    );

    let ct = make_context(&spec, cfg.context_half_width);
    println!(
        "context tensor: {} x {} x {} (context size {})",
        ct.num_frames(),
        ct.feature_width(),
        ct.context_size(),
        cfg.context_size()
    );

    let mel_cfg = FeatureConfig::mel();
    let mel = extract_features::<f32>(&wav, &mel_cfg)?;
    println!(
        "mel variant: {} x {} x {}",
        mel.num_frames(),
        mel.feature_width(),
        mel.context_size()
    );
    Ok(())
}

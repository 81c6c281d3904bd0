//! Audio decoding and context-aware feature extraction.

mod cache;
mod context;
mod spectrogram;
mod wav;

pub use cache::{load_features, save_features};
pub use context::{make_context, ContextTensor};
pub use spectrogram::{
    hz_to_mel, log_spectrogram, mel_filterbank, mel_log_magnitude, mel_to_hz, stft_log_magnitude,
    FeatureConfig, FeatureKind, LogSpectrogram,
};
pub use wav::{
    decode_wav, load_wav, resample_linear, save_wav_f32, save_wav_pcm16, Waveform, TARGET_RATE,
};

use crate::error::Result;
use crate::nncore::Scalar;

/// Full frontend: spectrogram for the configured kind, then context stacking.
pub fn extract_features<T: Scalar>(w: &Waveform, cfg: &FeatureConfig) -> Result<ContextTensor<T>> {
    let spec = log_spectrogram(w, cfg)?;
    Ok(make_context(&spec, cfg.context_half_width))
}

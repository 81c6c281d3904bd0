//! Train two small models on different features (STFT and mel), then average
//! their utterance scores into an ensemble prediction.
//!
//! Usage: cargo run --release --example ensemble_predict

use ccat::frontend::{extract_features, FeatureConfig, FeatureKind};
use ccat::model::{CCATNetwork, ModelConfig, PositionalEncoding};
use ccat::synth::{render_clip, snr_corpus, ClipSpec};
use ccat::training::{fit, TrainConfig, TrainItem};
use ccat::tuning::{ensemble_predict, member_predictions};

fn small_model(kind: FeatureKind, context_size: usize) -> ModelConfig {
    ModelConfig {
        feature_kind: kind,
        context_size,
        conv_filters: 4,
        conv_kernel: 3,
        num_encoders: 1,
        ff_units: 32,
        att_heads: 2,
        d_model: 16,
        fc_units: 32,
        fc_layers: 1,
        dropout: 0.05,
        positional_encoding: PositionalEncoding::None,
    }
}

fn train_one(
    feature: &FeatureConfig,
    seed: u64,
) -> ccat::Result<(CCATNetwork<f32>, FeatureConfig)> {
    let specs = snr_corpus(60, 70 + seed, -10.0, 30.0, 0.8, 1.2, "ens");
    let items: Vec<TrainItem<f32>> = specs
        .iter()
        .map(|s| {
            Ok(TrainItem {
                id: s.id.clone(),
                mos: s.mos,
                features: extract_features(&render_clip(s), feature)?,
            })
        })
        .collect::<ccat::Result<_>>()?;
    let (dev, train) = items.split_at(12);
    let cfg = TrainConfig {
        batch_size: 8,
        learning_rate: 1e-3,
        l2_lambda: 1e-4,
        max_epochs: 10,
        early_stop_patience: 10,
        seed,
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };
    let net = CCATNetwork::build(
        small_model(feature.kind, feature.context_size()),
        feature.feature_width(),
        seed,
    )?;
    let result = fit(net, train, dev, &cfg)?;
    println!(
        "member ({:?}): best dev PCC {:.4}",
        feature.kind,
        result.best_dev_pcc.unwrap_or(-1.0)
    );
    Ok((result.network, feature.clone()))
}

fn main() -> ccat::Result<()> {
    let stft = FeatureConfig {
        kind: FeatureKind::Stft,
        fft_size: 128,
        window_ms: 8.0,
        hop_ms: 4.0,
        context_half_width: 4,
        ..Default::default()
    };
    let mel = FeatureConfig {
        kind: FeatureKind::Mel,
        mel_bands: 16,
        context_half_width: 4,
        ..Default::default()
    };
    let members = vec![train_one(&stft, 1)?, train_one(&mel, 2)?];

    let clip = ClipSpec {
        id: "query".into(),
        seed: 999,
        duration_s: 1.0,
        tone_hz: 260.0,
        snr_db: 18.0,
        mos: ccat::synth::mos_from_snr(18.0),
    };
    let wav = render_clip(&clip);
    let scores = member_predictions(&members, &wav)?;
    let ensemble = ensemble_predict(&members, &wav)?;
    println!("true label {:.4}", clip.mos);
    for (i, s) in scores.iter().enumerate() {
        println!("member {i}: {s:.4}");
    }
    println!("ensemble: {ensemble:.4}");
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    assert!((ensemble - mean).abs() < 1e-12);
    Ok(())
}

//! Train on 200 synthetic clips whose MOS labels follow a smooth function of
//! the SNR, then verify the model generalizes (dev PCC >= 0.8 on 50 held-out
//! clips). The labeling oracle itself is checked before training.
//!
//! Usage: cargo run --release --example synthetic_learnability

use ccat::frontend::{extract_features, FeatureConfig, FeatureKind};
use ccat::model::{CCATNetwork, ModelConfig, PositionalEncoding};
use ccat::synth::{measured_snr_db, mos_from_snr, render_clip, snr_corpus, ClipSpec};
use ccat::training::{fit, TrainConfig, TrainItem};

fn items(specs: &[ClipSpec], feature: &FeatureConfig) -> ccat::Result<Vec<TrainItem<f32>>> {
    specs
        .iter()
        .map(|spec| {
            let wav = render_clip(spec);
            Ok(TrainItem {
                id: spec.id.clone(),
                mos: spec.mos,
                features: extract_features(&wav, feature)?,
            })
        })
        .collect()
}

fn main() -> ccat::Result<()> {
    // labeling oracle: MOS = 1 + 4 sigmoid(0.3 (SNR - 10))
    assert!((mos_from_snr(10.0) - 3.0).abs() < 1e-12);
    let probe = ClipSpec {
        id: "probe".into(),
        seed: 3,
        duration_s: 1.0,
        tone_hz: 220.0,
        snr_db: 5.0,
        mos: mos_from_snr(5.0),
    };
    let measured = measured_snr_db(&probe);
    println!("oracle check: target 5.0 dB, measured {measured:.2} dB");
    assert!((measured - 5.0).abs() < 0.5);

    let feature = FeatureConfig {
        kind: FeatureKind::Mel,
        mel_bands: 16,
        context_half_width: 4,
        ..Default::default()
    };
    let train_specs = snr_corpus(200, 100, -10.0, 30.0, 1.0, 1.5, "train");
    let dev_specs = snr_corpus(50, 200, -8.0, 28.0, 1.0, 1.5, "dev");
    let train_items = items(&train_specs, &feature)?;
    let dev_items = items(&dev_specs, &feature)?;
    println!("extracted features for 200 train / 50 dev clips");

    let model = ModelConfig {
        feature_kind: FeatureKind::Mel,
        context_size: feature.context_size(),
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
    };
    let train_cfg = TrainConfig {
        batch_size: 16,
        learning_rate: 1e-3,
        l2_lambda: 1e-4,
        max_epochs: 30,
        early_stop_patience: 10,
        seed: 1,
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };
    let net = CCATNetwork::<f32>::build(model, feature.feature_width(), train_cfg.seed)?;
    let result = fit(net, &train_items, &dev_items, &train_cfg)?;
    for r in &result.reports {
        println!(
            "epoch {:2}  loss {:.4}  dev_pcc {:.4}  dev_rmse {:.4}",
            r.epoch, r.train_loss, r.dev_pcc, r.dev_rmse
        );
    }
    let best = result.best_dev_pcc.unwrap_or(-1.0);
    println!("best dev PCC: {best:.4}");
    assert!(best >= 0.8, "synthetic labels should be learnable");
    Ok(())
}

//! Overfit a small model on 16 synthetic clips until the training RMSE
//! drops below 0.1 — a fast sanity check that the whole optimization path
//! (features, forward, loss, backward, Adam) works.
//!
//! Usage: cargo run --release --example train_overfit

use ccat::frontend::{extract_features, FeatureConfig, FeatureKind};
use ccat::metrics::rmse;
use ccat::model::{CCATNetwork, ModelConfig, PositionalEncoding};
use ccat::synth::snr_corpus;
use ccat::training::{fit, TrainConfig, TrainItem};

fn main() -> ccat::Result<()> {
    let feature = FeatureConfig {
        kind: FeatureKind::Mel,
        mel_bands: 8,
        context_half_width: 4,
        ..Default::default()
    };
    let specs = snr_corpus(16, 11, -5.0, 30.0, 1.0, 3.0, "overfit");
    let items: Vec<TrainItem<f32>> = specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let wav = ccat::synth::render_clip(spec);
            Ok(TrainItem {
                id: spec.id.clone(),
                // assigned labels spread over [1.2, 4.8]
                mos: 1.2 + 3.6 * i as f64 / 15.0,
                features: extract_features(&wav, &feature)?,
            })
        })
        .collect::<ccat::Result<_>>()?;

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
        dropout: 0.0,
        positional_encoding: PositionalEncoding::None,
    };
    let train_cfg = TrainConfig {
        batch_size: 4,
        learning_rate: 1e-3,
        l2_lambda: 0.0,
        max_epochs: 500,
        early_stop_patience: 500,
        seed: 7,
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };
    let net = CCATNetwork::<f32>::build(model, feature.feature_width(), train_cfg.seed)?;
    println!("training {} parameters on 16 clips", net.count_params());

    let mut net = net;
    let mut epoch = 0;
    loop {
        let mut cfg = train_cfg.clone();
        cfg.max_epochs = 20;
        cfg.seed = train_cfg.seed.wrapping_add(epoch as u64);
        let result = fit(net, &items, &items, &cfg)?;
        net = result.network;
        epoch += 20;
        let preds: Vec<f64> = items
            .iter()
            .map(|i| Ok(net.predict(&i.features)?.utterance_score))
            .collect::<ccat::Result<Vec<f64>>>()?;
        let labels: Vec<f64> = items.iter().map(|i| i.mos).collect();
        let train_rmse = rmse(&preds, &labels)?;
        println!("epoch {epoch:3}: train RMSE {train_rmse:.4}");
        if train_rmse < 0.1 {
            println!("overfit reached RMSE < 0.1 after {epoch} epochs");
            break;
        }
        if epoch >= 500 {
            println!("did not reach RMSE < 0.1 within 500 epochs");
            std::process::exit(1);
        }
    }
    Ok(())
}

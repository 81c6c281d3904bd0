//! The whole pipeline through the library API: synthesize a corpus, split it
//! per corpus with Kennard-Stone, train a small model, checkpoint it, and
//! evaluate PCC / RMSE / RMSE*3rd on the dev set.
//!
//! Usage: cargo run --release --example end_to_end

use ccat::data::{load_manifest, split_corpus, summary_embedding, UtteranceRecord};
use ccat::frontend::{extract_features, load_wav, FeatureConfig, FeatureKind};
use ccat::metrics::{evaluate_pairs, EvalPair};
use ccat::model::{load_checkpoint, save_checkpoint, CCATNetwork, ModelConfig, PositionalEncoding};
use ccat::synth::{snr_corpus, write_corpus};
use ccat::training::{fit, TrainConfig, TrainItem};

fn main() -> ccat::Result<()> {
    let dir = tempfile::tempdir().map_err(ccat::CcatError::Io)?;

    // 1. corpus
    let specs = snr_corpus(60, 33, -10.0, 30.0, 0.8, 1.2, "syn");
    let manifest_path = write_corpus(dir.path(), &specs, "syn")?;
    let records = load_manifest(&manifest_path)?;
    println!("corpus: {} clips", records.len());

    // 2. split 90/10 on summary embeddings
    let (train_recs, dev_recs) = split_corpus(&records, 0.9, |r| {
        Ok(summary_embedding(&load_wav(&r.path)?)?.0)
    })?;
    println!("split: {} train / {} dev", train_recs.len(), dev_recs.len());

    // 3. features
    let feature = FeatureConfig {
        kind: FeatureKind::Mel,
        mel_bands: 16,
        context_half_width: 4,
        ..Default::default()
    };
    let to_items = |recs: &[UtteranceRecord]| -> ccat::Result<Vec<TrainItem<f32>>> {
        recs.iter()
            .map(|r| {
                Ok(TrainItem {
                    id: r.id.clone(),
                    mos: r.mos,
                    features: extract_features(&load_wav(&r.path)?, &feature)?,
                })
            })
            .collect()
    };
    let train_items = to_items(&train_recs)?;
    let dev_items = to_items(&dev_recs)?;

    // 4. train
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
        batch_size: 8,
        learning_rate: 1e-3,
        l2_lambda: 1e-4,
        max_epochs: 15,
        early_stop_patience: 15,
        seed: 3,
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };
    let net = CCATNetwork::<f32>::build(model, feature.feature_width(), train_cfg.seed)?;
    let result = fit(net, &train_items, &dev_items, &train_cfg)?;
    println!(
        "trained {} epochs, best dev PCC {:.4}",
        result.reports.len(),
        result.best_dev_pcc.unwrap_or(-1.0)
    );

    // 5. checkpoint round trip
    let ckpt = dir.path().join("model.ccat");
    save_checkpoint(&result.network, &feature, &ckpt)?;
    let (net, feature) = load_checkpoint::<f32>(&ckpt)?;
    println!("checkpoint: {} bytes", std::fs::metadata(&ckpt)?.len());

    // 6. evaluate on dev
    let pairs: Vec<EvalPair> = dev_recs
        .iter()
        .map(|r| {
            let ct = extract_features::<f32>(&load_wav(&r.path)?, &feature)?;
            Ok(EvalPair {
                predicted: net.predict(&ct)?.utterance_score,
                label: r.mos,
                ci95: r.ci95,
            })
        })
        .collect::<ccat::Result<_>>()?;
    let report = evaluate_pairs("dev", &pairs)?;
    println!(
        "dev metrics: n={} pcc={} rmse={:.4} rmse_3rd={}",
        report.n,
        report.pcc.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into()),
        report.rmse,
        report
            .rmse_3rd
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "n/a".into())
    );
    Ok(())
}

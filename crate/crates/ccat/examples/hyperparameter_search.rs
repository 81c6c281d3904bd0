//! A miniature seeded random search: sample configurations from a reduced
//! space, train each briefly, rank by dev PCC and expand the top two into
//! STFT/mel candidates.
//!
//! Usage: cargo run --release --example hyperparameter_search

use ccat::frontend::{log_spectrogram, FeatureConfig, FeatureKind};
use ccat::synth::{render_clip, snr_corpus};
use ccat::tuning::{candidate_recipe, run_search, SearchSpace, SpecItem, TrialBudget, TrialStatus};

fn main() -> ccat::Result<()> {
    let feature = FeatureConfig {
        kind: FeatureKind::Mel,
        mel_bands: 16,
        context_half_width: 4,
        ..Default::default()
    };
    let load = |count, seed, tag: &str| -> ccat::Result<Vec<SpecItem>> {
        snr_corpus(count, seed, -10.0, 30.0, 0.8, 1.2, tag)
            .iter()
            .map(|s| {
                Ok(SpecItem {
                    id: s.id.clone(),
                    mos: s.mos,
                    spec: log_spectrogram(&render_clip(s), &feature)?,
                })
            })
            .collect()
    };
    let train = load(40, 900, "tr")?;
    let dev = load(12, 901, "dv")?;

    // a reduced space so every trial stays tiny
    let space = SearchSpace {
        feature_kind: FeatureKind::Mel,
        context_sizes: vec![7, 9],
        conv_filters: vec![2, 4],
        conv_kernels: vec![3],
        num_encoders: vec![1],
        att_heads: vec![2],
        ff_units: vec![16, 32],
        fc_units: vec![16, 32],
        fc_layers: vec![1],
        batch_sizes: vec![8],
        d_model: 16,
        dropout: (0.05, 0.1),
        learning_rate: (5e-4, 2e-3),
        l2_lambda: (1e-4, 1e-3),
    };
    let budget = TrialBudget {
        max_epochs: 6,
        early_stop_patience: 6,
    };
    let trials = run_search(&space, 6, &train, &dev, &feature, budget, 42, None)?;
    for t in &trials {
        match t.status {
            TrialStatus::Done => println!(
                "trial {}  dev_pcc {:.4}  C={} filters={} ff={} lr={:.2e}",
                t.trial_id,
                t.dev_pcc.unwrap(),
                t.model.context_size,
                t.model.conv_filters,
                t.model.ff_units,
                t.train.learning_rate
            ),
            TrialStatus::Diverged => println!("trial {}  diverged", t.trial_id),
        }
    }

    let candidates = candidate_recipe(&trials, 2);
    println!("\ncandidate networks (top 2 x feature variants):");
    for (i, (model, train_cfg)) in candidates.iter().enumerate() {
        println!(
            "  candidate {}: {:?} features, C={}, filters={}, batch={}",
            i, model.feature_kind, model.context_size, model.conv_filters, train_cfg.batch_size
        );
    }
    Ok(())
}

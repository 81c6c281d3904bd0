//! The three shipped reference configurations.

use crate::frontend::{FeatureConfig, FeatureKind};
use crate::model::{ModelConfig, PositionalEncoding};
use crate::training::TrainConfig;

/// A complete named configuration bundle.
#[derive(Clone, Debug)]
pub struct Preset {
    pub name: &'static str,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub feature: FeatureConfig,
}

fn feature(kind: FeatureKind) -> FeatureConfig {
    FeatureConfig {
        kind,
        context_half_width: 5, // context size 11
        ..FeatureConfig::default()
    }
}

fn train(batch_size: usize, learning_rate: f64, l2_lambda: f64) -> TrainConfig {
    TrainConfig {
        batch_size,
        learning_rate,
        l2_lambda,
        max_epochs: 100,
        early_stop_patience: 10,
        seed: 0,
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    }
}

fn model(kind: FeatureKind, filters: usize, encoders: usize, heads: usize, fc_units: usize, dropout: f64) -> ModelConfig {
    ModelConfig {
        feature_kind: kind,
        context_size: 11,
        conv_filters: filters,
        conv_kernel: 5,
        num_encoders: encoders,
        ff_units: 256,
        att_heads: heads,
        d_model: 64,
        fc_units,
        fc_layers: 2,
        dropout,
        positional_encoding: PositionalEncoding::None,
    }
}

/// STFT-input model: 16 filters, 4 encoders, 4 heads, 512 FC units.
pub fn model1() -> Preset {
    Preset {
        name: "model1",
        model: model(FeatureKind::Stft, 16, 4, 4, 512, 0.15),
        train: train(4, 1e-5, 6e-3),
        feature: feature(FeatureKind::Stft),
    }
}

/// Mel-input model: 8 filters, 2 encoders, 2 heads, 256 FC units.
pub fn model2() -> Preset {
    Preset {
        name: "model2",
        model: model(FeatureKind::Mel, 8, 2, 2, 256, 0.19),
        train: train(16, 4.2e-4, 1e-3),
        feature: feature(FeatureKind::Mel),
    }
}

/// Mel-input variant of model 1 (same network, different features).
pub fn model3() -> Preset {
    Preset {
        name: "model3",
        model: model(FeatureKind::Mel, 16, 4, 4, 512, 0.15),
        train: train(4, 1e-5, 6e-3),
        feature: feature(FeatureKind::Mel),
    }
}

pub fn all() -> [Preset; 3] {
    [model1(), model2(), model3()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{pooled_dims, CCATNetwork};

    #[test]
    fn presets_validate_and_build() {
        for preset in all() {
            preset.model.validate().unwrap();
            preset.train.validate().unwrap();
            let f_in = preset.feature.feature_width();
            let net = CCATNetwork::<f32>::build(preset.model.clone(), f_in, 0).unwrap();
            assert!(net.count_params() > 0);
        }
    }

    #[test]
    fn preset_flatten_dims() {
        let p1 = model1();
        assert_eq!(pooled_dims(&p1.model, 257).unwrap().flatten, 512);
        let p2 = model2();
        assert_eq!(pooled_dims(&p2.model, 48).unwrap().flatten, 48);
        let p3 = model3();
        assert_eq!(pooled_dims(&p3.model, 48).unwrap().flatten, 96);
    }

    #[test]
    fn preset_three_matches_one_except_features() {
        let (a, c) = (model1(), model3());
        assert_eq!(a.model.conv_filters, c.model.conv_filters);
        assert_eq!(a.model.num_encoders, c.model.num_encoders);
        assert_eq!(a.model.att_heads, c.model.att_heads);
        assert_eq!(a.model.fc_units, c.model.fc_units);
        assert_eq!(a.train, c.train);
        assert_ne!(a.model.feature_kind, c.model.feature_kind);
    }
}

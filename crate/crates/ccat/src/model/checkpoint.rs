//! Model checkpoints: the binary container with a JSON config section
//! (model + feature configs and input width) and one f32 tensor per
//! parameter. Round-trips are bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CCATNetwork, ModelConfig};
use crate::container::{read_container, write_container, NamedTensor};
use crate::error::{CcatError, Result};
use crate::frontend::FeatureConfig;
use crate::nncore::{Parameter, Scalar, Tensor};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointConfig {
    model: ModelConfig,
    feature: FeatureConfig,
    f_in: usize,
}

/// Write the network and its feature pipeline configuration.
pub fn save_checkpoint<T: Scalar>(
    net: &CCATNetwork<T>,
    feature: &FeatureConfig,
    path: &Path,
) -> Result<()> {
    if feature.feature_width() != net.f_in() {
        return Err(CcatError::Config(format!(
            "feature config yields width {}, network expects {}",
            feature.feature_width(),
            net.f_in()
        )));
    }
    let cfg = CheckpointConfig {
        model: net.config().clone(),
        feature: feature.clone(),
        f_in: net.f_in(),
    };
    let json = serde_json::to_string(&cfg)
        .map_err(|e| CcatError::Config(format!("config not serializable: {e}")))?;
    let tensors: Vec<NamedTensor> = net
        .parameters()
        .iter()
        .map(|p| {
            let dims: Vec<u32> = p.tensor.shape().iter().map(|&d| d as u32).collect();
            let values: Vec<f32> = p.tensor.data().iter().map(|v| v.as_f32()).collect();
            NamedTensor::from_f32(p.name.clone(), &dims, &values)
        })
        .collect();
    write_container(path, &json, &tensors)
}

/// Read a checkpoint back into a network and its feature configuration.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(CCATNetwork<T>, FeatureConfig)> {
    let (json, tensors) = read_container(path)?;
    let cfg: CheckpointConfig = serde_json::from_str(&json)
        .map_err(|e| CcatError::CorruptCheckpoint(format!("bad checkpoint config: {e}")))?;
    cfg.model.validate()?;
    let mut params = Vec::with_capacity(tensors.len());
    for t in &tensors {
        let shape: Vec<usize> = t.dims.iter().map(|&d| d as usize).collect();
        let values: Vec<T> = t.as_f32_vec()?.into_iter().map(T::from_f32).collect();
        // decay flags are re-derived from the parameter role
        let decay = !t.name.ends_with(".bias") && !t.name.ends_with(".gain");
        params.push(Parameter::new(
            t.name.clone(),
            Tensor::from_vec(&shape, values),
            decay,
        ));
    }
    let net = CCATNetwork::from_parts(cfg.model, cfg.f_in, params)?;
    Ok((net, cfg.feature))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::FeatureKind;
    use crate::model::PositionalEncoding;

    fn mel_config(filters: usize, encoders: usize, heads: usize) -> ModelConfig {
        ModelConfig {
            feature_kind: FeatureKind::Mel,
            context_size: 11,
            conv_filters: filters,
            conv_kernel: 5,
            num_encoders: encoders,
            ff_units: 256,
            att_heads: heads,
            d_model: 64,
            fc_units: 256,
            fc_layers: 2,
            dropout: 0.19,
            positional_encoding: PositionalEncoding::None,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ccat");
        let net = CCATNetwork::<f32>::build(mel_config(8, 2, 2), 48, 17).unwrap();
        let mut feat = FeatureConfig::mel();
        feat.mel_bands = 48;
        save_checkpoint(&net, &feat, &path).unwrap();
        let (loaded, feat2) = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(feat, feat2);
        assert_eq!(loaded.config(), net.config());
        assert_eq!(loaded.config().num_encoders, 2);
        assert_eq!(loaded.config().att_heads, 2);
        for (a, b) in net.parameters().iter().zip(loaded.parameters()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.tensor.data(), b.tensor.data());
            assert_eq!(a.decay, b.decay);
        }
        // saving the loaded network reproduces the same bytes
        let path2 = dir.path().join("m2.ccat");
        save_checkpoint(&loaded, &feat2, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ccat");
        let net = CCATNetwork::<f32>::build(mel_config(8, 1, 2), 48, 1).unwrap();
        save_checkpoint(&net, &FeatureConfig::mel(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let cut = &bytes[..bytes.len() / 2];
        std::fs::write(&path, cut).unwrap();
        assert!(matches!(
            load_checkpoint::<f32>(&path),
            Err(CcatError::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ccat");
        std::fs::write(&path, b"NOPE....").unwrap();
        assert!(matches!(
            load_checkpoint::<f32>(&path),
            Err(CcatError::Format(_))
        ));
    }

    #[test]
    fn tensor_shape_mismatch_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ccat");
        let net = CCATNetwork::<f32>::build(mel_config(8, 1, 2), 48, 1).unwrap();
        save_checkpoint(&net, &FeatureConfig::mel(), &path).unwrap();
        // rebuild the container with a tampered kernel shape
        let (json, mut tensors) = crate::container::read_container(&path).unwrap();
        tensors[0].dims = vec![3, 3, 1, 8];
        tensors[0].bytes.truncate(3 * 3 * 8 * 4);
        crate::container::write_container(&path, &json, &tensors).unwrap();
        assert!(matches!(
            load_checkpoint::<f32>(&path),
            Err(CcatError::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn feature_width_mismatch_rejected_at_save() {
        let net = CCATNetwork::<f32>::build(mel_config(8, 1, 2), 48, 1).unwrap();
        let stft = FeatureConfig::default(); // width 257, not 48
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            save_checkpoint(&net, &stft, &dir.path().join("m.ccat")),
            Err(CcatError::Config(_))
        ));
    }
}

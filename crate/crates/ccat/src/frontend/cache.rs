//! Per-utterance feature cache files, reusing the checkpoint container with
//! tensors `features` (f32, T x F x C) and `mask` (u8, T).

use std::path::Path;

use super::context::ContextTensor;
use super::spectrogram::FeatureConfig;
use crate::container::{read_container, write_container, NamedTensor};
use crate::error::{CcatError, Result};
use crate::nncore::{Scalar, Tensor};

pub fn save_features(path: &Path, cfg: &FeatureConfig, ct: &ContextTensor<f32>) -> Result<()> {
    let json = serde_json::to_string(cfg)
        .map_err(|e| CcatError::Config(format!("config not serializable: {e}")))?;
    let dims: Vec<u32> = ct.data.shape().iter().map(|&d| d as u32).collect();
    let mask: Vec<u8> = ct.valid_mask.iter().map(|&m| m as u8).collect();
    let tensors = vec![
        NamedTensor::from_f32("features", &dims, ct.data.data()),
        NamedTensor::from_u8("mask", &[mask.len() as u32], &mask),
    ];
    write_container(path, &json, &tensors)
}

pub fn load_features<T: Scalar>(path: &Path) -> Result<(FeatureConfig, ContextTensor<T>)> {
    let (json, tensors) = read_container(path)?;
    let cfg: FeatureConfig = serde_json::from_str(&json)
        .map_err(|e| CcatError::CorruptCheckpoint(format!("bad feature config: {e}")))?;
    let features = tensors
        .iter()
        .find(|t| t.name == "features")
        .ok_or_else(|| CcatError::CorruptCheckpoint("missing features tensor".into()))?;
    let mask = tensors
        .iter()
        .find(|t| t.name == "mask")
        .ok_or_else(|| CcatError::CorruptCheckpoint("missing mask tensor".into()))?;
    if features.dims.len() != 3 {
        return Err(CcatError::CorruptCheckpoint(format!(
            "features tensor has {} dims, expected 3",
            features.dims.len()
        )));
    }
    if mask.dims.len() != 1 || mask.dims[0] != features.dims[0] {
        return Err(CcatError::CorruptCheckpoint(
            "mask length does not match frame count".into(),
        ));
    }
    let shape: Vec<usize> = features.dims.iter().map(|&d| d as usize).collect();
    let values: Vec<T> = features
        .as_f32_vec()?
        .into_iter()
        .map(T::from_f32)
        .collect();
    Ok((
        cfg,
        ContextTensor {
            data: Tensor::from_vec(&shape, values),
            valid_mask: mask.bytes.iter().map(|&b| b != 0).collect(),
        },
    ))
}

//! MOS-weighted training objective.
//!
//! Per utterance the loss is the squared utterance error plus the
//! label-conditioned weight `alpha(M) = 10^(M-5)` times the mean squared
//! frame error over valid frames; the batch loss averages over utterances.

use crate::error::{CcatError, Result};
use crate::nncore::{sum_scalars, Scalar, Var};

/// Conditional frame-loss weight `10^(M - 5)` for a label in [1, 5].
pub fn mos_weight(mos: f64) -> Result<f64> {
    if !(1.0..=5.0).contains(&mos) {
        return Err(CcatError::Label(format!("MOS {mos} outside [1, 5]")));
    }
    Ok(10f64.powf(mos - 5.0))
}

/// One utterance in a loss batch: label, on-tape utterance score (scalar),
/// on-tape frame scores `[T]`, and the validity mask.
pub struct LossItem<'a, T> {
    pub mos: f64,
    pub utterance: Var<T>,
    pub frames: Var<T>,
    pub valid_mask: &'a [bool],
}

/// Batch loss on the tape.
pub fn ccat_loss<T: Scalar>(items: &[LossItem<'_, T>]) -> Result<Var<T>> {
    if items.is_empty() {
        return Err(CcatError::EmptyBatch);
    }
    let mut terms = Vec::with_capacity(items.len());
    for item in items {
        let alpha = mos_weight(item.mos)?;
        let valid = item.valid_mask.iter().filter(|&&m| m).count();
        if valid == 0 {
            return Err(CcatError::EmptyInput(
                "utterance with zero valid frames in loss".into(),
            ));
        }
        if item.frames.shape() != vec![item.valid_mask.len()] {
            return Err(CcatError::Shape(format!(
                "frame scores {:?} vs mask of {}",
                item.frames.shape(),
                item.valid_mask.len()
            )));
        }
        let m = T::from_f64(item.mos);
        let udiff = item.utterance.add_scalar(-m);
        let usq = udiff.mul(&udiff)?;
        let fdiff = item.frames.add_scalar(-m);
        let fsq = fdiff.mul(&fdiff)?;
        let fsum = fsq.masked_sum(item.valid_mask)?;
        let weighted = fsum.mul_scalar(T::from_f64(alpha / valid as f64));
        terms.push(usq.add(&weighted)?);
    }
    Ok(sum_scalars(&terms)?.mul_scalar(T::from_f64(1.0 / items.len() as f64)))
}

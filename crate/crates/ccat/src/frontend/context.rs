//! Context-aware frames: each spectrogram frame concatenated with its n past
//! and n future neighbors along a third axis, zero-padded at the edges.

use super::spectrogram::LogSpectrogram;
use crate::nncore::{Scalar, Tensor};

/// T x F x C feature tensor plus a per-frame validity mask. Frames appended
/// by batch padding carry `valid_mask = false` and all-zero data.
#[derive(Clone, Debug)]
pub struct ContextTensor<T> {
    pub data: Tensor<T>,
    pub valid_mask: Vec<bool>,
}

impl<T: Scalar> ContextTensor<T> {
    pub fn num_frames(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn feature_width(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn context_size(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn valid_frames(&self) -> usize {
        self.valid_mask.iter().filter(|&&m| m).count()
    }

    /// Append `extra` all-zero frames marked invalid. Model outputs for valid
    /// frames must not change.
    pub fn with_padding(&self, extra: usize) -> ContextTensor<T> {
        let (t, f, c) = (self.num_frames(), self.feature_width(), self.context_size());
        let mut data = self.data.data().to_vec();
        data.extend(std::iter::repeat(T::zero()).take(extra * f * c));
        let mut mask = self.valid_mask.clone();
        mask.extend(std::iter::repeat(false).take(extra));
        ContextTensor {
            data: Tensor::from_vec(&[t + extra, f, c], data),
            valid_mask: mask,
        }
    }
}

/// Stack context windows: `data[t, f, j] = spec[t + j - n, f]` when the frame
/// index is in range, else zero. Channel order runs past -> current -> future,
/// so channel `n` is the frame itself.
pub fn make_context<T: Scalar>(spec: &LogSpectrogram<T>, n: usize) -> ContextTensor<T> {
    let (t_len, f_len) = (spec.num_frames(), spec.num_bins());
    let c = 2 * n + 1;
    let src = spec.frames().data();
    let mut data = vec![T::zero(); t_len * f_len * c];
    for t in 0..t_len {
        for j in 0..c {
            let ti = t as isize + j as isize - n as isize;
            if ti < 0 || ti >= t_len as isize {
                continue;
            }
            let ti = ti as usize;
            for f in 0..f_len {
                data[(t * f_len + f) * c + j] = src[ti * f_len + f];
            }
        }
    }
    ContextTensor {
        data: Tensor::from_vec(&[t_len, f_len, c], data),
        valid_mask: vec![true; t_len],
    }
}

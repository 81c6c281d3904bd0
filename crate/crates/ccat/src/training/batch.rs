//! Variable-length batching: utterances are bucketed by frame count (width
//! 100) to limit padding, shuffled within buckets with a per-epoch seed, and
//! zero-padded to the longest member of each batch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::frontend::ContextTensor;
use crate::nncore::{Scalar, Tensor};

const BUCKET_WIDTH: usize = 100;

/// Deterministic batch composition: index groups over the given frame counts.
pub fn make_batches(frame_counts: &[usize], batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let mut buckets: Vec<(usize, Vec<usize>)> = Vec::new();
    let mut order: Vec<usize> = (0..frame_counts.len()).collect();
    order.sort_by_key(|&i| (frame_counts[i] / BUCKET_WIDTH, i));
    for &i in &order {
        let key = frame_counts[i] / BUCKET_WIDTH;
        match buckets.last_mut() {
            Some((k, items)) if *k == key => items.push(i),
            _ => buckets.push((key, vec![i])),
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flat = Vec::with_capacity(frame_counts.len());
    for (_, mut items) in buckets {
        // Fisher-Yates within the bucket
        for i in (1..items.len()).rev() {
            let j = rng.gen_range(0..=i);
            items.swap(i, j);
        }
        flat.extend(items);
    }
    flat.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// One zero-padded batch.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub indices: Vec<usize>,
    /// `[B, T_max, F, C]`, padded frames all zero.
    pub features: Tensor<T>,
    /// Per utterance, length `T_max`; padding frames are false.
    pub masks: Vec<Vec<bool>>,
    pub labels: Vec<f64>,
    pub t_max: usize,
}

impl<T: Scalar> Batch<T> {
    /// Rebuild the padded per-utterance context tensor for member `i`.
    pub fn item_context(&self, i: usize) -> ContextTensor<T> {
        let shape = self.features.shape();
        let (t, f, c) = (shape[1], shape[2], shape[3]);
        let per = t * f * c;
        ContextTensor {
            data: Tensor::from_vec(&[t, f, c], self.features.data()[i * per..(i + 1) * per].to_vec()),
            valid_mask: self.masks[i].clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Pad the selected utterances to the longest member.
pub fn pad_batch<T: Scalar>(
    items: &[(&ContextTensor<T>, f64)],
    indices: &[usize],
) -> Batch<T> {
    assert!(!items.is_empty(), "pad_batch of nothing");
    let f = items[0].0.feature_width();
    let c = items[0].0.context_size();
    let t_max = items.iter().map(|(ct, _)| ct.num_frames()).max().unwrap();
    let per = t_max * f * c;
    let mut data = vec![T::zero(); items.len() * per];
    let mut masks = Vec::with_capacity(items.len());
    let mut labels = Vec::with_capacity(items.len());
    for (i, (ct, label)) in items.iter().enumerate() {
        assert_eq!(ct.feature_width(), f, "mixed feature widths in one batch");
        assert_eq!(ct.context_size(), c, "mixed context sizes in one batch");
        let t = ct.num_frames();
        data[i * per..i * per + t * f * c].copy_from_slice(ct.data.data());
        let mut mask = ct.valid_mask.clone();
        mask.resize(t_max, false);
        masks.push(mask);
        labels.push(*label);
    }
    Batch {
        indices: indices.to_vec(),
        features: Tensor::from_vec(&[items.len(), t_max, f, c], data),
        masks,
        labels,
        t_max,
    }
}

//! Network layers built on the tape: bias-free 2-D convolution, average
//! pooling, dense layers, masked multi-head self-attention and layer norm.

use super::tape::{concat_cols, Var};
use super::tensor::{Scalar, Tensor};
use crate::error::{CcatError, Result};

/// Bias-free 2-D cross-correlation with SAME zero-padding and stride 1.
///
/// `x` is `[N, H, W, Cin]`, `kernel` is `[kh, kw, Cin, Cout]` with odd
/// `kh`/`kw`; the output keeps the spatial size. All-zero inputs map to
/// all-zero outputs, which is what lets padded frames stay exactly zero.
pub fn conv2d_nobias<T: Scalar>(x: &Var<T>, kernel: &Var<T>) -> Result<Var<T>> {
    let xv = x.value();
    let kv = kernel.value();
    if xv.ndim() != 4 || kv.ndim() != 4 {
        return Err(CcatError::Shape(format!(
            "conv2d on {:?} with kernel {:?}",
            xv.shape(),
            kv.shape()
        )));
    }
    let (n, h, w, cin) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
    let (kh, kw, kcin, cout) = (kv.shape()[0], kv.shape()[1], kv.shape()[2], kv.shape()[3]);
    if kcin != cin {
        return Err(CcatError::Shape(format!(
            "conv2d kernel expects {} input channels, got {}",
            kcin, cin
        )));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(CcatError::Shape(format!(
            "conv2d kernel dims must be odd, got {}x{}",
            kh, kw
        )));
    }
    let (ph, pw) = (kh / 2, kw / 2);
    let xd = xv.data().to_vec();
    let kd = kv.data().to_vec();
    let mut out = vec![T::zero(); n * h * w * cout];
    {
        let xs = &xd;
        let ks = &kd;
        for b in 0..n {
            for i in 0..h {
                for di in 0..kh {
                    let xi = (i + di) as isize - ph as isize;
                    if xi < 0 || xi >= h as isize {
                        continue;
                    }
                    let xi = xi as usize;
                    for j in 0..w {
                        let orow = &mut out[((b * h + i) * w + j) * cout..][..cout];
                        for dj in 0..kw {
                            let xj = (j + dj) as isize - pw as isize;
                            if xj < 0 || xj >= w as isize {
                                continue;
                            }
                            let xj = xj as usize;
                            let xrow = &xs[((b * h + xi) * w + xj) * cin..][..cin];
                            let kbase = (di * kw + dj) * cin;
                            for (ci, &xval) in xrow.iter().enumerate() {
                                if xval.is_zero() {
                                    continue;
                                }
                                let krow = &ks[(kbase + ci) * cout..][..cout];
                                for (o, &kval) in orow.iter_mut().zip(krow) {
                                    *o = *o + xval * kval;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let (ix, ik) = (var_idx(x), var_idx(kernel));
    let (nx, nk) = (var_needs(x), var_needs(kernel));
    Ok(push_on(
        x,
        Tensor::from_vec(&[n, h, w, cout], out),
        nx || nk,
        Box::new(move |go: &[T], grads: &mut [Vec<T>]| {
            for b in 0..n {
                for i in 0..h {
                    for di in 0..kh {
                        let xi = (i + di) as isize - ph as isize;
                        if xi < 0 || xi >= h as isize {
                            continue;
                        }
                        let xi = xi as usize;
                        for j in 0..w {
                            let grow = &go[((b * h + i) * w + j) * cout..][..cout];
                            for dj in 0..kw {
                                let xj = (j + dj) as isize - pw as isize;
                                if xj < 0 || xj >= w as isize {
                                    continue;
                                }
                                let xj = xj as usize;
                                let xoff = ((b * h + xi) * w + xj) * cin;
                                let kbase = (di * kw + dj) * cin;
                                for ci in 0..cin {
                                    let krow = &kd[(kbase + ci) * cout..][..cout];
                                    if nx {
                                        let mut acc = T::zero();
                                        for (&g, &kval) in grow.iter().zip(krow) {
                                            acc = acc + g * kval;
                                        }
                                        grads[ix][xoff + ci] = grads[ix][xoff + ci] + acc;
                                    }
                                    if nk {
                                        let xval = xd[xoff + ci];
                                        if !xval.is_zero() {
                                            let kg = &mut grads[ik][(kbase + ci) * cout..][..cout];
                                            for (kgv, &g) in kg.iter_mut().zip(grow) {
                                                *kgv = *kgv + xval * g;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }),
    ))
}

/// Non-overlapping 2x2 average pooling with floor semantics.
///
/// A trailing odd row/column is dropped; a dimension already of size 1 passes
/// through unchanged (mean over the single element). Errors when both spatial
/// dimensions are below the pool size, because no output element would cover
/// anything.
pub fn avgpool2d<T: Scalar>(x: &Var<T>) -> Result<Var<T>> {
    let xv = x.value();
    if xv.ndim() != 4 {
        return Err(CcatError::Shape(format!("avgpool2d on {:?}", xv.shape())));
    }
    let (n, h, w, c) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
    if h < 2 && w < 2 {
        return Err(CcatError::Shape(format!(
            "avgpool2d on {}x{} spatial input would produce an empty output",
            h, w
        )));
    }
    let oh = pooled_dim(h);
    let ow = pooled_dim(w);
    let (sh, sw) = (if h >= 2 { 2 } else { 1 }, if w >= 2 { 2 } else { 1 });
    let norm = T::from_f64(1.0 / (sh * sw) as f64);
    let xd = xv.data().to_vec();
    let mut out = vec![T::zero(); n * oh * ow * c];
    for b in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                for di in 0..sh {
                    for dj in 0..sw {
                        let src = ((b * h + i * sh + di) * w + j * sw + dj) * c;
                        let dst = ((b * oh + i) * ow + j) * c;
                        for ch in 0..c {
                            out[dst + ch] = out[dst + ch] + xd[src + ch] * norm;
                        }
                    }
                }
            }
        }
    }
    let ix = var_idx(x);
    Ok(push_on(
        x,
        Tensor::from_vec(&[n, oh, ow, c], out),
        var_needs(x),
        Box::new(move |go: &[T], grads: &mut [Vec<T>]| {
            for b in 0..n {
                for i in 0..oh {
                    for j in 0..ow {
                        for di in 0..sh {
                            for dj in 0..sw {
                                let src = ((b * h + i * sh + di) * w + j * sw + dj) * c;
                                let dst = ((b * oh + i) * ow + j) * c;
                                for ch in 0..c {
                                    grads[ix][src + ch] = grads[ix][src + ch] + go[dst + ch] * norm;
                                }
                            }
                        }
                    }
                }
            }
        }),
    ))
}

/// Output size of one 2x2 pooling stage along a single dimension.
pub fn pooled_dim(d: usize) -> usize {
    if d >= 2 {
        d / 2
    } else {
        1
    }
}

/// Affine map `x · W + b` for `x: [N, Din]`, `W: [Din, Dout]`, `b: [Dout]`.
pub fn dense<T: Scalar>(x: &Var<T>, weight: &Var<T>, bias: &Var<T>) -> Result<Var<T>> {
    x.matmul(weight)?.add_row_bias(bias)
}

/// Per-row normalization to zero mean and unit variance, then an affine map.
pub fn layer_norm<T: Scalar>(x: &Var<T>, gain: &Var<T>, bias: &Var<T>) -> Result<Var<T>> {
    const EPS: f64 = 1e-5;
    let xv = x.value();
    let gv = gain.value();
    let bv = bias.value();
    if xv.ndim() != 2 || gv.ndim() != 1 || bv.ndim() != 1 {
        return Err(CcatError::Shape("layer_norm expects [T,D], [D], [D]".into()));
    }
    let (n, d) = (xv.shape()[0], xv.shape()[1]);
    if gv.shape()[0] != d || bv.shape()[0] != d {
        return Err(CcatError::Shape(format!(
            "layer_norm gain/bias of {} on width {}",
            gv.shape()[0],
            d
        )));
    }
    let xd = xv.data();
    let gd = gv.data().to_vec();
    let mut out = vec![T::zero(); n * d];
    let mut xhat = vec![T::zero(); n * d];
    let mut inv_std = vec![T::zero(); n];
    let dn = T::from_f64(1.0 / d as f64);
    for i in 0..n {
        let row = &xd[i * d..(i + 1) * d];
        let mut mean = T::zero();
        for &v in row {
            mean = mean + v;
        }
        mean = mean * dn;
        let mut var = T::zero();
        for &v in row {
            let c = v - mean;
            var = var + c * c;
        }
        var = var * dn;
        let inv = T::one() / (var + T::from_f64(EPS)).sqrt();
        inv_std[i] = inv;
        for j in 0..d {
            let h = (row[j] - mean) * inv;
            xhat[i * d + j] = h;
            out[i * d + j] = gd[j] * h + bv.data()[j];
        }
    }
    let (ix, ig, ib) = (var_idx(x), var_idx(gain), var_idx(bias));
    let needs = var_needs(x) || var_needs(gain) || var_needs(bias);
    Ok(push_on(
        x,
        Tensor::from_vec(&[n, d], out),
        needs,
        Box::new(move |go: &[T], grads: &mut [Vec<T>]| {
            for i in 0..n {
                let g = &go[i * d..(i + 1) * d];
                let h = &xhat[i * d..(i + 1) * d];
                let mut m1 = T::zero();
                let mut m2 = T::zero();
                for j in 0..d {
                    let dh = g[j] * gd[j];
                    m1 = m1 + dh;
                    m2 = m2 + dh * h[j];
                    grads[ig][j] = grads[ig][j] + g[j] * h[j];
                    grads[ib][j] = grads[ib][j] + g[j];
                }
                m1 = m1 * dn;
                m2 = m2 * dn;
                for j in 0..d {
                    let dh = g[j] * gd[j];
                    grads[ix][i * d + j] =
                        grads[ix][i * d + j] + inv_std[i] * (dh - m1 - h[j] * m2);
                }
            }
        }),
    ))
}

/// Projection weights of one attention layer.
pub struct AttentionWeights<T> {
    pub wq: Var<T>,
    pub wk: Var<T>,
    pub wv: Var<T>,
    pub wo: Var<T>,
}

/// Masked multi-head scaled dot-product self-attention over `x: [T, D]`.
///
/// Keys at `key_mask == false` positions get exactly zero attention weight.
/// The residual connection is the caller's job.
pub fn multi_head_self_attention<T: Scalar>(
    x: &Var<T>,
    heads: usize,
    key_mask: &[bool],
    weights: &AttentionWeights<T>,
) -> Result<Var<T>> {
    let (out, _) = mhsa_with_probs(x, heads, key_mask, weights)?;
    Ok(out)
}

/// Attention that also returns the per-head probability nodes, for
/// inspection in tests and invariant checks.
pub fn mhsa_with_probs<T: Scalar>(
    x: &Var<T>,
    heads: usize,
    key_mask: &[bool],
    weights: &AttentionWeights<T>,
) -> Result<(Var<T>, Vec<Var<T>>)> {
    let shape = x.shape();
    if shape.len() != 2 {
        return Err(CcatError::Shape(format!("attention input {:?}", shape)));
    }
    let (t, d) = (shape[0], shape[1]);
    if heads == 0 || d % heads != 0 {
        return Err(CcatError::Config(format!(
            "model width {} not divisible by {} heads",
            d, heads
        )));
    }
    if key_mask.len() != t {
        return Err(CcatError::Shape(format!(
            "key mask of {} for {} frames",
            key_mask.len(),
            t
        )));
    }
    if !key_mask.iter().any(|&m| m) {
        return Err(CcatError::AllMasked);
    }
    let dk = d / heads;
    let scale = T::from_f64(1.0 / (dk as f64).sqrt());
    let q = x.matmul(&weights.wq)?;
    let k = x.matmul(&weights.wk)?;
    let v = x.matmul(&weights.wv)?;
    let mut outputs = Vec::with_capacity(heads);
    let mut probs = Vec::with_capacity(heads);
    for head in 0..heads {
        let (lo, hi) = (head * dk, (head + 1) * dk);
        let qh = q.slice_cols(lo, hi)?;
        let kh = k.slice_cols(lo, hi)?;
        let vh = v.slice_cols(lo, hi)?;
        let logits = qh.matmul(&kh.transpose()?)?.mul_scalar(scale);
        let att = logits.softmax_rows_masked(key_mask)?;
        outputs.push(att.matmul(&vh)?);
        probs.push(att);
    }
    let merged = concat_cols(&outputs)?;
    Ok((merged.matmul(&weights.wo)?, probs))
}

// Var internals needed to push fused nodes from this module.
fn var_idx<T: Scalar>(v: &Var<T>) -> usize {
    v.raw_index()
}

fn var_needs<T: Scalar>(v: &Var<T>) -> bool {
    v.raw_needs_grad()
}

fn push_on<T: Scalar>(
    anchor: &Var<T>,
    value: Tensor<T>,
    needs: bool,
    back: Box<dyn Fn(&[T], &mut [Vec<T>])>,
) -> Var<T> {
    anchor.raw_push(value, needs, back)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::tape::Tape;

    fn leaf(tape: &Tape<f64>, shape: &[usize], data: &[f64]) -> Var<f64> {
        tape.leaf(Tensor::from_vec(shape, data.to_vec()), false)
    }

    #[test]
    fn conv_zero_input_stays_zero() {
        let tape = Tape::new();
        let x = leaf(&tape, &[1, 4, 4, 1], &[0.0; 16]);
        let k = leaf(&tape, &[3, 3, 1, 2], &[0.7; 18]);
        let y = conv2d_nobias(&x, &k).unwrap();
        assert!(y.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_identity_kernel_preserves_input() {
        let tape = Tape::new();
        let data: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let x = leaf(&tape, &[1, 4, 4, 1], &data);
        let mut kd = vec![0.0; 9];
        kd[4] = 1.0; // delta at the center
        let k = leaf(&tape, &[3, 3, 1, 1], &kd);
        let y = conv2d_nobias(&x, &k).unwrap();
        assert_eq!(y.value().data(), data.as_slice());
    }

    #[test]
    fn conv_box_kernel_sums_neighborhood() {
        // 2x2 input summed by an all-ones 3x3 kernel: the value at (0,0)
        // covers the whole input, 1+2+3+4 = 10.
        let tape = Tape::new();
        let x = leaf(&tape, &[1, 2, 2, 1], &[1.0, 2.0, 3.0, 4.0]);
        let k = leaf(&tape, &[3, 3, 1, 1], &[1.0; 9]);
        let y = conv2d_nobias(&x, &k).unwrap();
        assert!(y.value().data().contains(&10.0));
    }

    #[test]
    fn conv_is_linear() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ys: Vec<f64> = (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ks: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (alpha, beta) = (0.37, -1.21);
        let mixed: Vec<f64> = xs
            .iter()
            .zip(&ys)
            .map(|(&a, &b)| alpha * a + beta * b)
            .collect();
        let run = |data: &[f64]| {
            let tape = Tape::new();
            let x = leaf(&tape, &[1, 3, 6, 1], data);
            let k = leaf(&tape, &[3, 3, 1, 1], &ks);
            conv2d_nobias(&x, &k).unwrap().value()
        };
        let lhs = run(&mixed);
        let fa = run(&xs);
        let fb = run(&ys);
        for i in 0..lhs.len() {
            let want = alpha * fa.data()[i] + beta * fb.data()[i];
            assert!((lhs.data()[i] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn avgpool_means_quads() {
        let tape = Tape::new();
        let x = leaf(&tape, &[1, 2, 2, 1], &[1.0, 2.0, 3.0, 4.0]);
        let y = avgpool2d(&x).unwrap();
        assert_eq!(y.value().shape(), &[1, 1, 1, 1]);
        assert_eq!(y.value().data(), &[2.5]);
    }

    #[test]
    fn avgpool_floor_chain_matches_network_bookkeeping() {
        let mut d = 257;
        let mut c = 11;
        for _ in 0..3 {
            d = pooled_dim(d);
            c = pooled_dim(c);
        }
        assert_eq!(d, 32);
        assert_eq!(c, 1);
        assert_eq!(pooled_dim(pooled_dim(pooled_dim(48))), 6);
    }

    #[test]
    fn avgpool_drops_trailing_odd_and_clamps_unit_dims() {
        let tape = Tape::new();
        let x = leaf(&tape, &[1, 3, 1, 1], &[1.0, 5.0, 9.0]);
        let y = avgpool2d(&x).unwrap();
        // rows: (1+5)/2 with the trailing 9 dropped; width 1 passes through
        assert_eq!(y.value().shape(), &[1, 1, 1, 1]);
        assert_eq!(y.value().data(), &[3.0]);
    }

    #[test]
    fn avgpool_rejects_degenerate_input() {
        let tape = Tape::new();
        let x = leaf(&tape, &[1, 1, 1, 3], &[1.0, 2.0, 3.0]);
        assert!(matches!(avgpool2d(&x), Err(CcatError::Shape(_))));
    }

    #[test]
    fn avgpool_mean_preserved_over_covered_region() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..(4 * 6)).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let tape = Tape::new();
        let x = leaf(&tape, &[1, 4, 6, 1], &data);
        let y = avgpool2d(&x).unwrap();
        let out_mean: f64 = y.value().data().iter().sum::<f64>() / y.value().len() as f64;
        let covered: f64 = data.iter().sum::<f64>() / data.len() as f64;
        assert!((out_mean - covered).abs() < 1e-9);
    }

    #[test]
    fn dense_identity_passthrough() {
        let tape = Tape::new();
        let x = leaf(&tape, &[1, 2], &[1.0, 2.0]);
        let w = leaf(&tape, &[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let b = leaf(&tape, &[2], &[0.0, 0.0]);
        let y = dense(&x, &w, &b).unwrap();
        assert_eq!(y.value().data(), &[1.0, 2.0]);
    }

    #[test]
    fn dense_affine_example() {
        let tape = Tape::new();
        let x = leaf(&tape, &[1, 2], &[1.0, 2.0]);
        let w = leaf(&tape, &[2, 1], &[1.0, 1.0]);
        let b = leaf(&tape, &[1], &[0.5]);
        let y = dense(&x, &w, &b).unwrap();
        assert_eq!(y.value().data(), &[3.5]);
    }

    #[test]
    fn dense_bias_grad_is_ones_under_sum() {
        let tape = Tape::new();
        let x = leaf(&tape, &[2, 2], &[1.0, -2.0, 0.5, 3.0]);
        let w = leaf(&tape, &[2, 2], &[0.3, -0.7, 1.1, 0.2]);
        let b = tape.leaf(Tensor::from_vec(&[2], vec![0.1, -0.4]), true);
        let y = dense(&x, &w, &b).unwrap();
        let s = y.reshape(&[4]).unwrap().masked_sum(&[true; 4]).unwrap();
        s.backward().unwrap();
        assert_eq!(b.grad().data(), &[2.0, 2.0]);
    }

    #[test]
    fn layer_norm_constant_row_returns_bias() {
        let tape = Tape::new();
        let x = leaf(&tape, &[1, 4], &[3.0, 3.0, 3.0, 3.0]);
        let g = leaf(&tape, &[4], &[1.0, 1.0, 1.0, 1.0]);
        let b = leaf(&tape, &[4], &[0.3, -0.1, 0.0, 2.0]);
        let y = layer_norm(&x, &g, &b).unwrap();
        for (got, want) in y.value().data().iter().zip(b.value().data()) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_two_point_row() {
        let tape = Tape::new();
        let x = leaf(&tape, &[1, 2], &[1.0, -1.0]);
        let g = leaf(&tape, &[2], &[1.0, 1.0]);
        let b = leaf(&tape, &[2], &[0.0, 0.0]);
        let y = layer_norm(&x, &g, &b).unwrap();
        assert!((y.value().data()[0] - 1.0).abs() < 1e-4);
        assert!((y.value().data()[1] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn layer_norm_row_mean_equals_bias_mean() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let d = 16;
        let xs: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let bs: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tape = Tape::new();
        let x = leaf(&tape, &[1, d], &xs);
        let g = leaf(&tape, &[d], &vec![1.0; d]);
        let b = leaf(&tape, &[d], &bs);
        let y = layer_norm(&x, &g, &b).unwrap();
        let row_mean: f64 = y.value().data().iter().sum::<f64>() / d as f64;
        let bias_mean: f64 = bs.iter().sum::<f64>() / d as f64;
        assert!((row_mean - bias_mean).abs() < 1e-6);
    }

    fn toy_weights(tape: &Tape<f64>, d: usize, seed: u64) -> AttentionWeights<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut mk = || {
            let data: Vec<f64> = (0..d * d).map(|_| rng.gen_range(-0.5..0.5)).collect();
            tape.leaf(Tensor::from_vec(&[d, d], data), false)
        };
        AttentionWeights {
            wq: mk(),
            wk: mk(),
            wv: mk(),
            wo: mk(),
        }
    }

    #[test]
    fn attention_single_frame_attends_to_itself() {
        let tape = Tape::new();
        let d = 4;
        let x = leaf(&tape, &[1, d], &[0.3, -1.0, 0.2, 0.9]);
        let w = toy_weights(&tape, d, 1);
        let (out, probs) = mhsa_with_probs(&x, 2, &[true], &w).unwrap();
        for p in &probs {
            assert_eq!(p.value().data(), &[1.0]);
        }
        // out must equal wo(v_proj(x))
        let v = x.matmul(&w.wv).unwrap().matmul(&w.wo).unwrap();
        assert!(out.value().max_abs_diff(&v.value()) < 1e-12);
    }

    #[test]
    fn attention_identical_rows_give_uniform_weights() {
        let tape = Tape::new();
        let d = 4;
        let t = 5;
        let row = [0.4, 0.1, -0.7, 1.2];
        let data: Vec<f64> = row.iter().copied().cycle().take(t * d).collect();
        let x = leaf(&tape, &[t, d], &data);
        let w = toy_weights(&tape, d, 2);
        let (_, probs) = mhsa_with_probs(&x, 2, &[true; 5], &w).unwrap();
        for p in &probs {
            for v in p.value().data() {
                assert!((v - 1.0 / t as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn attention_masked_key_gets_zero_weight() {
        let tape = Tape::new();
        let d = 4;
        let x = leaf(&tape, &[2, d], &[0.3, -1.0, 0.2, 0.9, 1.4, 0.0, -0.2, 0.5]);
        let w = toy_weights(&tape, d, 3);
        let (_, probs) = mhsa_with_probs(&x, 2, &[true, false], &w).unwrap();
        for p in &probs {
            let v = p.value();
            assert_eq!(v.at(&[0, 1]), 0.0);
            assert_eq!(v.at(&[1, 1]), 0.0);
        }
    }

    #[test]
    fn attention_rejects_bad_configs() {
        let tape = Tape::new();
        let d = 4;
        let x = leaf(&tape, &[2, d], &[0.0; 8]);
        let w = toy_weights(&tape, d, 4);
        assert!(matches!(
            multi_head_self_attention(&x, 3, &[true, true], &w),
            Err(CcatError::Config(_))
        ));
        assert!(matches!(
            multi_head_self_attention(&x, 2, &[false, false], &w),
            Err(CcatError::AllMasked)
        ));
    }
}

//! Tape-based reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records one forward computation; [`Var`] handles index nodes on
//! it. `backward` walks the recorded nodes in reverse, propagating gradients
//! through a scratch buffer and accumulating them (`+=`) into each node, so
//! calling it twice doubles every gradient. A fresh forward pass uses a fresh
//! tape.
//!
//! Masked attention positions receive an additive `-1e30` logit so their
//! softmax weight underflows to exactly zero while gradients stay exact.

use std::cell::RefCell;
use std::rc::Rc;

use rand::Rng;

use super::tensor::{Scalar, Tensor};
use crate::error::{CcatError, Result};

const MASK_LOGIT: f64 = -1e30;

type BackFn<T> = Box<dyn Fn(&[T], &mut [Vec<T>])>;

struct Node<T> {
    value: Tensor<T>,
    grad: Vec<T>,
    needs_grad: bool,
    back: Option<BackFn<T>>,
    /// Distance of the nearest pre-activation to a ReLU/clip kink, when the
    /// node has one. Used by gradient checking to pick kink-free inputs.
    kink_margin: Option<f64>,
}

struct TapeInner<T> {
    nodes: Vec<Node<T>>,
}

/// Recording tape. Cheap to clone (shared handle); single-threaded.
pub struct Tape<T> {
    inner: Rc<RefCell<TapeInner<T>>>,
}

impl<T> Clone for Tape<T> {
    fn clone(&self) -> Self {
        Tape {
            inner: Rc::clone(&self.inner),
        }
    }
}

/// Handle to one node of a [`Tape`].
pub struct Var<T> {
    tape: Tape<T>,
    idx: usize,
}

impl<T> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var {
            tape: self.tape.clone(),
            idx: self.idx,
        }
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner { nodes: Vec::new() })),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Enter a value onto the tape. Gradients are tracked through it when
    /// `requires_grad` is set.
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<T> {
        self.push(value, requires_grad, None, None)
    }

    /// Constant input; no gradient flows to it.
    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        self.leaf(value, false)
    }

    fn push(
        &self,
        value: Tensor<T>,
        needs_grad: bool,
        back: Option<BackFn<T>>,
        kink_margin: Option<f64>,
    ) -> Var<T> {
        let mut inner = self.inner.borrow_mut();
        let grad = vec![T::zero(); value.len()];
        inner.nodes.push(Node {
            value,
            grad,
            needs_grad,
            back,
            kink_margin,
        });
        Var {
            tape: self.clone(),
            idx: inner.nodes.len() - 1,
        }
    }

    /// Smallest distance of any ReLU/clip pre-activation to its kink over the
    /// whole recorded forward pass, if any such op was recorded.
    pub fn kink_margin(&self) -> Option<f64> {
        self.inner
            .borrow()
            .nodes
            .iter()
            .filter_map(|n| n.kink_margin)
            .fold(None, |acc, m| Some(acc.map_or(m, |a: f64| a.min(m))))
    }
}

impl<T: Scalar> TapeInner<T> {
    fn backward_from(&mut self, out: usize) {
        let mut scratch: Vec<Vec<T>> = self
            .nodes
            .iter()
            .map(|n| vec![T::zero(); n.value.len()])
            .collect();
        scratch[out][0] = T::one();
        for idx in (0..=out).rev() {
            let node = &self.nodes[idx];
            if node.back.is_none() || !node.needs_grad {
                continue;
            }
            if scratch[idx].iter().all(|g| g.is_zero()) {
                continue;
            }
            // Parents always precede their output on the tape.
            let (parents, rest) = scratch.split_at_mut(idx);
            if let Some(back) = &self.nodes[idx].back {
                back(&rest[0], parents);
            }
        }
        for (node, s) in self.nodes.iter_mut().zip(scratch) {
            for (g, d) in node.grad.iter_mut().zip(s) {
                *g = *g + d;
            }
        }
    }
}

impl<T: Scalar> Var<T> {
    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.idx].value.shape().to_vec()
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.inner.borrow().nodes[self.idx].value.clone()
    }

    /// Scalar value of a single-element node.
    pub fn item(&self) -> T {
        let inner = self.tape.inner.borrow();
        let v = &inner.nodes[self.idx].value;
        assert_eq!(v.len(), 1, "item() on non-scalar");
        v.data()[0]
    }

    /// Accumulated gradient, shaped like the value.
    pub fn grad(&self) -> Tensor<T> {
        let inner = self.tape.inner.borrow();
        let node = &inner.nodes[self.idx];
        Tensor::from_vec(node.value.shape(), node.grad.clone())
    }

    /// Reverse pass from this scalar. Gradients accumulate into every node.
    pub fn backward(&self) -> Result<()> {
        {
            let inner = self.tape.inner.borrow();
            if inner.nodes[self.idx].value.len() != 1 {
                return Err(CcatError::Shape(format!(
                    "backward requires a scalar, got shape {:?}",
                    inner.nodes[self.idx].value.shape()
                )));
            }
        }
        self.tape.inner.borrow_mut().backward_from(self.idx);
        Ok(())
    }

    fn needs_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.idx].needs_grad
    }

    pub(crate) fn raw_index(&self) -> usize {
        self.idx
    }

    /// The tape this var lives on.
    pub fn tape_handle(&self) -> Tape<T> {
        self.tape.clone()
    }

    pub(crate) fn raw_needs_grad(&self) -> bool {
        self.needs_grad()
    }

    /// Record a fused node whose backward closure was built by the caller.
    pub(crate) fn raw_push(
        &self,
        value: Tensor<T>,
        needs: bool,
        back: Box<dyn Fn(&[T], &mut [Vec<T>])>,
    ) -> Var<T> {
        self.tape.push(value, needs, Some(back), None)
    }

    fn same_tape(&self, other: &Var<T>) -> bool {
        Rc::ptr_eq(&self.tape.inner, &other.tape.inner)
    }

    fn binary_elementwise(
        &self,
        other: &Var<T>,
        op: impl Fn(T, T) -> T,
        back: impl Fn(T, T, T) -> (T, T) + 'static,
    ) -> Result<Var<T>> {
        assert!(self.same_tape(other), "vars from different tapes");
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(CcatError::Shape(format!(
                "elementwise op on {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let out: Vec<T> = a.data().iter().zip(b.data()).map(|(&x, &y)| op(x, y)).collect();
        let (ia, ib) = (self.idx, other.idx);
        let (av, bv) = (a.data().to_vec(), b.data().to_vec());
        let needs = self.needs_grad() || other.needs_grad();
        let value = Tensor::from_vec(a.shape(), out);
        Ok(self.tape.push(
            value,
            needs,
            Some(Box::new(move |go, grads| {
                for (i, &g) in go.iter().enumerate() {
                    let (da, db) = back(av[i], bv[i], g);
                    grads[ia][i] = grads[ia][i] + da;
                    grads[ib][i] = grads[ib][i] + db;
                }
            })),
            None,
        ))
    }

    pub fn add(&self, other: &Var<T>) -> Result<Var<T>> {
        self.binary_elementwise(other, |x, y| x + y, |_, _, g| (g, g))
    }

    pub fn sub(&self, other: &Var<T>) -> Result<Var<T>> {
        self.binary_elementwise(other, |x, y| x - y, |_, _, g| (g, -g))
    }

    pub fn mul(&self, other: &Var<T>) -> Result<Var<T>> {
        self.binary_elementwise(other, |x, y| x * y, |x, y, g| (g * y, g * x))
    }

    pub fn add_scalar(&self, c: T) -> Var<T> {
        let a = self.value();
        let out: Vec<T> = a.data().iter().map(|&x| x + c).collect();
        let ia = self.idx;
        self.tape.push(
            Tensor::from_vec(a.shape(), out),
            self.needs_grad(),
            Some(Box::new(move |go, grads| {
                for (i, &g) in go.iter().enumerate() {
                    grads[ia][i] = grads[ia][i] + g;
                }
            })),
            None,
        )
    }

    pub fn mul_scalar(&self, c: T) -> Var<T> {
        let a = self.value();
        let out: Vec<T> = a.data().iter().map(|&x| x * c).collect();
        let ia = self.idx;
        self.tape.push(
            Tensor::from_vec(a.shape(), out),
            self.needs_grad(),
            Some(Box::new(move |go, grads| {
                for (i, &g) in go.iter().enumerate() {
                    grads[ia][i] = grads[ia][i] + g * c;
                }
            })),
            None,
        )
    }

    /// Elementwise max(0, x); subgradient 0 at the kink.
    pub fn relu(&self) -> Var<T> {
        let a = self.value();
        let mut margin = f64::INFINITY;
        let mut active = Vec::with_capacity(a.len());
        let out: Vec<T> = a
            .data()
            .iter()
            .map(|&x| {
                margin = margin.min(x.as_f64().abs());
                let on = x > T::zero();
                active.push(on);
                if on {
                    x
                } else {
                    T::zero()
                }
            })
            .collect();
        let ia = self.idx;
        self.tape.push(
            Tensor::from_vec(a.shape(), out),
            self.needs_grad(),
            Some(Box::new(move |go, grads| {
                for (i, &g) in go.iter().enumerate() {
                    if active[i] {
                        grads[ia][i] = grads[ia][i] + g;
                    }
                }
            })),
            Some(margin),
        )
    }

    /// Elementwise min(max(0, x), 5): ReLU capped at the MOS upper bound.
    pub fn clipped_relu5(&self) -> Var<T> {
        let five = T::from_f64(5.0);
        let a = self.value();
        let mut margin = f64::INFINITY;
        let mut active = Vec::with_capacity(a.len());
        let out: Vec<T> = a
            .data()
            .iter()
            .map(|&x| {
                let xf = x.as_f64();
                margin = margin.min(xf.abs().min((xf - 5.0).abs()));
                let on = x > T::zero() && x < five;
                active.push(on);
                if x <= T::zero() {
                    T::zero()
                } else if x >= five {
                    five
                } else {
                    x
                }
            })
            .collect();
        let ia = self.idx;
        self.tape.push(
            Tensor::from_vec(a.shape(), out),
            self.needs_grad(),
            Some(Box::new(move |go, grads| {
                for (i, &g) in go.iter().enumerate() {
                    if active[i] {
                        grads[ia][i] = grads[ia][i] + g;
                    }
                }
            })),
            Some(margin),
        )
    }

    /// Matrix product of two rank-2 nodes.
    pub fn matmul(&self, other: &Var<T>) -> Result<Var<T>> {
        assert!(self.same_tape(other), "vars from different tapes");
        let a = self.value();
        let b = other.value();
        if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(CcatError::Shape(format!(
                "matmul on {:?} x {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        let ad = a.data();
        let bd = b.data();
        for i in 0..m {
            for p in 0..k {
                let av = ad[i * k + p];
                if av.is_zero() {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o = *o + av * bv;
                }
            }
        }
        let (ia, ib) = (self.idx, other.idx);
        let (na, nb) = (self.needs_grad(), other.needs_grad());
        let av = ad.to_vec();
        let bv = bd.to_vec();
        Ok(self.tape.push(
            Tensor::from_vec(&[m, n], out),
            na || nb,
            Some(Box::new(move |go, grads| {
                if na {
                    // dA = G · Bᵀ
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = T::zero();
                            let grow = &go[i * n..(i + 1) * n];
                            let brow = &bv[p * n..(p + 1) * n];
                            for (&g, &b) in grow.iter().zip(brow) {
                                acc = acc + g * b;
                            }
                            grads[ia][i * k + p] = grads[ia][i * k + p] + acc;
                        }
                    }
                }
                if nb {
                    // dB = Aᵀ · G
                    for p in 0..k {
                        for i in 0..m {
                            let a = av[i * k + p];
                            if a.is_zero() {
                                continue;
                            }
                            let grow = &go[i * n..(i + 1) * n];
                            let brow = &mut grads[ib][p * n..(p + 1) * n];
                            for (dbv, &g) in brow.iter_mut().zip(grow) {
                                *dbv = *dbv + a * g;
                            }
                        }
                    }
                }
            })),
            None,
        ))
    }

    /// Rank-2 transpose.
    pub fn transpose(&self) -> Result<Var<T>> {
        let a = self.value();
        if a.ndim() != 2 {
            return Err(CcatError::Shape(format!("transpose on {:?}", a.shape())));
        }
        let (r, c) = (a.shape()[0], a.shape()[1]);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = a.data()[i * c + j];
            }
        }
        let ia = self.idx;
        Ok(self.tape.push(
            Tensor::from_vec(&[c, r], out),
            self.needs_grad(),
            Some(Box::new(move |go, grads| {
                for j in 0..c {
                    for i in 0..r {
                        grads[ia][i * c + j] = grads[ia][i * c + j] + go[j * r + i];
                    }
                }
            })),
            None,
        ))
    }

    /// Add a bias row vector `[D]` to every row of `[N, D]`.
    pub fn add_row_bias(&self, bias: &Var<T>) -> Result<Var<T>> {
        assert!(self.same_tape(bias), "vars from different tapes");
        let a = self.value();
        let b = bias.value();
        if a.ndim() != 2 || b.ndim() != 1 || a.shape()[1] != b.shape()[0] {
            return Err(CcatError::Shape(format!(
                "row bias {:?} + {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let (n, d) = (a.shape()[0], a.shape()[1]);
        let out: Vec<T> = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + b.data()[i % d])
            .collect();
        let (ia, ib) = (self.idx, bias.idx);
        Ok(self.tape.push(
            Tensor::from_vec(&[n, d], out),
            self.needs_grad() || bias.needs_grad(),
            Some(Box::new(move |go, grads| {
                for (i, &g) in go.iter().enumerate() {
                    grads[ia][i] = grads[ia][i] + g;
                    grads[ib][i % d] = grads[ib][i % d] + g;
                }
            })),
            None,
        ))
    }

    /// Reinterpret the value with a new shape of equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Var<T>> {
        let a = self.value();
        if shape.iter().product::<usize>() != a.len() {
            return Err(CcatError::Shape(format!(
                "reshape {:?} -> {:?}",
                a.shape(),
                shape
            )));
        }
        let ia = self.idx;
        Ok(self.tape.push(
            Tensor::from_vec(shape, a.data().to_vec()),
            self.needs_grad(),
            Some(Box::new(move |go, grads| {
                for (i, &g) in go.iter().enumerate() {
                    grads[ia][i] = grads[ia][i] + g;
                }
            })),
            None,
        ))
    }

    /// Columns `lo..hi` of a rank-2 node.
    pub fn slice_cols(&self, lo: usize, hi: usize) -> Result<Var<T>> {
        let a = self.value();
        if a.ndim() != 2 || hi > a.shape()[1] || lo >= hi {
            return Err(CcatError::Shape(format!(
                "slice_cols {}..{} of {:?}",
                lo,
                hi,
                a.shape()
            )));
        }
        let (n, d) = (a.shape()[0], a.shape()[1]);
        let w = hi - lo;
        let mut out = Vec::with_capacity(n * w);
        for i in 0..n {
            out.extend_from_slice(&a.data()[i * d + lo..i * d + hi]);
        }
        let ia = self.idx;
        Ok(self.tape.push(
            Tensor::from_vec(&[n, w], out),
            self.needs_grad(),
            Some(Box::new(move |go, grads| {
                for i in 0..n {
                    for j in 0..w {
                        grads[ia][i * d + lo + j] = grads[ia][i * d + lo + j] + go[i * w + j];
                    }
                }
            })),
            None,
        ))
    }

    /// Row-wise softmax with masked columns forced to exactly zero weight.
    ///
    /// Masked columns contribute an additive `-1e30` logit before the
    /// max-subtracted softmax; their probability underflows to +0.
    pub fn softmax_rows_masked(&self, key_mask: &[bool]) -> Result<Var<T>> {
        let a = self.value();
        if a.ndim() != 2 || a.shape()[1] != key_mask.len() {
            return Err(CcatError::Shape(format!(
                "softmax mask of {} keys on {:?}",
                key_mask.len(),
                a.shape()
            )));
        }
        if !key_mask.iter().any(|&m| m) {
            return Err(CcatError::AllMasked);
        }
        let (n, d) = (a.shape()[0], a.shape()[1]);
        let bias: Vec<T> = key_mask
            .iter()
            .map(|&m| if m { T::zero() } else { T::from_f64(MASK_LOGIT) })
            .collect();
        let mut out = vec![T::zero(); n * d];
        for i in 0..n {
            let row = &a.data()[i * d..(i + 1) * d];
            let mut mx = T::neg_infinity();
            for (j, &x) in row.iter().enumerate() {
                let v = x + bias[j];
                if v > mx {
                    mx = v;
                }
            }
            let mut sum = T::zero();
            for (j, &x) in row.iter().enumerate() {
                let e = ((x + bias[j]) - mx).exp();
                out[i * d + j] = e;
                sum = sum + e;
            }
            for j in 0..d {
                out[i * d + j] = out[i * d + j] / sum;
            }
        }
        let ia = self.idx;
        let probs = out.clone();
        Ok(self.tape.push(
            Tensor::from_vec(&[n, d], out),
            self.needs_grad(),
            Some(Box::new(move |go, grads| {
                for i in 0..n {
                    let p = &probs[i * d..(i + 1) * d];
                    let g = &go[i * d..(i + 1) * d];
                    let mut dot = T::zero();
                    for (&pj, &gj) in p.iter().zip(g) {
                        dot = dot + pj * gj;
                    }
                    for j in 0..d {
                        grads[ia][i * d + j] = grads[ia][i * d + j] + p[j] * (g[j] - dot);
                    }
                }
            })),
            None,
        ))
    }

    /// Sum of entries at `mask == true` positions of a rank-1 node.
    pub fn masked_sum(&self, mask: &[bool]) -> Result<Var<T>> {
        let a = self.value();
        if a.ndim() != 1 || a.shape()[0] != mask.len() {
            return Err(CcatError::Shape(format!(
                "masked_sum over {} flags on {:?}",
                mask.len(),
                a.shape()
            )));
        }
        let mut sum = T::zero();
        for (&x, &m) in a.data().iter().zip(mask) {
            if m {
                sum = sum + x;
            }
        }
        let ia = self.idx;
        let mask = mask.to_vec();
        Ok(self.tape.push(
            Tensor::scalar(sum),
            self.needs_grad(),
            Some(Box::new(move |go, grads| {
                for (i, &m) in mask.iter().enumerate() {
                    if m {
                        grads[ia][i] = grads[ia][i] + go[0];
                    }
                }
            })),
            None,
        ))
    }

    /// Mean over `mask == true` positions of a rank-1 node.
    pub fn masked_mean(&self, mask: &[bool]) -> Result<Var<T>> {
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(CcatError::EmptyInput("masked_mean with no valid frames".into()));
        }
        let sum = self.masked_sum(mask)?;
        Ok(sum.mul_scalar(T::from_f64(1.0 / count as f64)))
    }

    /// Inverted dropout: scales kept entries by 1/(1-rate) during training,
    /// identity otherwise.
    pub fn dropout<R: Rng>(&self, rate: f64, training: bool, rng: &mut R) -> Var<T> {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0,1)");
        if !training || rate == 0.0 {
            return self.clone();
        }
        let keep = 1.0 - rate;
        let scale = T::from_f64(1.0 / keep);
        let a = self.value();
        let mask: Vec<T> = (0..a.len())
            .map(|_| {
                if rng.gen::<f64>() < keep {
                    scale
                } else {
                    T::zero()
                }
            })
            .collect();
        let out: Vec<T> = a.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let ia = self.idx;
        self.tape.push(
            Tensor::from_vec(a.shape(), out),
            self.needs_grad(),
            Some(Box::new(move |go, grads| {
                for (i, &g) in go.iter().enumerate() {
                    grads[ia][i] = grads[ia][i] + g * mask[i];
                }
            })),
            None,
        )
    }
}

/// Concatenate rank-2 nodes along the column axis.
pub fn concat_cols<T: Scalar>(parts: &[Var<T>]) -> Result<Var<T>> {
    assert!(!parts.is_empty(), "concat_cols of nothing");
    let n = parts[0].shape()[0];
    let widths: Vec<usize> = parts
        .iter()
        .map(|p| {
            let s = p.shape();
            assert_eq!(s.len(), 2, "concat_cols on non-matrix");
            s[1]
        })
        .collect();
    for p in parts {
        if p.shape()[0] != n {
            return Err(CcatError::Shape("concat_cols with mismatched rows".into()));
        }
    }
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(n * total);
    let values: Vec<Tensor<T>> = parts.iter().map(|p| p.value()).collect();
    for i in 0..n {
        for (v, &w) in values.iter().zip(&widths) {
            out.extend_from_slice(&v.data()[i * w..(i + 1) * w]);
        }
    }
    let idxs: Vec<usize> = parts.iter().map(|p| p.idx).collect();
    let needs = parts.iter().any(|p| p.needs_grad());
    let tape = parts[0].tape.clone();
    Ok(tape.push(
        Tensor::from_vec(&[n, total], out),
        needs,
        Some(Box::new(move |go, grads| {
            for i in 0..n {
                let mut off = 0;
                for (&idx, &w) in idxs.iter().zip(&widths) {
                    for j in 0..w {
                        grads[idx][i * w + j] = grads[idx][i * w + j] + go[i * total + off + j];
                    }
                    off += w;
                }
            }
        })),
        None,
    ))
}

/// Sum a list of scalar nodes.
pub fn sum_scalars<T: Scalar>(terms: &[Var<T>]) -> Result<Var<T>> {
    assert!(!terms.is_empty(), "sum of nothing");
    let mut acc = terms[0].clone();
    for t in &terms[1..] {
        acc = acc.add(t)?;
    }
    Ok(acc)
}

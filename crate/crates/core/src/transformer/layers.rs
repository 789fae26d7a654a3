//! Forward and backward passes of the building blocks over packed rows.

use alloc::vec;
use alloc::vec::Vec;

use super::params::{FeedForward, LayerNorm, Linear, MultiHeadAttention};
use super::tensor::{gemm, Scalar, Tensor};
use crate::rng::RngStream;

pub(crate) const NORM_EPS: f64 = 1e-5;

impl<T: Scalar> Linear<T> {
    pub(crate) fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = x.matmul(&self.weight);
        y.add_row(self.bias.data());
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub(crate) fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>, grad: &mut Linear<T>) -> Tensor<T> {
        grad.weight.add_t_matmul(x, dy);
        dy.add_col_sums_into(grad.bias.data_mut());
        dy.matmul_t(&self.weight)
    }
}

pub(crate) struct NormCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub(crate) fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, NormCache<T>) {
        let (rows, cols) = x.shape();
        let n = T::from_f64(cols as f64);
        let eps = T::from_f64(NORM_EPS);
        let mut xhat = Tensor::zeros(rows, cols);
        let mut y = Tensor::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let xr = x.row(r);
            let mean = xr.iter().copied().sum::<T>() / n;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            inv_std.push(inv);
            let hr = xhat.row_mut(r);
            for (h, &v) in hr.iter_mut().zip(xr) {
                *h = (v - mean) * inv;
            }
            let hr = xhat.row(r);
            let yr = y.row_mut(r);
            for c in 0..cols {
                yr[c] = hr[c] * self.gain.data()[c] + self.shift.data()[c];
            }
        }
        (y, NormCache { xhat, inv_std })
    }

    pub(crate) fn backward(&self, cache: &NormCache<T>, dy: &Tensor<T>, grad: &mut LayerNorm<T>) -> Tensor<T> {
        let (rows, cols) = dy.shape();
        let n = T::from_f64(cols as f64);
        let mut dx = Tensor::zeros(rows, cols);
        let mut dxhat = vec![T::zero(); cols];
        for r in 0..rows {
            let dyr = dy.row(r);
            let hr = cache.xhat.row(r);
            let gg = grad.gain.data_mut();
            for c in 0..cols {
                gg[c] += dyr[c] * hr[c];
            }
            let gs = grad.shift.data_mut();
            for c in 0..cols {
                gs[c] += dyr[c];
            }
            for c in 0..cols {
                dxhat[c] = dyr[c] * self.gain.data()[c];
            }
            let mean_d = dxhat.iter().copied().sum::<T>() / n;
            let mean_dh = dxhat.iter().zip(hr).map(|(&a, &b)| a * b).sum::<T>() / n;
            let inv = cache.inv_std[r];
            let dxr = dx.row_mut(r);
            for c in 0..cols {
                dxr[c] = inv * (dxhat[c] - mean_d - hr[c] * mean_dh);
            }
        }
        dx
    }
}

pub(crate) struct FfnCache<T> {
    input: Tensor<T>,
    hidden: Tensor<T>,
}

impl<T: Scalar> FeedForward<T> {
    pub(crate) fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, FfnCache<T>) {
        let mut hidden = self.inner.forward(x);
        for v in hidden.data_mut() {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
        let out = self.outer.forward(&hidden);
        (
            out,
            FfnCache {
                input: x.clone(),
                hidden,
            },
        )
    }

    pub(crate) fn backward(&self, cache: &FfnCache<T>, dy: &Tensor<T>, grad: &mut FeedForward<T>) -> Tensor<T> {
        let mut dh = self.outer.backward(&cache.hidden, dy, &mut grad.outer);
        for (d, &h) in dh.data_mut().iter_mut().zip(cache.hidden.data()) {
            if h <= T::zero() {
                *d = T::zero();
            }
        }
        self.inner.backward(&cache.input, &dh, &mut grad.inner)
    }
}

/// Which query rows may look at which key rows.
#[derive(Debug, Clone)]
pub(crate) struct AttnLayout {
    /// Per example, `[start, end)` of its query rows.
    pub q_segs: Vec<(usize, usize)>,
    /// Per example, `[start, end)` of its key rows.
    pub k_segs: Vec<(usize, usize)>,
    /// False for key rows holding PAD.
    pub key_valid: Vec<bool>,
    /// Query `i` sees key `j` only if `j <= i` within the segment.
    pub causal: bool,
}

pub(crate) struct AttnCache<T> {
    xq: Tensor<T>,
    xkv: Tensor<T>,
    q: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    ctx: Tensor<T>,
    /// Softmax weights, indexed `segment * heads + head`.
    pub probs: Vec<Tensor<T>>,
}

/// Masked row softmax in place; rows with no visible key become zero.
pub(crate) fn masked_softmax<T: Scalar>(scores: &mut Tensor<T>, visible: impl Fn(usize, usize) -> bool) {
    let (rows, cols) = scores.shape();
    for i in 0..rows {
        let row = scores.row_mut(i);
        let mut max = T::neg_infinity();
        for (j, &s) in row.iter().enumerate() {
            if visible(i, j) && s > max {
                max = s;
            }
        }
        if max == T::neg_infinity() {
            row.iter_mut().for_each(|x| *x = T::zero());
            continue;
        }
        let mut sum = T::zero();
        for (j, s) in row.iter_mut().enumerate().take(cols) {
            if visible(i, j) {
                *s = (*s - max).exp();
                sum += *s;
            } else {
                *s = T::zero();
            }
        }
        row.iter_mut().for_each(|x| *x /= sum);
    }
}

impl<T: Scalar> MultiHeadAttention<T> {
    pub(crate) fn forward(
        &self,
        xq: &Tensor<T>,
        xkv: &Tensor<T>,
        layout: &AttnLayout,
        heads: usize,
    ) -> (Tensor<T>, AttnCache<T>) {
        let q = self.query.forward(xq);
        let k = self.key.forward(xkv);
        let v = self.value.forward(xkv);
        let dim = q.cols();
        let hd = dim / heads;
        let scale = T::from_f64(1.0 / libm::sqrt(hd as f64));
        let mut ctx = Tensor::zeros(q.rows(), dim);
        let mut probs = Vec::with_capacity(layout.q_segs.len() * heads);
        for (&(q0, q1), &(k0, k1)) in layout.q_segs.iter().zip(&layout.k_segs) {
            for h in 0..heads {
                let (c0, c1) = (h * hd, (h + 1) * hd);
                let mut p = Tensor::zeros(q1 - q0, k1 - k0);
                gemm(scale, q.block(q0, q1, c0, c1), k.block(k0, k1, c0, c1).t(), T::zero(), p.view_mut());
                let valid = &layout.key_valid[k0..k1];
                let causal = layout.causal;
                masked_softmax(&mut p, |i, j| valid[j] && (!causal || j <= i));
                gemm(T::one(), p.view(), v.block(k0, k1, c0, c1), T::zero(), ctx.block_mut(q0, q1, c0, c1));
                probs.push(p);
            }
        }
        let out = self.output.forward(&ctx);
        let cache = AttnCache {
            xq: xq.clone(),
            xkv: xkv.clone(),
            q,
            k,
            v,
            ctx,
            probs,
        };
        (out, cache)
    }

    /// Returns `(dL/dxq, dL/dxkv)`.
    pub(crate) fn backward(
        &self,
        cache: &AttnCache<T>,
        dout: &Tensor<T>,
        layout: &AttnLayout,
        heads: usize,
        grad: &mut MultiHeadAttention<T>,
    ) -> (Tensor<T>, Tensor<T>) {
        let dctx = self.output.backward(&cache.ctx, dout, &mut grad.output);
        let dim = cache.q.cols();
        let hd = dim / heads;
        let scale = T::from_f64(1.0 / libm::sqrt(hd as f64));
        let mut dq = cache.q.zeros_like();
        let mut dk = cache.k.zeros_like();
        let mut dv = cache.v.zeros_like();
        let segs = layout.q_segs.iter().zip(&layout.k_segs).enumerate();
        for (s, (&(q0, q1), &(k0, k1))) in segs {
            for h in 0..heads {
                let (c0, c1) = (h * hd, (h + 1) * hd);
                let p = &cache.probs[s * heads + h];
                let mut ds = Tensor::zeros(q1 - q0, k1 - k0);
                gemm(T::one(), dctx.block(q0, q1, c0, c1), cache.v.block(k0, k1, c0, c1).t(), T::zero(), ds.view_mut());
                gemm(T::one(), p.view().t(), dctx.block(q0, q1, c0, c1), T::one(), dv.block_mut(k0, k1, c0, c1));
                for i in 0..p.rows() {
                    let pr = p.row(i);
                    let dr = ds.row_mut(i);
                    let dot: T = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
                    for (d, &pv) in dr.iter_mut().zip(pr) {
                        *d = pv * (*d - dot);
                    }
                }
                gemm(scale, ds.view(), cache.k.block(k0, k1, c0, c1), T::one(), dq.block_mut(q0, q1, c0, c1));
                gemm(scale, ds.view().t(), cache.q.block(q0, q1, c0, c1), T::one(), dk.block_mut(k0, k1, c0, c1));
            }
        }
        let dxq = self.query.backward(&cache.xq, &dq, &mut grad.query);
        let mut dxkv = self.key.backward(&cache.xkv, &dk, &mut grad.key);
        dxkv.add_assign(&self.value.backward(&cache.xkv, &dv, &mut grad.value));
        (dxq, dxkv)
    }
}

/// Inverted dropout mask, or `None` when inactive.
pub(crate) fn dropout_mask<T: Scalar>(
    rows: usize,
    cols: usize,
    prob: f64,
    rng: Option<&mut RngStream>,
) -> Option<Tensor<T>> {
    let rng = rng?;
    if prob <= 0.0 {
        return None;
    }
    let keep = T::from_f64(1.0 / (1.0 - prob));
    let data = (0..rows * cols)
        .map(|_| if rng.bernoulli(prob) { T::zero() } else { keep })
        .collect();
    Some(Tensor::from_vec(rows, cols, data))
}

pub(crate) fn apply_mask<T: Scalar>(x: &mut Tensor<T>, mask: &Option<Tensor<T>>) {
    if let Some(m) = mask {
        for (a, &b) in x.data_mut().iter_mut().zip(m.data()) {
            *a *= b;
        }
    }
}

//! Packed-batch forward pass, cross-entropy loss and reverse-mode gradients.

use alloc::vec::Vec;

use super::layers::{apply_mask, dropout_mask, AttnCache, AttnLayout, FfnCache, NormCache};
use super::params::{DecoderLayer, EncoderLayer, TransformerParams};
use super::tensor::{Scalar, Tensor};
use super::ModelError;
use crate::rng::RngStream;
use crate::tokenizer::Vocabulary;

/// One training pair in id space. `dec_in` and `labels` have equal length;
/// row `t` of the logits for `dec_in[..=t]` is scored against `labels[t]`.
/// PAD labels do not contribute to the loss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub src: Vec<u32>,
    pub dec_in: Vec<u32>,
    pub labels: Vec<u32>,
}

impl Example {
    /// Teacher forcing: the decoder reads `BOS target` and predicts
    /// `target EOS`.
    pub fn teacher_forced(src: Vec<u32>, target: &[u32]) -> Self {
        let mut dec_in = Vec::with_capacity(target.len() + 1);
        dec_in.push(Vocabulary::BOS);
        dec_in.extend_from_slice(target);
        let mut labels = target.to_vec();
        labels.push(Vocabulary::EOS);
        Example { src, dec_in, labels }
    }

    pub fn target_tokens(&self) -> usize {
        self.labels.iter().filter(|&&l| l != Vocabulary::PAD).count()
    }
}

/// Several examples stacked row-wise without padding.
#[derive(Debug, Clone)]
pub struct PackedBatch {
    src_ids: Vec<u32>,
    src_pos: Vec<usize>,
    dec_ids: Vec<u32>,
    dec_pos: Vec<usize>,
    labels: Vec<u32>,
    src_segs: Vec<(usize, usize)>,
    dec_segs: Vec<(usize, usize)>,
}

fn segments<'a>(lens: impl Iterator<Item = &'a [u32]>) -> (Vec<u32>, Vec<usize>, Vec<(usize, usize)>) {
    let mut ids = Vec::new();
    let mut pos = Vec::new();
    let mut segs = Vec::new();
    for s in lens {
        let start = ids.len();
        ids.extend_from_slice(s);
        pos.extend(0..s.len());
        segs.push((start, ids.len()));
    }
    (ids, pos, segs)
}

impl PackedBatch {
    pub fn new<'a>(examples: impl IntoIterator<Item = &'a Example>) -> Self {
        let examples: Vec<&Example> = examples.into_iter().collect();
        let (src_ids, src_pos, src_segs) = segments(examples.iter().map(|e| e.src.as_slice()));
        let (dec_ids, dec_pos, dec_segs) = segments(examples.iter().map(|e| e.dec_in.as_slice()));
        let mut labels = Vec::with_capacity(dec_ids.len());
        for e in &examples {
            assert_eq!(e.dec_in.len(), e.labels.len(), "decoder input and labels differ in length");
            labels.extend_from_slice(&e.labels);
        }
        PackedBatch {
            src_ids,
            src_pos,
            dec_ids,
            dec_pos,
            labels,
            src_segs,
            dec_segs,
        }
    }

    /// A single example without labels, for inference.
    pub fn single(src: &[u32], dec_in: &[u32]) -> Self {
        let labels = alloc::vec![Vocabulary::PAD; dec_in.len()];
        let e = Example {
            src: src.to_vec(),
            dec_in: dec_in.to_vec(),
            labels,
        };
        PackedBatch::new([&e])
    }

    pub fn len(&self) -> usize {
        self.src_segs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src_segs.is_empty()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Row range of example `i` in the logits matrix.
    pub fn target_rows(&self, i: usize) -> core::ops::Range<usize> {
        self.dec_segs[i].0..self.dec_segs[i].1
    }

    pub(crate) fn check(&self, vocab: usize, max_positions: usize) -> Result<(), ModelError> {
        for &(a, b) in self.src_segs.iter().chain(&self.dec_segs) {
            if b - a > max_positions {
                return Err(ModelError::Length {
                    len: b - a,
                    max: max_positions,
                });
            }
        }
        let ids = self.src_ids.iter().chain(&self.dec_ids).chain(&self.labels);
        if let Some(&id) = ids.into_iter().find(|&&id| id as usize >= vocab) {
            return Err(ModelError::Token { id, vocab });
        }
        Ok(())
    }

    fn layouts(&self) -> (AttnLayout, AttnLayout, AttnLayout) {
        let src_valid: Vec<bool> = self.src_ids.iter().map(|&t| t != Vocabulary::PAD).collect();
        let dec_valid: Vec<bool> = self.dec_ids.iter().map(|&t| t != Vocabulary::PAD).collect();
        let enc = AttnLayout {
            q_segs: self.src_segs.clone(),
            k_segs: self.src_segs.clone(),
            key_valid: src_valid.clone(),
            causal: false,
        };
        let dec_self = AttnLayout {
            q_segs: self.dec_segs.clone(),
            k_segs: self.dec_segs.clone(),
            key_valid: dec_valid,
            causal: true,
        };
        let cross = AttnLayout {
            q_segs: self.dec_segs.clone(),
            k_segs: self.src_segs.clone(),
            key_valid: src_valid,
            causal: false,
        };
        (enc, dec_self, cross)
    }
}

pub(crate) struct EncLayerCache<T> {
    attn: AttnCache<T>,
    drop1: Option<Tensor<T>>,
    norm1: NormCache<T>,
    ffn: FfnCache<T>,
    drop2: Option<Tensor<T>>,
    norm2: NormCache<T>,
}

pub(crate) struct DecLayerCache<T> {
    self_attn: AttnCache<T>,
    drop1: Option<Tensor<T>>,
    norm1: NormCache<T>,
    cross: AttnCache<T>,
    drop2: Option<Tensor<T>>,
    norm2: NormCache<T>,
    ffn: FfnCache<T>,
    drop3: Option<Tensor<T>>,
    norm3: NormCache<T>,
}

/// Everything the backward pass needs.
pub(crate) struct ForwardCache<T> {
    layouts: (AttnLayout, AttnLayout, AttnLayout),
    enc_drop: Option<Tensor<T>>,
    dec_drop: Option<Tensor<T>>,
    pub(crate) enc: Vec<EncLayerCache<T>>,
    pub(crate) dec: Vec<DecLayerCache<T>>,
    hidden: Tensor<T>,
}

impl<T> EncLayerCache<T> {
    #[cfg(test)]
    pub(crate) fn attention(&self) -> &AttnCache<T> {
        &self.attn
    }
}

impl<T> DecLayerCache<T> {
    #[cfg(test)]
    pub(crate) fn attentions(&self) -> [&AttnCache<T>; 2] {
        [&self.self_attn, &self.cross]
    }
}

fn residual<T: Scalar>(x: &Tensor<T>, mut branch: Tensor<T>, mask: &Option<Tensor<T>>) -> Tensor<T> {
    apply_mask(&mut branch, mask);
    branch.add_assign(x);
    branch
}

fn masked<T: Scalar>(d: &Tensor<T>, mask: &Option<Tensor<T>>) -> Tensor<T> {
    let mut out = d.clone();
    apply_mask(&mut out, mask);
    out
}

impl<T: Scalar> EncoderLayer<T> {
    fn forward(
        &self,
        x: &Tensor<T>,
        layout: &AttnLayout,
        heads: usize,
        p: f64,
        mut rng: Option<&mut RngStream>,
    ) -> (Tensor<T>, EncLayerCache<T>) {
        let (rows, cols) = x.shape();
        let (a, attn) = self.self_attn.forward(x, x, layout, heads);
        let drop1 = dropout_mask(rows, cols, p, rng.as_deref_mut());
        let (h1, norm1) = self.norm1.forward(&residual(x, a, &drop1));
        let (f, ffn) = self.ffn.forward(&h1);
        let drop2 = dropout_mask(rows, cols, p, rng.as_deref_mut());
        let (out, norm2) = self.norm2.forward(&residual(&h1, f, &drop2));
        let cache = EncLayerCache {
            attn,
            drop1,
            norm1,
            ffn,
            drop2,
            norm2,
        };
        (out, cache)
    }

    fn backward(
        &self,
        c: &EncLayerCache<T>,
        dout: &Tensor<T>,
        layout: &AttnLayout,
        heads: usize,
        grad: &mut EncoderLayer<T>,
    ) -> Tensor<T> {
        let dr2 = self.norm2.backward(&c.norm2, dout, &mut grad.norm2);
        let mut dh1 = self.ffn.backward(&c.ffn, &masked(&dr2, &c.drop2), &mut grad.ffn);
        dh1.add_assign(&dr2);
        let dr1 = self.norm1.backward(&c.norm1, &dh1, &mut grad.norm1);
        let (dq, dkv) = self
            .self_attn
            .backward(&c.attn, &masked(&dr1, &c.drop1), layout, heads, &mut grad.self_attn);
        let mut dx = dr1;
        dx.add_assign(&dq);
        dx.add_assign(&dkv);
        dx
    }
}

impl<T: Scalar> DecoderLayer<T> {
    #[allow(clippy::too_many_arguments)]
    fn forward(
        &self,
        y: &Tensor<T>,
        memory: &Tensor<T>,
        self_layout: &AttnLayout,
        cross_layout: &AttnLayout,
        heads: usize,
        p: f64,
        mut rng: Option<&mut RngStream>,
    ) -> (Tensor<T>, DecLayerCache<T>) {
        let (rows, cols) = y.shape();
        let (a, self_attn) = self.self_attn.forward(y, y, self_layout, heads);
        let drop1 = dropout_mask(rows, cols, p, rng.as_deref_mut());
        let (h1, norm1) = self.norm1.forward(&residual(y, a, &drop1));
        let (c, cross) = self.cross_attn.forward(&h1, memory, cross_layout, heads);
        let drop2 = dropout_mask(rows, cols, p, rng.as_deref_mut());
        let (h2, norm2) = self.norm2.forward(&residual(&h1, c, &drop2));
        let (f, ffn) = self.ffn.forward(&h2);
        let drop3 = dropout_mask(rows, cols, p, rng.as_deref_mut());
        let (out, norm3) = self.norm3.forward(&residual(&h2, f, &drop3));
        let cache = DecLayerCache {
            self_attn,
            drop1,
            norm1,
            cross,
            drop2,
            norm2,
            ffn,
            drop3,
            norm3,
        };
        (out, cache)
    }

    /// Returns `dL/dy` and accumulates `dL/dmemory`.
    fn backward(
        &self,
        c: &DecLayerCache<T>,
        dout: &Tensor<T>,
        layouts: (&AttnLayout, &AttnLayout),
        heads: usize,
        grad: &mut DecoderLayer<T>,
        dmemory: &mut Tensor<T>,
    ) -> Tensor<T> {
        let dr3 = self.norm3.backward(&c.norm3, dout, &mut grad.norm3);
        let mut dh2 = self.ffn.backward(&c.ffn, &masked(&dr3, &c.drop3), &mut grad.ffn);
        dh2.add_assign(&dr3);
        let dr2 = self.norm2.backward(&c.norm2, &dh2, &mut grad.norm2);
        let (dq, dmem) = self
            .cross_attn
            .backward(&c.cross, &masked(&dr2, &c.drop2), layouts.1, heads, &mut grad.cross_attn);
        dmemory.add_assign(&dmem);
        let mut dh1 = dr2;
        dh1.add_assign(&dq);
        let dr1 = self.norm1.backward(&c.norm1, &dh1, &mut grad.norm1);
        let (dq, dkv) = self
            .self_attn
            .backward(&c.self_attn, &masked(&dr1, &c.drop1), layouts.0, heads, &mut grad.self_attn);
        let mut dy = dr1;
        dy.add_assign(&dq);
        dy.add_assign(&dkv);
        dy
    }
}

/// Mean cross-entropy over non-PAD labels and its gradient with respect to
/// the logits. Returns `(loss, dlogits, counted_tokens)`.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[u32]) -> (T, Tensor<T>, usize) {
    assert_eq!(logits.rows(), labels.len(), "one label per logits row");
    let count = labels.iter().filter(|&&l| l != Vocabulary::PAD).count();
    let mut grad = logits.zeros_like();
    if count == 0 {
        return (T::zero(), grad, 0);
    }
    let inv = T::one() / T::from_f64(count as f64);
    let mut total = T::zero();
    for (r, &label) in labels.iter().enumerate() {
        if label == Vocabulary::PAD {
            continue;
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&x| (x - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - row[label as usize];
        let g = grad.row_mut(r);
        for (gi, &x) in g.iter_mut().zip(row) {
            *gi = (x - log_z).exp() * inv;
        }
        g[label as usize] -= inv;
    }
    (total * inv, grad, count)
}

impl<T: Scalar> TransformerParams<T> {
    fn embed(&self, ids: &[u32], pos: &[usize]) -> Tensor<T> {
        let d = self.config.dim;
        let mut x = Tensor::zeros(ids.len(), d);
        for (r, (&id, &p)) in ids.iter().zip(pos).enumerate() {
            let out = x.row_mut(r);
            let te = self.token_embedding.row(id as usize);
            let pe = self.position_embedding.row(p);
            for c in 0..d {
                out[c] = te[c] + pe[c];
            }
        }
        x
    }

    /// Encoder output for packed source rows.
    pub(crate) fn encode_rows(
        &self,
        ids: &[u32],
        pos: &[usize],
        layout: &AttnLayout,
        mut rng: Option<&mut RngStream>,
    ) -> (Tensor<T>, Option<Tensor<T>>, Vec<EncLayerCache<T>>) {
        let p = self.config.dropout_prob;
        let mut x = self.embed(ids, pos);
        let drop = dropout_mask(x.rows(), x.cols(), p, rng.as_deref_mut());
        apply_mask(&mut x, &drop);
        let mut caches = Vec::with_capacity(self.encoder.len());
        for layer in &self.encoder {
            let (nx, c) = layer.forward(&x, layout, self.config.heads, p, rng.as_deref_mut());
            x = nx;
            caches.push(c);
        }
        (x, drop, caches)
    }

    pub(crate) fn forward_cached(
        &self,
        batch: &PackedBatch,
        mut rng: Option<&mut RngStream>,
    ) -> Result<(Tensor<T>, ForwardCache<T>), ModelError> {
        self.config.validate()?;
        batch.check(self.config.vocab_size, self.config.max_positions)?;
        let layouts = batch.layouts();
        let heads = self.config.heads;
        let p = self.config.dropout_prob;
        let (memory, enc_drop, enc) = self.encode_rows(&batch.src_ids, &batch.src_pos, &layouts.0, rng.as_deref_mut());
        let mut y = self.embed(&batch.dec_ids, &batch.dec_pos);
        let dec_drop = dropout_mask(y.rows(), y.cols(), p, rng.as_deref_mut());
        apply_mask(&mut y, &dec_drop);
        let mut dec = Vec::with_capacity(self.decoder.len());
        for layer in &self.decoder {
            let (ny, c) = layer.forward(&y, &memory, &layouts.1, &layouts.2, heads, p, rng.as_deref_mut());
            y = ny;
            dec.push(c);
        }
        let logits = self.output.forward(&y);
        let cache = ForwardCache {
            layouts,
            enc_drop,
            dec_drop,
            enc,
            dec,
            hidden: y,
        };
        Ok((logits, cache))
    }

    /// Logits for a packed batch, one row per decoder input row.
    pub fn forward_batch(&self, batch: &PackedBatch) -> Result<Tensor<T>, ModelError> {
        self.forward_cached(batch, None).map(|(l, _)| l)
    }

    /// Logits of shape `dec_in.len() x vocab_size`; row `t` scores the token
    /// following `dec_in[t]`.
    pub fn forward(&self, src: &[u32], dec_in: &[u32]) -> Result<Tensor<T>, ModelError> {
        self.forward_batch(&PackedBatch::single(src, dec_in))
    }

    /// Mean token cross-entropy of a batch without gradients.
    pub fn batch_loss(&self, batch: &PackedBatch) -> Result<T, ModelError> {
        let logits = self.forward_batch(batch)?;
        Ok(cross_entropy(&logits, &batch.labels).0)
    }

    /// Loss and exact gradient of the mean token cross-entropy. A dropout
    /// stream enables dropout when `dropout_prob > 0`.
    pub fn loss_and_grad(
        &self,
        batch: &PackedBatch,
        dropout: Option<&mut RngStream>,
    ) -> Result<(T, TransformerParams<T>), ModelError> {
        let (logits, cache) = self.forward_cached(batch, dropout)?;
        let (loss, dlogits, _) = cross_entropy(&logits, &batch.labels);
        if !loss.is_finite() {
            return Err(ModelError::Numerical {
                tensor: alloc::string::String::from("loss"),
            });
        }
        let mut grad = TransformerParams::init_shapes(&self.config);
        let heads = self.config.heads;
        let (enc_l, dec_l, cross_l) = &cache.layouts;

        let mut dy = self.output.backward(&cache.hidden, &dlogits, &mut grad.output);
        let mut dmemory = Tensor::zeros(batch.src_ids.len(), self.config.dim);
        for (k, layer) in self.decoder.iter().enumerate().rev() {
            dy = layer.backward(&cache.dec[k], &dy, (dec_l, cross_l), heads, &mut grad.decoder[k], &mut dmemory);
        }
        apply_mask(&mut dy, &cache.dec_drop);
        self.embed_backward(&batch.dec_ids, &batch.dec_pos, &dy, &mut grad);

        let mut dx = dmemory;
        for (k, layer) in self.encoder.iter().enumerate().rev() {
            dx = layer.backward(&cache.enc[k], &dx, enc_l, heads, &mut grad.encoder[k]);
        }
        apply_mask(&mut dx, &cache.enc_drop);
        self.embed_backward(&batch.src_ids, &batch.src_pos, &dx, &mut grad);

        if let Some(name) = grad.first_non_finite() {
            return Err(ModelError::Numerical { tensor: name });
        }
        Ok((loss, grad))
    }

    fn embed_backward(&self, ids: &[u32], pos: &[usize], dx: &Tensor<T>, grad: &mut TransformerParams<T>) {
        for (r, (&id, &p)) in ids.iter().zip(pos).enumerate() {
            let d = dx.row(r);
            for (g, &v) in grad.token_embedding.row_mut(id as usize).iter_mut().zip(d) {
                *g += v;
            }
            for (g, &v) in grad.position_embedding.row_mut(p).iter_mut().zip(d) {
                *g += v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::ModelConfig;
    use alloc::vec;

    fn tiny(seed: u64) -> TransformerParams<f64> {
        let cfg = ModelConfig::new(2, 2, 8, 2, 12, 16);
        TransformerParams::init(&cfg, &mut RngStream::new(seed)).unwrap()
    }

    #[test]
    fn zero_parameters_give_uniform_rows() {
        let p = tiny(1).zeros_like();
        let logits = p.forward(&[3, 4, 5], &[1, 6, 7]).unwrap();
        for r in 0..logits.rows() {
            assert!(logits.row(r).iter().all(|&x| x == logits.get(r, 0)));
        }
        let (loss, _, _) = cross_entropy(&logits, &[6, 7, 2]);
        assert!((loss - libm::log(12.0)).abs() < 1e-12);
    }

    #[test]
    fn causality() {
        let p = tiny(2);
        let a = p.forward(&[3, 4, 5, 9], &[1, 6, 7, 8, 10]).unwrap();
        let b = p.forward(&[3, 4, 5, 9], &[1, 6, 7, 11, 10]).unwrap();
        for r in 0..3 {
            assert_eq!(a.row(r), b.row(r));
        }
        assert_ne!(a.row(3), b.row(3));
    }

    #[test]
    fn padding_is_invisible() {
        let p = tiny(3);
        let a = p.forward(&[3, 4, 5], &[1, 6, 7]).unwrap();
        let b = p.forward(&[3, 4, 5, 0, 0], &[1, 6, 7, 0]).unwrap();
        for r in 0..3 {
            for (x, y) in a.row(r).iter().zip(b.row(r)) {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let p = tiny(4);
        let batch = PackedBatch::new(&[
            Example::teacher_forced(vec![3, 4, 5], &[6, 7]),
            Example::teacher_forced(vec![8, 0, 9, 10], &[11]),
        ]);
        let (_, cache) = p.forward_cached(&batch, None).unwrap();
        let attns = cache
            .enc
            .iter()
            .map(|c| c.attention())
            .chain(cache.dec.iter().flat_map(|c| c.attentions()));
        for a in attns {
            for probs in &a.probs {
                for r in 0..probs.rows() {
                    let s: f64 = probs.row(r).iter().sum();
                    assert!((s - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn packing_matches_single_examples() {
        let p = tiny(5);
        let ex = [
            Example::teacher_forced(vec![3, 4, 5], &[6, 7]),
            Example::teacher_forced(vec![8, 9], &[11, 10, 3]),
        ];
        let batch = PackedBatch::new(&ex);
        let packed = p.forward_batch(&batch).unwrap();
        for (i, e) in ex.iter().enumerate() {
            let alone = p.forward(&e.src, &e.dec_in).unwrap();
            for (k, r) in batch.target_rows(i).enumerate() {
                for (x, y) in alone.row(k).iter().zip(packed.row(r)) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn batch_loss_is_token_weighted_mean() {
        let p = tiny(6);
        let a = Example::teacher_forced(vec![3, 4, 5], &[6, 7]);
        let b = Example::teacher_forced(vec![8, 9], &[11]);
        let la = p.batch_loss(&PackedBatch::new([&a])).unwrap();
        let lb = p.batch_loss(&PackedBatch::new([&b])).unwrap();
        let lab = p.batch_loss(&PackedBatch::new([&a, &b])).unwrap();
        assert!((lab - (3.0 * la + 2.0 * lb) / 5.0).abs() < 1e-12);
    }

    #[test]
    fn fully_masked_target_has_zero_gradient() {
        let p = tiny(7);
        let e = Example {
            src: vec![3, 4],
            dec_in: vec![1, 5],
            labels: vec![0, 0],
        };
        let (loss, g) = p.loss_and_grad(&PackedBatch::new([&e]), None).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.tensors().iter().all(|(_, t)| t.data().iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn pad_embedding_row_gets_no_gradient() {
        let p = tiny(8);
        let e = Example::teacher_forced(vec![3, 4, 0, 0], &[5, 6]);
        let (_, g) = p.loss_and_grad(&PackedBatch::new([&e]), None).unwrap();
        assert!(g.token_embedding.row(0).iter().all(|&x| x == 0.0));
        assert!(g.token_embedding.row(3).iter().any(|&x| x != 0.0));
    }

    #[test]
    fn length_and_token_errors() {
        let p = tiny(9);
        let long = vec![3u32; 17];
        assert!(matches!(p.forward(&long, &[1]), Err(ModelError::Length { len: 17, max: 16 })));
        assert!(matches!(p.forward(&[3], &[1, 12]), Err(ModelError::Token { id: 12, .. })));
    }
}

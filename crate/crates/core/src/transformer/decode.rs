//! Greedy autoregressive decoding with cached keys and values.

use alloc::vec::Vec;

use super::layers::{masked_softmax, AttnLayout};
use super::model::PackedBatch;
use super::params::{MultiHeadAttention, TransformerParams};
use super::tensor::{gemm, Scalar, Tensor};
use super::ModelError;
use crate::tokenizer::Vocabulary;

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Growing key/value rows of one attention block.
struct KvCache<T> {
    keys: Vec<T>,
    values: Vec<T>,
    valid: Vec<bool>,
}

impl<T: Scalar> KvCache<T> {
    fn rows(&self) -> usize {
        self.valid.len()
    }
}

/// Attention of a single query row over `cache`.
fn attend_row<T: Scalar>(
    attn: &MultiHeadAttention<T>,
    x: &Tensor<T>,
    cache: &KvCache<T>,
    heads: usize,
) -> Tensor<T> {
    let q = attn.query.forward(x);
    let dim = q.cols();
    let hd = dim / heads;
    let n = cache.rows();
    let keys = Tensor::from_vec(n, dim, cache.keys.clone());
    let values = Tensor::from_vec(n, dim, cache.values.clone());
    let scale = T::from_f64(1.0 / libm::sqrt(hd as f64));
    let mut ctx = Tensor::zeros(1, dim);
    for h in 0..heads {
        let (c0, c1) = (h * hd, (h + 1) * hd);
        let mut p = Tensor::zeros(1, n);
        gemm(scale, q.block(0, 1, c0, c1), keys.block(0, n, c0, c1).t(), T::zero(), p.view_mut());
        masked_softmax(&mut p, |_, j| cache.valid[j]);
        gemm(T::one(), p.view(), values.block(0, n, c0, c1), T::zero(), ctx.block_mut(0, 1, c0, c1));
    }
    attn.output.forward(&ctx)
}

impl<T: Scalar> TransformerParams<T> {
    /// Starts from BOS and appends the argmax token until EOS or `max_len`
    /// tokens. The result excludes BOS and EOS. Generation also stops once
    /// the decoder runs out of positions.
    pub fn greedy_decode(&self, src: &[u32], max_len: usize) -> Result<Vec<u32>, ModelError> {
        let probe = PackedBatch::single(src, &[Vocabulary::BOS]);
        self.forward_batch_check(&probe)?;
        let heads = self.config.heads;
        let dim = self.config.dim;
        let src_valid: Vec<bool> = src.iter().map(|&t| t != Vocabulary::PAD).collect();
        let pos: Vec<usize> = (0..src.len()).collect();
        let layout = AttnLayout {
            q_segs: alloc::vec![(0, src.len())],
            k_segs: alloc::vec![(0, src.len())],
            key_valid: src_valid.clone(),
            causal: false,
        };
        let (memory, _, _) = self.encode_rows(src, &pos, &layout, None);

        let cross: Vec<KvCache<T>> = self
            .decoder
            .iter()
            .map(|l| KvCache {
                keys: l.cross_attn.key.forward(&memory).into_vec(),
                values: l.cross_attn.value.forward(&memory).into_vec(),
                valid: src_valid.clone(),
            })
            .collect();
        let mut selfs: Vec<KvCache<T>> = self
            .decoder
            .iter()
            .map(|_| KvCache {
                keys: Vec::new(),
                values: Vec::new(),
                valid: Vec::new(),
            })
            .collect();

        let steps = max_len.min(self.config.max_positions);
        let mut out = Vec::new();
        let mut token = Vocabulary::BOS;
        for t in 0..steps {
            let mut x = Tensor::zeros(1, dim);
            {
                let te = self.token_embedding.row(token as usize);
                let pe = self.position_embedding.row(t);
                for (c, v) in x.row_mut(0).iter_mut().enumerate() {
                    *v = te[c] + pe[c];
                }
            }
            for (k, layer) in self.decoder.iter().enumerate() {
                let cache = &mut selfs[k];
                cache.keys.extend_from_slice(layer.self_attn.key.forward(&x).data());
                cache.values.extend_from_slice(layer.self_attn.value.forward(&x).data());
                cache.valid.push(token != Vocabulary::PAD);
                let mut r = attend_row(&layer.self_attn, &x, cache, heads);
                r.add_assign(&x);
                let (h1, _) = layer.norm1.forward(&r);
                let mut r = attend_row(&layer.cross_attn, &h1, &cross[k], heads);
                r.add_assign(&h1);
                let (h2, _) = layer.norm2.forward(&r);
                let (mut r, _) = layer.ffn.forward(&h2);
                r.add_assign(&h2);
                x = layer.norm3.forward(&r).0;
            }
            let logits = self.output.forward(&x);
            let next = argmax(logits.row(0)) as u32;
            if next == Vocabulary::EOS {
                break;
            }
            out.push(next);
            token = next;
        }
        Ok(out)
    }

    fn forward_batch_check(&self, batch: &PackedBatch) -> Result<(), ModelError> {
        self.config.validate()?;
        batch.check(self.config.vocab_size, self.config.max_positions)
    }
}

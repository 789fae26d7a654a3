//! Trainable tensors of the encoder-decoder model.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::config::ModelConfig;
use super::tensor::{Scalar, Tensor};
use super::ModelError;
use crate::rng::RngStream;

/// `y = x W + b` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gain: Tensor<T>,
    pub shift: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention<T> {
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub output: Linear<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward<T> {
    pub inner: Linear<T>,
    pub outer: Linear<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer<T> {
    pub self_attn: MultiHeadAttention<T>,
    pub norm1: LayerNorm<T>,
    pub ffn: FeedForward<T>,
    pub norm2: LayerNorm<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer<T> {
    pub self_attn: MultiHeadAttention<T>,
    pub norm1: LayerNorm<T>,
    pub cross_attn: MultiHeadAttention<T>,
    pub norm2: LayerNorm<T>,
    pub ffn: FeedForward<T>,
    pub norm3: LayerNorm<T>,
}

/// All parameters. Encoder and decoder share the token and position
/// embedding tables.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerParams<T> {
    pub config: ModelConfig,
    pub token_embedding: Tensor<T>,
    pub position_embedding: Tensor<T>,
    pub encoder: Vec<EncoderLayer<T>>,
    pub decoder: Vec<DecoderLayer<T>>,
    pub output: Linear<T>,
}

type Named<'a, T> = Vec<(String, &'a Tensor<T>)>;
type NamedMut<'a, T> = Vec<(String, &'a mut Tensor<T>)>;

fn uniform<T: Scalar>(rows: usize, cols: usize, bound: f64, rng: &mut RngStream) -> Tensor<T> {
    let data = (0..rows * cols)
        .map(|_| T::from_f64((2.0 * rng.unit_f64() - 1.0) * bound))
        .collect();
    Tensor::from_vec(rows, cols, data)
}

impl<T: Scalar> Linear<T> {
    fn init(fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Self {
        Linear {
            weight: uniform(fan_in, fan_out, 1.0 / libm::sqrt(fan_in as f64), rng),
            bias: Tensor::zeros(1, fan_out),
        }
    }

    fn collect<'a>(&'a self, p: &str, out: &mut Named<'a, T>) {
        out.push((format!("{p}.weight"), &self.weight));
        out.push((format!("{p}.bias"), &self.bias));
    }

    fn collect_mut<'a>(&'a mut self, p: &str, out: &mut NamedMut<'a, T>) {
        out.push((format!("{p}.weight"), &mut self.weight));
        out.push((format!("{p}.bias"), &mut self.bias));
    }
}

impl<T: Scalar> LayerNorm<T> {
    fn init(dim: usize) -> Self {
        LayerNorm {
            gain: Tensor::filled(1, dim, T::one()),
            shift: Tensor::zeros(1, dim),
        }
    }

    fn collect<'a>(&'a self, p: &str, out: &mut Named<'a, T>) {
        out.push((format!("{p}.gain"), &self.gain));
        out.push((format!("{p}.shift"), &self.shift));
    }

    fn collect_mut<'a>(&'a mut self, p: &str, out: &mut NamedMut<'a, T>) {
        out.push((format!("{p}.gain"), &mut self.gain));
        out.push((format!("{p}.shift"), &mut self.shift));
    }
}

impl<T: Scalar> MultiHeadAttention<T> {
    fn init(dim: usize, rng: &mut RngStream) -> Self {
        MultiHeadAttention {
            query: Linear::init(dim, dim, rng),
            key: Linear::init(dim, dim, rng),
            value: Linear::init(dim, dim, rng),
            output: Linear::init(dim, dim, rng),
        }
    }

    fn collect<'a>(&'a self, p: &str, out: &mut Named<'a, T>) {
        self.query.collect(&format!("{p}.query"), out);
        self.key.collect(&format!("{p}.key"), out);
        self.value.collect(&format!("{p}.value"), out);
        self.output.collect(&format!("{p}.output"), out);
    }

    fn collect_mut<'a>(&'a mut self, p: &str, out: &mut NamedMut<'a, T>) {
        self.query.collect_mut(&format!("{p}.query"), out);
        self.key.collect_mut(&format!("{p}.key"), out);
        self.value.collect_mut(&format!("{p}.value"), out);
        self.output.collect_mut(&format!("{p}.output"), out);
    }
}

impl<T: Scalar> FeedForward<T> {
    fn init(dim: usize, ffn_dim: usize, rng: &mut RngStream) -> Self {
        FeedForward {
            inner: Linear::init(dim, ffn_dim, rng),
            outer: Linear::init(ffn_dim, dim, rng),
        }
    }

    fn collect<'a>(&'a self, p: &str, out: &mut Named<'a, T>) {
        self.inner.collect(&format!("{p}.inner"), out);
        self.outer.collect(&format!("{p}.outer"), out);
    }

    fn collect_mut<'a>(&'a mut self, p: &str, out: &mut NamedMut<'a, T>) {
        self.inner.collect_mut(&format!("{p}.inner"), out);
        self.outer.collect_mut(&format!("{p}.outer"), out);
    }
}

impl<T: Scalar> TransformerParams<T> {
    /// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for
    /// projections, `[-1/sqrt(dim), 1/sqrt(dim)]` for embeddings; unit norm
    /// gains and zero biases.
    pub fn init(config: &ModelConfig, rng: &mut RngStream) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.dim;
        let bound = 1.0 / libm::sqrt(d as f64);
        let token_embedding = uniform(config.vocab_size, d, bound, rng);
        let position_embedding = uniform(config.max_positions, d, bound, rng);
        let encoder = (0..config.enc_layers)
            .map(|_| EncoderLayer {
                self_attn: MultiHeadAttention::init(d, rng),
                norm1: LayerNorm::init(d),
                ffn: FeedForward::init(d, config.ffn_dim, rng),
                norm2: LayerNorm::init(d),
            })
            .collect();
        let decoder = (0..config.dec_layers)
            .map(|_| DecoderLayer {
                self_attn: MultiHeadAttention::init(d, rng),
                norm1: LayerNorm::init(d),
                cross_attn: MultiHeadAttention::init(d, rng),
                norm2: LayerNorm::init(d),
                ffn: FeedForward::init(d, config.ffn_dim, rng),
                norm3: LayerNorm::init(d),
            })
            .collect();
        let output = Linear::init(d, config.vocab_size, rng);
        Ok(TransformerParams {
            config: config.clone(),
            token_embedding,
            position_embedding,
            encoder,
            decoder,
            output,
        })
    }

    /// Same shapes, every entry zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(T::zero());
        }
        z
    }

    /// Every tensor with a stable dotted name, in a fixed order.
    pub fn tensors(&self) -> Named<'_, T> {
        let mut out = Vec::new();
        out.push((String::from("token_embedding"), &self.token_embedding));
        out.push((String::from("position_embedding"), &self.position_embedding));
        for (k, l) in self.encoder.iter().enumerate() {
            l.self_attn.collect(&format!("encoder.{k}.self_attn"), &mut out);
            l.norm1.collect(&format!("encoder.{k}.norm1"), &mut out);
            l.ffn.collect(&format!("encoder.{k}.ffn"), &mut out);
            l.norm2.collect(&format!("encoder.{k}.norm2"), &mut out);
        }
        for (k, l) in self.decoder.iter().enumerate() {
            l.self_attn.collect(&format!("decoder.{k}.self_attn"), &mut out);
            l.norm1.collect(&format!("decoder.{k}.norm1"), &mut out);
            l.cross_attn.collect(&format!("decoder.{k}.cross_attn"), &mut out);
            l.norm2.collect(&format!("decoder.{k}.norm2"), &mut out);
            l.ffn.collect(&format!("decoder.{k}.ffn"), &mut out);
            l.norm3.collect(&format!("decoder.{k}.norm3"), &mut out);
        }
        self.output.collect("output", &mut out);
        out
    }

    pub fn tensors_mut(&mut self) -> NamedMut<'_, T> {
        let mut out = Vec::new();
        out.push((String::from("token_embedding"), &mut self.token_embedding));
        out.push((String::from("position_embedding"), &mut self.position_embedding));
        for (k, l) in self.encoder.iter_mut().enumerate() {
            l.self_attn.collect_mut(&format!("encoder.{k}.self_attn"), &mut out);
            l.norm1.collect_mut(&format!("encoder.{k}.norm1"), &mut out);
            l.ffn.collect_mut(&format!("encoder.{k}.ffn"), &mut out);
            l.norm2.collect_mut(&format!("encoder.{k}.norm2"), &mut out);
        }
        for (k, l) in self.decoder.iter_mut().enumerate() {
            l.self_attn.collect_mut(&format!("decoder.{k}.self_attn"), &mut out);
            l.norm1.collect_mut(&format!("decoder.{k}.norm1"), &mut out);
            l.cross_attn.collect_mut(&format!("decoder.{k}.cross_attn"), &mut out);
            l.norm2.collect_mut(&format!("decoder.{k}.norm2"), &mut out);
            l.ffn.collect_mut(&format!("decoder.{k}.ffn"), &mut out);
            l.norm3.collect_mut(&format!("decoder.{k}.norm3"), &mut out);
        }
        self.output.collect_mut("output", &mut out);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> TransformerParams<U> {
        let mut out = TransformerParams::<U>::init_shapes(&self.config);
        for ((_, dst), (_, src)) in out.tensors_mut().into_iter().zip(self.tensors()) {
            *dst = src.cast();
        }
        out
    }

    /// Zero parameters with the shapes `config` implies.
    pub fn init_shapes(config: &ModelConfig) -> Self {
        let d = config.dim;
        let lin = |i, o| Linear {
            weight: Tensor::zeros(i, o),
            bias: Tensor::zeros(1, o),
        };
        let norm = || LayerNorm {
            gain: Tensor::zeros(1, d),
            shift: Tensor::zeros(1, d),
        };
        let attn = || MultiHeadAttention {
            query: lin(d, d),
            key: lin(d, d),
            value: lin(d, d),
            output: lin(d, d),
        };
        let ffn = || FeedForward {
            inner: lin(d, config.ffn_dim),
            outer: lin(config.ffn_dim, d),
        };
        TransformerParams {
            config: config.clone(),
            token_embedding: Tensor::zeros(config.vocab_size, d),
            position_embedding: Tensor::zeros(config.max_positions, d),
            encoder: (0..config.enc_layers)
                .map(|_| EncoderLayer {
                    self_attn: attn(),
                    norm1: norm(),
                    ffn: ffn(),
                    norm2: norm(),
                })
                .collect(),
            decoder: (0..config.dec_layers)
                .map(|_| DecoderLayer {
                    self_attn: attn(),
                    norm1: norm(),
                    cross_attn: attn(),
                    norm2: norm(),
                    ffn: ffn(),
                    norm3: norm(),
                })
                .collect(),
            output: lin(d, config.vocab_size),
        }
    }

    pub fn global_norm(&self) -> T {
        self.tensors()
            .iter()
            .map(|(_, t)| t.sum_squares())
            .sum::<T>()
            .sqrt()
    }

    /// Name of the first tensor holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|(_, t)| !t.all_finite())
            .map(|(n, _)| n)
    }
}

/// Coarse grouping of tensor names used by gradient checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TensorFamily {
    Embedding,
    Attention,
    FeedForward,
    LayerNorm,
    OutputProjection,
}

impl TensorFamily {
    pub const ALL: [TensorFamily; 5] = [
        TensorFamily::Embedding,
        TensorFamily::Attention,
        TensorFamily::FeedForward,
        TensorFamily::LayerNorm,
        TensorFamily::OutputProjection,
    ];

    pub fn of(name: &str) -> TensorFamily {
        if name.contains("embedding") {
            TensorFamily::Embedding
        } else if name.contains("attn") {
            TensorFamily::Attention
        } else if name.contains("ffn") {
            TensorFamily::FeedForward
        } else if name.contains("norm") {
            TensorFamily::LayerNorm
        } else {
            TensorFamily::OutputProjection
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn low_dimension_model_is_small() {
        let (v, p, d) = (321usize, 1024usize, 64usize);
        let cfg = ModelConfig::new(1, 1, d, 8, v, p);
        let params = TransformerParams::<f32>::init(&cfg, &mut RngStream::new(0)).unwrap();
        let attn = 4 * (d * d + d);
        let ffn = (d * 4 * d + 4 * d) + (4 * d * d + d);
        let norm = 2 * d;
        let expected = (v + p) * d + (attn + ffn + 2 * norm) + (2 * attn + ffn + 3 * norm) + (d * v + v);
        assert_eq!(params.parameter_count(), expected);
        assert!(expected < 1_000_000);
    }

    #[test]
    fn init_is_deterministic_and_cast_preserves_values() {
        let cfg = ModelConfig::new(1, 2, 16, 4, 30, 8);
        let a = TransformerParams::<f64>::init(&cfg, &mut RngStream::new(3)).unwrap();
        let b = TransformerParams::<f64>::init(&cfg, &mut RngStream::new(3)).unwrap();
        assert_eq!(a, b);
        let names: Vec<String> = a.tensors().into_iter().map(|(n, _)| n).collect();
        assert!(names.contains(&String::from("decoder.1.cross_attn.key.weight")));
        let bound = 1.0 / libm::sqrt(16.0);
        assert!(a.encoder[0].self_attn.query.weight.data().iter().all(|x| x.abs() <= bound));
        assert_eq!(a.cast::<f32>().cast::<f64>().tensors().len(), a.tensors().len());
    }
}

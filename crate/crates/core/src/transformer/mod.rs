//! Encoder-decoder transformer written from scratch: packed-batch forward
//! pass, hand-derived backward pass, Adam training and greedy decoding.

mod config;
mod decode;
mod layers;
mod model;
mod optim;
mod params;
pub mod tensor;

use alloc::string::String;

pub use config::{ModelConfig, ModelShape, NormPlacement, PositionEncoding, TrainConfig};
pub use decode::argmax;
pub use model::{cross_entropy, Example, PackedBatch};
pub use optim::{batch_indices, epoch_order, AdamState, StepReport, Trainer};
pub use params::{
    DecoderLayer, EncoderLayer, FeedForward, LayerNorm, Linear, MultiHeadAttention, TensorFamily,
    TransformerParams,
};
pub use tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("sequence of length {len} exceeds max_positions {max}")]
    Length { len: usize, max: usize },
    #[error("token id {id} is outside a vocabulary of {vocab}")]
    Token { id: u32, vocab: usize },
    #[error("non-finite values in {tensor}")]
    Numerical { tensor: String },
    #[error("training data is empty")]
    EmptyData,
}

//! Encoder-decoder transformer with hand-written backpropagation.

pub mod checkpoint;
mod config;
mod generate;
pub mod gradcheck;
mod layers;
mod network;
mod params;
mod tensor;

pub use config::ModelConfig;
pub use generate::{beam_search, generate, greedy, BeamConfig, Hypothesis};
pub use network::{classification_loss_and_grads, classify, classify_batch, forward, loss_and_grads, Batch};
pub use params::{
    standard_normal, Attention, DecoderLayer, EncoderLayer, FeedForward, LayerNorm, Linear, Parameters, TensorRole,
    INIT_STD,
};
pub use tensor::{Scalar, Tensor};

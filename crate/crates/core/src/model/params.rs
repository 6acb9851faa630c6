//! Trainable tensors of the encoder-decoder.
//!
//! Linear weights are stored `[in, out]`. The token embedding is shared by
//! the encoder input, the decoder input and the output projection.

use rand::Rng;

use super::config::ModelConfig;
use super::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention<T> {
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub output: Linear<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward<T> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer<T> {
    pub self_attn: Attention<T>,
    pub self_attn_norm: LayerNorm<T>,
    pub ffn: FeedForward<T>,
    pub ffn_norm: LayerNorm<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer<T> {
    pub self_attn: Attention<T>,
    pub self_attn_norm: LayerNorm<T>,
    pub cross_attn: Attention<T>,
    pub cross_attn_norm: LayerNorm<T>,
    pub ffn: FeedForward<T>,
    pub ffn_norm: LayerNorm<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<T> {
    pub config: ModelConfig,
    pub embed_tokens: Tensor<T>,
    pub encoder_positions: Tensor<T>,
    pub decoder_positions: Tensor<T>,
    pub encoder_layers: Vec<EncoderLayer<T>>,
    pub decoder_layers: Vec<DecoderLayer<T>>,
    pub encoder_final_norm: Option<LayerNorm<T>>,
    pub decoder_final_norm: Option<LayerNorm<T>>,
    pub classifier: Option<Linear<T>>,
}

/// Kind of a tensor, which decides its initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorRole {
    Weight,
    Bias,
    Gain,
}

trait Walk<T> {
    fn walk<'a>(&'a self, prefix: &str, out: &mut Vec<(String, TensorRole, &'a Tensor<T>)>);
    fn walk_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, TensorRole, &'a mut Tensor<T>)>);
}

impl<T> Walk<T> for Linear<T> {
    fn walk<'a>(&'a self, prefix: &str, out: &mut Vec<(String, TensorRole, &'a Tensor<T>)>) {
        out.push((format!("{prefix}.weight"), TensorRole::Weight, &self.weight));
        out.push((format!("{prefix}.bias"), TensorRole::Bias, &self.bias));
    }
    fn walk_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, TensorRole, &'a mut Tensor<T>)>) {
        out.push((format!("{prefix}.weight"), TensorRole::Weight, &mut self.weight));
        out.push((format!("{prefix}.bias"), TensorRole::Bias, &mut self.bias));
    }
}

impl<T> Walk<T> for LayerNorm<T> {
    fn walk<'a>(&'a self, prefix: &str, out: &mut Vec<(String, TensorRole, &'a Tensor<T>)>) {
        out.push((format!("{prefix}.gain"), TensorRole::Gain, &self.gain));
        out.push((format!("{prefix}.bias"), TensorRole::Bias, &self.bias));
    }
    fn walk_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, TensorRole, &'a mut Tensor<T>)>) {
        out.push((format!("{prefix}.gain"), TensorRole::Gain, &mut self.gain));
        out.push((format!("{prefix}.bias"), TensorRole::Bias, &mut self.bias));
    }
}

impl<T> Walk<T> for Attention<T> {
    fn walk<'a>(&'a self, prefix: &str, out: &mut Vec<(String, TensorRole, &'a Tensor<T>)>) {
        self.query.walk(&format!("{prefix}.query"), out);
        self.key.walk(&format!("{prefix}.key"), out);
        self.value.walk(&format!("{prefix}.value"), out);
        self.output.walk(&format!("{prefix}.output"), out);
    }
    fn walk_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, TensorRole, &'a mut Tensor<T>)>) {
        self.query.walk_mut(&format!("{prefix}.query"), out);
        self.key.walk_mut(&format!("{prefix}.key"), out);
        self.value.walk_mut(&format!("{prefix}.value"), out);
        self.output.walk_mut(&format!("{prefix}.output"), out);
    }
}

impl<T> Walk<T> for FeedForward<T> {
    fn walk<'a>(&'a self, prefix: &str, out: &mut Vec<(String, TensorRole, &'a Tensor<T>)>) {
        self.fc1.walk(&format!("{prefix}.fc1"), out);
        self.fc2.walk(&format!("{prefix}.fc2"), out);
    }
    fn walk_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, TensorRole, &'a mut Tensor<T>)>) {
        self.fc1.walk_mut(&format!("{prefix}.fc1"), out);
        self.fc2.walk_mut(&format!("{prefix}.fc2"), out);
    }
}

impl<T> Walk<T> for EncoderLayer<T> {
    fn walk<'a>(&'a self, prefix: &str, out: &mut Vec<(String, TensorRole, &'a Tensor<T>)>) {
        self.self_attn.walk(&format!("{prefix}.self_attn"), out);
        self.self_attn_norm.walk(&format!("{prefix}.self_attn_norm"), out);
        self.ffn.walk(&format!("{prefix}.ffn"), out);
        self.ffn_norm.walk(&format!("{prefix}.ffn_norm"), out);
    }
    fn walk_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, TensorRole, &'a mut Tensor<T>)>) {
        self.self_attn.walk_mut(&format!("{prefix}.self_attn"), out);
        self.self_attn_norm.walk_mut(&format!("{prefix}.self_attn_norm"), out);
        self.ffn.walk_mut(&format!("{prefix}.ffn"), out);
        self.ffn_norm.walk_mut(&format!("{prefix}.ffn_norm"), out);
    }
}

impl<T> Walk<T> for DecoderLayer<T> {
    fn walk<'a>(&'a self, prefix: &str, out: &mut Vec<(String, TensorRole, &'a Tensor<T>)>) {
        self.self_attn.walk(&format!("{prefix}.self_attn"), out);
        self.self_attn_norm.walk(&format!("{prefix}.self_attn_norm"), out);
        self.cross_attn.walk(&format!("{prefix}.cross_attn"), out);
        self.cross_attn_norm.walk(&format!("{prefix}.cross_attn_norm"), out);
        self.ffn.walk(&format!("{prefix}.ffn"), out);
        self.ffn_norm.walk(&format!("{prefix}.ffn_norm"), out);
    }
    fn walk_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, TensorRole, &'a mut Tensor<T>)>) {
        self.self_attn.walk_mut(&format!("{prefix}.self_attn"), out);
        self.self_attn_norm.walk_mut(&format!("{prefix}.self_attn_norm"), out);
        self.cross_attn.walk_mut(&format!("{prefix}.cross_attn"), out);
        self.cross_attn_norm.walk_mut(&format!("{prefix}.cross_attn_norm"), out);
        self.ffn.walk_mut(&format!("{prefix}.ffn"), out);
        self.ffn_norm.walk_mut(&format!("{prefix}.ffn_norm"), out);
    }
}

fn linear<T: Scalar>(fan_in: usize, fan_out: usize) -> Linear<T> {
    Linear {
        weight: Tensor::zeros(&[fan_in, fan_out]),
        bias: Tensor::zeros(&[fan_out]),
    }
}

fn layer_norm<T: Scalar>(d: usize) -> LayerNorm<T> {
    LayerNorm {
        gain: Tensor::filled(&[d], T::one()),
        bias: Tensor::zeros(&[d]),
    }
}

fn attention<T: Scalar>(d: usize) -> Attention<T> {
    Attention {
        query: linear(d, d),
        key: linear(d, d),
        value: linear(d, d),
        output: linear(d, d),
    }
}

fn feed_forward<T: Scalar>(d: usize, d_ff: usize) -> FeedForward<T> {
    FeedForward {
        fc1: linear(d, d_ff),
        fc2: linear(d_ff, d),
    }
}

pub const INIT_STD: f64 = 0.02;

impl<T: Scalar> Parameters<T> {
    /// All-zero weights with layer-norm gains at one. Shapes follow `config`.
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.d_model;
        Parameters {
            config: config.clone(),
            embed_tokens: Tensor::zeros(&[config.vocab_size, d]),
            encoder_positions: Tensor::zeros(&[config.max_positions, d]),
            decoder_positions: Tensor::zeros(&[config.max_positions, d]),
            encoder_layers: (0..config.enc_layers)
                .map(|_| EncoderLayer {
                    self_attn: attention(d),
                    self_attn_norm: layer_norm(d),
                    ffn: feed_forward(d, config.d_ff),
                    ffn_norm: layer_norm(d),
                })
                .collect(),
            decoder_layers: (0..config.dec_layers)
                .map(|_| DecoderLayer {
                    self_attn: attention(d),
                    self_attn_norm: layer_norm(d),
                    cross_attn: attention(d),
                    cross_attn_norm: layer_norm(d),
                    ffn: feed_forward(d, config.d_ff),
                    ffn_norm: layer_norm(d),
                })
                .collect(),
            encoder_final_norm: config.final_layer_norm.then(|| layer_norm(d)),
            decoder_final_norm: config.final_layer_norm.then(|| layer_norm(d)),
            classifier: (config.num_labels > 0).then(|| linear(d, config.num_labels)),
        }
    }

    /// Same shapes with every entry zero, layer-norm gains included. Used for gradients.
    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.for_each_mut(|_, _, t| t.data.iter_mut().for_each(|v| *v = T::zero()));
        g
    }

    /// Weights from N(0, 0.02²), biases zero, layer-norm gains one.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(config);
        p.for_each_mut(|_, role, t| {
            if role == TensorRole::Weight {
                for v in t.data.iter_mut() {
                    *v = T::lit(INIT_STD * standard_normal(rng));
                }
            }
        });
        p
    }

    /// Tensors in a fixed traversal order (not sorted).
    pub fn tensors(&self) -> Vec<(String, TensorRole, &Tensor<T>)> {
        let mut out = Vec::new();
        out.push(("embed_tokens".to_string(), TensorRole::Weight, &self.embed_tokens));
        out.push((
            "encoder.positions".to_string(),
            TensorRole::Weight,
            &self.encoder_positions,
        ));
        out.push((
            "decoder.positions".to_string(),
            TensorRole::Weight,
            &self.decoder_positions,
        ));
        for (i, l) in self.encoder_layers.iter().enumerate() {
            l.walk(&format!("encoder.layers.{i}"), &mut out);
        }
        for (i, l) in self.decoder_layers.iter().enumerate() {
            l.walk(&format!("decoder.layers.{i}"), &mut out);
        }
        if let Some(n) = &self.encoder_final_norm {
            n.walk("encoder.final_norm", &mut out);
        }
        if let Some(n) = &self.decoder_final_norm {
            n.walk("decoder.final_norm", &mut out);
        }
        if let Some(c) = &self.classifier {
            c.walk("classifier", &mut out);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, TensorRole, &mut Tensor<T>)> {
        let mut out = Vec::new();
        out.push(("embed_tokens".to_string(), TensorRole::Weight, &mut self.embed_tokens));
        out.push((
            "encoder.positions".to_string(),
            TensorRole::Weight,
            &mut self.encoder_positions,
        ));
        out.push((
            "decoder.positions".to_string(),
            TensorRole::Weight,
            &mut self.decoder_positions,
        ));
        for (i, l) in self.encoder_layers.iter_mut().enumerate() {
            l.walk_mut(&format!("encoder.layers.{i}"), &mut out);
        }
        for (i, l) in self.decoder_layers.iter_mut().enumerate() {
            l.walk_mut(&format!("decoder.layers.{i}"), &mut out);
        }
        if let Some(n) = &mut self.encoder_final_norm {
            n.walk_mut("encoder.final_norm", &mut out);
        }
        if let Some(n) = &mut self.decoder_final_norm {
            n.walk_mut("decoder.final_norm", &mut out);
        }
        if let Some(c) = &mut self.classifier {
            c.walk_mut("classifier", &mut out);
        }
        out
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, TensorRole, &mut Tensor<T>)) {
        for (name, role, t) in self.tensors_mut() {
            f(&name, role, t);
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    /// Elementwise `self += other`; shapes must agree.
    pub fn add_assign(&mut self, other: &Parameters<T>) {
        for ((_, _, a), (_, _, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            super::tensor::add_assign(&mut a.data, &b.data);
        }
    }

    pub fn scale(&mut self, s: T) {
        self.for_each_mut(|_, _, t| t.data.iter_mut().for_each(|v| *v *= s));
    }

    pub fn cast<U: Scalar>(&self) -> Parameters<U> {
        let mut out = Parameters::<U>::zeros(&self.config);
        for ((_, _, dst), (_, _, src)) in out.tensors_mut().into_iter().zip(self.tensors()) {
            *dst = src.cast();
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, _, t)| t.data.iter().all(|v| v.is_finite()))
    }

    /// Install a fresh classification head with `num_labels` outputs.
    pub fn with_classifier<R: Rng + ?Sized>(mut self, num_labels: usize, rng: &mut R) -> Self {
        self.config.num_labels = num_labels;
        let mut head = linear::<T>(self.config.d_model, num_labels);
        for v in head.weight.data.iter_mut() {
            *v = T::lit(INIT_STD * standard_normal(rng));
        }
        self.classifier = Some(head);
        self
    }

    /// Grow the token embedding to `vocab_size` rows; new rows are drawn like
    /// the original initialization. Existing rows are kept.
    pub fn resize_vocab<R: Rng + ?Sized>(&mut self, vocab_size: usize, rng: &mut R) {
        let d = self.config.d_model;
        let old = self.config.vocab_size;
        if vocab_size <= old {
            return;
        }
        self.embed_tokens.shape = vec![vocab_size, d];
        self.embed_tokens
            .data
            .extend((0..(vocab_size - old) * d).map(|_| T::lit(INIT_STD * standard_normal(rng))));
        self.config.vocab_size = vocab_size;
    }
}

/// Box-Muller draw from N(0, 1).
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

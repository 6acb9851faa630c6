//! Denoising sequence-to-sequence pre-training for code and natural language.
//!
//! The pipeline runs corpus ingestion ([`corpus`]), subword segmentation
//! ([`tokenizer`]), corruption ([`noising`]), smoothed language sampling
//! ([`sampler`]), an encoder-decoder transformer with hand-written gradients
//! ([`model`]), pre-training and fine-tuning loops ([`training`]) and
//! evaluation ([`metrics`], backed by the bundled [`minilang`] front end).

pub mod corpus;
pub mod error;
pub mod fixtures;
pub mod metrics;
pub mod minilang;
pub mod model;
pub mod noising;
pub mod sampler;
pub mod selfcheck;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};

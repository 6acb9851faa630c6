use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub max_positions: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    /// Extra layer normalization on the final encoder and decoder states.
    pub final_layer_norm: bool,
    /// Size of the classification head; 0 means generation only.
    #[serde(default)]
    pub num_labels: usize,
}

impl ModelConfig {
    /// Small model that trains on a CPU in minutes.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            enc_layers: 2,
            dec_layers: 2,
            d_model: 64,
            heads: 4,
            d_ff: 128,
            max_positions: 256,
            vocab_size,
            dropout: 0.1,
            final_layer_norm: true,
            num_labels: 0,
        }
    }

    /// Six encoder and six decoder layers of width 768 with 12 heads.
    pub fn full(vocab_size: usize) -> Self {
        ModelConfig {
            enc_layers: 6,
            dec_layers: 6,
            d_model: 768,
            heads: 12,
            d_ff: 3072,
            max_positions: 1024,
            vocab_size,
            dropout: 0.1,
            final_layer_norm: true,
            num_labels: 0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("enc_layers", self.enc_layers),
            ("dec_layers", self.dec_layers),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("d_ff", self.d_ff),
            ("max_positions", self.max_positions),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.num_labels == 1 {
            return Err(Error::Config("a classification head needs at least two labels".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        assert!(ModelConfig::desk(500).validate().is_ok());
        let full = ModelConfig::full(50_005);
        assert!(full.validate().is_ok());
        assert_eq!(
            (full.enc_layers, full.dec_layers, full.d_model, full.heads),
            (6, 6, 768, 12)
        );
        assert_eq!((full.d_ff, full.max_positions), (3072, 1024));
    }

    #[test]
    fn rejects_bad_heads() {
        let cfg = ModelConfig {
            heads: 5,
            ..ModelConfig::desk(100)
        };
        assert!(cfg.validate().is_err());
    }
}

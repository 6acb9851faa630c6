use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Pretrain,
    FinetuneGeneration,
    FinetuneClassification,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Mode::Pretrain),
            "finetune-generation" => Ok(Mode::FinetuneGeneration),
            "finetune-classification" => Ok(Mode::FinetuneClassification),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub peak_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub dropout_start: f64,
    /// `(fraction of total_steps, dropout from that step on)`, increasing.
    pub dropout_breakpoints: Vec<(f64, f64)>,
    pub seed: u64,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    /// Validation interval for fine-tuning; 0 evaluates only at the end.
    pub eval_every: usize,
    pub mode: Mode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_steps: 1000,
            warmup_steps: 0,
            peak_lr: 5e-4,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-6,
            batch_size: 32,
            dropout_start: 0.1,
            dropout_breakpoints: vec![(0.5, 0.05), (0.8, 0.0)],
            seed: 0,
            checkpoint_every: 0,
            eval_every: 0,
            mode: Mode::Pretrain,
        }
    }
}

impl TrainConfig {
    /// 100K pre-training steps over batches of 2048 instances.
    pub fn paper_pretrain() -> Self {
        TrainConfig {
            total_steps: 100_000,
            batch_size: 2048,
            peak_lr: 5e-5,
            checkpoint_every: 10_000,
            ..TrainConfig::default()
        }
    }

    /// Fine-tuning with 2500 warm-up steps and a 3e-5 peak rate.
    pub fn paper_finetune(mode: Mode) -> Self {
        TrainConfig {
            total_steps: 100_000,
            warmup_steps: 2500,
            peak_lr: 3e-5,
            batch_size: 32,
            eval_every: 5000,
            checkpoint_every: 5000,
            mode,
            ..TrainConfig::default()
        }
    }

    /// Fine-tuning peak rate listed in the hyper-parameter table.
    pub fn paper_finetune_table(mode: Mode) -> Self {
        TrainConfig {
            peak_lr: 5e-5,
            ..TrainConfig::paper_finetune(mode)
        }
    }

    pub fn desk() -> Self {
        TrainConfig {
            total_steps: 300,
            peak_lr: 3e-3,
            batch_size: 32,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be positive".into()));
        }
        if self.warmup_steps >= self.total_steps {
            return Err(Error::Config(format!(
                "warmup_steps {} must be below total_steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.peak_lr >= 0.0 && self.peak_lr.is_finite()) {
            return Err(Error::Config("peak_lr must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::Config(
                "adam betas must lie in [0, 1) and eps must be positive".into(),
            ));
        }
        let mut prev = -1.0;
        for &(frac, rate) in &self.dropout_breakpoints {
            if !(0.0..1.0).contains(&frac) || frac <= prev {
                return Err(Error::Config(
                    "dropout breakpoint fractions must be increasing within [0, 1)".into(),
                ));
            }
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::Config(format!("dropout {rate} outside [0, 1)")));
            }
            prev = frac;
        }
        if !(0.0..1.0).contains(&self.dropout_start) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout_start)));
        }
        Ok(())
    }
}

/// Linear warm-up to `peak_lr`, then linear decay to zero at `total_steps`.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    let step = step.min(cfg.total_steps);
    if step < cfg.warmup_steps {
        return cfg.peak_lr * (step as f64 / cfg.warmup_steps as f64);
    }
    let span = (cfg.total_steps - cfg.warmup_steps) as f64;
    cfg.peak_lr * ((cfg.total_steps - step) as f64 / span)
}

/// Piecewise-constant dropout. Fine-tuning keeps `dropout_start` throughout.
pub fn dropout_at(step: usize, cfg: &TrainConfig) -> f64 {
    if cfg.mode != Mode::Pretrain {
        return cfg.dropout_start;
    }
    let mut rate = cfg.dropout_start;
    for &(frac, r) in &cfg.dropout_breakpoints {
        let boundary = (frac * cfg.total_steps as f64 - 1e-9).ceil() as usize;
        if step >= boundary {
            rate = r;
        }
    }
    rate
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_endpoints() {
        let cfg = TrainConfig {
            total_steps: 10_000,
            warmup_steps: 2500,
            peak_lr: 3e-5,
            ..TrainConfig::default()
        };
        assert_eq!(lr_at(2500, &cfg), 3e-5);
        assert_eq!(lr_at(10_000, &cfg), 0.0);
        assert_eq!(lr_at(0, &cfg), 0.0);
        assert!((lr_at(1250, &cfg) - 1.5e-5).abs() < 1e-18);

        let flat = TrainConfig { warmup_steps: 0, ..cfg };
        assert_eq!(lr_at(0, &flat), 3e-5);
    }

    #[test]
    fn lr_is_continuous() {
        let cfg = TrainConfig {
            total_steps: 1000,
            warmup_steps: 100,
            peak_lr: 1.0,
            ..TrainConfig::default()
        };
        for s in 1..=1000 {
            assert!((lr_at(s, &cfg) - lr_at(s - 1, &cfg)).abs() <= 0.01 + 1e-12);
        }
    }

    #[test]
    fn dropout_breakpoints_full_scale() {
        let cfg = TrainConfig {
            total_steps: 100_000,
            ..TrainConfig::default()
        };
        assert_eq!(dropout_at(0, &cfg), 0.1);
        assert_eq!(dropout_at(49_999, &cfg), 0.1);
        assert_eq!(dropout_at(50_000, &cfg), 0.05);
        assert_eq!(dropout_at(79_999, &cfg), 0.05);
        assert_eq!(dropout_at(80_000, &cfg), 0.0);
    }

    #[test]
    fn dropout_breakpoints_scale_with_total() {
        let cfg = TrainConfig {
            total_steps: 1000,
            ..TrainConfig::default()
        };
        assert_eq!(dropout_at(499, &cfg), 0.1);
        assert_eq!(dropout_at(500, &cfg), 0.05);
        assert_eq!(dropout_at(799, &cfg), 0.05);
        assert_eq!(dropout_at(800, &cfg), 0.0);
    }

    #[test]
    fn finetune_dropout_is_constant() {
        let cfg = TrainConfig::paper_finetune(Mode::FinetuneGeneration);
        assert!([0, 50_000, 99_999].iter().all(|&s| dropout_at(s, &cfg) == 0.1));
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig::paper_pretrain().validate().is_ok());
        let bad = TrainConfig {
            warmup_steps: 1000,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            dropout_breakpoints: vec![(0.8, 0.0), (0.5, 0.05)],
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}

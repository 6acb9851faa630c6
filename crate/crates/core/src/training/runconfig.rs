//! Flat `key = value` run configuration.
//!
//! ```text
//! # comments run to end of line
//! include = desk
//! total_steps = 500
//! model.d_model = 128
//! noise.mask_ratio = 0.35
//! data.corpus.java = data/java.jsonl
//! ```
//!
//! Keys are applied top to bottom, so a key after `include` overrides the
//! preset. Bare keys are [`TrainConfig`] fields; `model.*`, `noise.*` and
//! `alpha` configure the other components; `data.*` keys are free-form paths
//! and names interpreted by the command that reads the file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::schedule::{Mode, TrainConfig};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::noising::NoiseConfig;
use crate::sampler::DEFAULT_ALPHA;

pub const PRESETS: [&str; 4] = ["desk", "paper-pretrain", "paper-finetune", "paper-finetune-table"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// `vocab_size` 0 means "take it from the vocabulary".
    pub model: ModelConfig,
    pub noise: NoiseConfig,
    pub alpha: f64,
    pub data: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            model: ModelConfig::desk(0),
            noise: NoiseConfig::default(),
            alpha: DEFAULT_ALPHA,
            data: BTreeMap::new(),
        }
    }
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<RunConfig> {
        let (train, model) = match name {
            "desk" => (TrainConfig::desk(), ModelConfig::desk(0)),
            "paper-pretrain" => (TrainConfig::paper_pretrain(), ModelConfig::full(0)),
            "paper-finetune" => (
                TrainConfig::paper_finetune(Mode::FinetuneGeneration),
                ModelConfig::full(0),
            ),
            "paper-finetune-table" => (
                TrainConfig::paper_finetune_table(Mode::FinetuneGeneration),
                ModelConfig::full(0),
            ),
            other => {
                return Err(Error::Config(format!(
                    "unknown preset {other:?}; expected one of {}",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(RunConfig {
            train,
            model,
            ..RunConfig::default()
        })
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {}", lineno + 1, strip_config(e))))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if key == "include" {
            let data = std::mem::take(&mut self.data);
            *self = RunConfig::preset(value)?;
            self.data = data;
            return Ok(());
        }
        if let Some(rest) = key.strip_prefix("data.") {
            if rest.is_empty() {
                return Err(Error::Config("empty data key".into()));
            }
            self.data.insert(rest.to_string(), value.to_string());
            return Ok(());
        }
        let t = &mut self.train;
        let m = &mut self.model;
        let n = &mut self.noise;
        match key {
            "total_steps" => t.total_steps = num(key, value)?,
            "warmup_steps" => t.warmup_steps = num(key, value)?,
            "peak_lr" => t.peak_lr = num(key, value)?,
            "beta1" => t.beta1 = num(key, value)?,
            "beta2" => t.beta2 = num(key, value)?,
            "eps" => t.eps = num(key, value)?,
            "batch_size" => t.batch_size = num(key, value)?,
            "dropout_start" => t.dropout_start = num(key, value)?,
            "dropout_breakpoints" => t.dropout_breakpoints = breakpoints(value)?,
            "seed" => t.seed = num(key, value)?,
            "checkpoint_every" => t.checkpoint_every = num(key, value)?,
            "eval_every" => t.eval_every = num(key, value)?,
            "mode" => t.mode = value.parse()?,
            "alpha" => self.alpha = num(key, value)?,
            "model.enc_layers" => m.enc_layers = num(key, value)?,
            "model.dec_layers" => m.dec_layers = num(key, value)?,
            "model.d_model" => m.d_model = num(key, value)?,
            "model.heads" => m.heads = num(key, value)?,
            "model.d_ff" => m.d_ff = num(key, value)?,
            "model.max_positions" => m.max_positions = num(key, value)?,
            "model.vocab_size" => m.vocab_size = num(key, value)?,
            "model.dropout" => m.dropout = num(key, value)?,
            "model.final_layer_norm" => m.final_layer_norm = num(key, value)?,
            "model.num_labels" => m.num_labels = num(key, value)?,
            "noise.mask_ratio" => n.mask_ratio = num(key, value)?,
            "noise.poisson_lambda" => n.poisson_lambda = num(key, value)?,
            "noise.strategy_weights" => n.strategy_weights = weights(value)?,
            "noise.max_span_attempts_factor" => n.max_span_attempts_factor = num(key, value)?,
            "noise.max_len" => n.max_len = num(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.noise.validate()?;
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        Ok(())
    }

    pub fn data(&self, key: &str) -> Result<&str> {
        self.data
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("missing data.{key}")))
    }

    /// Every key in the canonical order; parsing the output reproduces `self`.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let m = &self.model;
        let n = &self.noise;
        let bp: Vec<String> = t
            .dropout_breakpoints
            .iter()
            .map(|(f, r)| format!("{f:?}:{r:?}"))
            .collect();
        let sw: Vec<String> = n.strategy_weights.iter().map(|w| format!("{w:?}")).collect();
        let mode = match t.mode {
            Mode::Pretrain => "pretrain",
            Mode::FinetuneGeneration => "finetune-generation",
            Mode::FinetuneClassification => "finetune-classification",
        };
        let mut out = String::new();
        let pairs: Vec<(&str, String)> = vec![
            ("mode", mode.to_string()),
            ("total_steps", t.total_steps.to_string()),
            ("warmup_steps", t.warmup_steps.to_string()),
            ("peak_lr", format!("{:?}", t.peak_lr)),
            ("beta1", format!("{:?}", t.beta1)),
            ("beta2", format!("{:?}", t.beta2)),
            ("eps", format!("{:?}", t.eps)),
            ("batch_size", t.batch_size.to_string()),
            ("dropout_start", format!("{:?}", t.dropout_start)),
            ("dropout_breakpoints", bp.join(", ")),
            ("seed", t.seed.to_string()),
            ("checkpoint_every", t.checkpoint_every.to_string()),
            ("eval_every", t.eval_every.to_string()),
            ("alpha", format!("{:?}", self.alpha)),
            ("model.enc_layers", m.enc_layers.to_string()),
            ("model.dec_layers", m.dec_layers.to_string()),
            ("model.d_model", m.d_model.to_string()),
            ("model.heads", m.heads.to_string()),
            ("model.d_ff", m.d_ff.to_string()),
            ("model.max_positions", m.max_positions.to_string()),
            ("model.vocab_size", m.vocab_size.to_string()),
            ("model.dropout", format!("{:?}", m.dropout)),
            ("model.final_layer_norm", m.final_layer_norm.to_string()),
            ("model.num_labels", m.num_labels.to_string()),
            ("noise.mask_ratio", format!("{:?}", n.mask_ratio)),
            ("noise.poisson_lambda", format!("{:?}", n.poisson_lambda)),
            ("noise.strategy_weights", sw.join(", ")),
            ("noise.max_span_attempts_factor", n.max_span_attempts_factor.to_string()),
            ("noise.max_len", n.max_len.to_string()),
        ];
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        for (k, v) in &self.data {
            let _ = writeln!(out, "data.{k} = {v}");
        }
        out
    }
}

fn strip_config(e: Error) -> String {
    match e {
        Error::Config(msg) => msg,
        other => other.to_string(),
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn breakpoints(value: &str) -> Result<Vec<(f64, f64)>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|item| {
            let (f, r) = item
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("breakpoint {item:?} is not fraction:rate")))?;
            Ok((
                num("dropout_breakpoints", f.trim())?,
                num("dropout_breakpoints", r.trim())?,
            ))
        })
        .collect()
}

fn weights(value: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = value
        .split(',')
        .map(|w| num("noise.strategy_weights", w.trim()))
        .collect::<Result<_>>()?;
    parts
        .try_into()
        .map_err(|_| Error::Config("noise.strategy_weights needs three values".into()))
}

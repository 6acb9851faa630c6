use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::schedule::{dropout_at, lr_at, TrainConfig};
use crate::error::{Error, Result};
use crate::model::checkpoint::{self, decode_tensors, encode_tensors, params_from_tensors};
use crate::model::{Parameters, Tensor};

pub const MODEL_FILE: &str = "model.plbk";
pub const OPTIMIZER_FILE: &str = "optimizer.plbk";
pub const TRAINER_FILE: &str = "trainer.json";

/// What one update logs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub dropout: f64,
}

/// Parameters, optimizer moments and the one RNG that drives batches and
/// dropout. Everything needed to continue a run bit-exactly.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub params: Parameters<f32>,
    pub adam: AdamState<f32>,
    /// Completed updates.
    pub step: usize,
    pub rng: ChaCha8Rng,
}

#[derive(Serialize, Deserialize)]
struct TrainerFile {
    step: usize,
    adam_step: u64,
    rng_seed: [u8; 32],
    rng_stream: u64,
    /// u128 does not fit a JSON number.
    rng_word_pos: String,
    config: TrainConfig,
}

impl Trainer {
    pub fn new(params: Parameters<f32>, config: TrainConfig) -> Result<Trainer> {
        config.validate()?;
        params.config.validate()?;
        Ok(Trainer {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            adam: AdamState::new(&params),
            params,
            config,
            step: 0,
        })
    }

    pub fn finished(&self) -> bool {
        self.step >= self.config.total_steps
    }

    /// One scheduled update. `loss_fn` draws its batch from the rng it is
    /// given and returns the mean loss and gradients.
    pub fn update<F>(&mut self, loss_fn: F) -> Result<StepLog>
    where
        F: FnOnce(&Parameters<f32>, f64, &mut ChaCha8Rng) -> Result<(f32, Parameters<f32>)>,
    {
        let s = self.step;
        let lr = lr_at(s, &self.config);
        let dropout = dropout_at(s, &self.config);
        let (loss, grads) = loss_fn(&self.params, dropout, &mut self.rng)?;
        adam_step(
            &mut self.params,
            &grads,
            &mut self.adam,
            lr,
            (self.config.beta1, self.config.beta2),
            self.config.eps,
        )?;
        self.step += 1;
        Ok(StepLog {
            step: s,
            loss: loss as f64,
            lr,
            dropout,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        checkpoint::save(&self.params, dir.join(MODEL_FILE))?;
        let m = self.adam.m.tensors();
        let v = self.adam.v.tensors();
        let mut named: Vec<(String, &Tensor<f32>)> = Vec::new();
        for (name, _, t) in &m {
            named.push((format!("m.{name}"), *t));
        }
        for (name, _, t) in &v {
            named.push((format!("v.{name}"), *t));
        }
        let opt = encode_tensors(&self.params.config, &named)?;
        let path = dir.join(OPTIMIZER_FILE);
        std::fs::write(&path, opt).map_err(|e| Error::io(&path, e))?;
        let meta = TrainerFile {
            step: self.step,
            adam_step: self.adam.step,
            rng_seed: self.rng.get_seed(),
            rng_stream: self.rng.get_stream(),
            rng_word_pos: self.rng.get_word_pos().to_string(),
            config: self.config.clone(),
        };
        let path = dir.join(TRAINER_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Trainer> {
        let dir = dir.as_ref();
        let params = checkpoint::load(dir.join(MODEL_FILE))?;
        let path = dir.join(OPTIMIZER_FILE);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let (config, tensors): (_, BTreeMap<String, Tensor<f32>>) = decode_tensors(&bytes)?;
        if config != params.config {
            return Err(Error::Checkpoint("optimizer and model configs differ".into()));
        }
        let m = params_from_tensors(&config, &tensors, "m.")?;
        let v = params_from_tensors(&config, &tensors, "v.")?;
        let path = dir.join(TRAINER_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: TrainerFile = serde_json::from_str(&text)?;
        let word_pos: u128 = meta
            .rng_word_pos
            .parse()
            .map_err(|_| Error::Checkpoint("bad rng_word_pos".into()))?;
        let mut rng = ChaCha8Rng::from_seed(meta.rng_seed);
        rng.set_stream(meta.rng_stream);
        rng.set_word_pos(word_pos);
        Ok(Trainer {
            config: meta.config,
            params,
            adam: AdamState {
                step: meta.adam_step,
                m,
                v,
            },
            step: meta.step,
            rng,
        })
    }
}

/// Where a run writes. Both parts are optional so tests can run in memory.
#[derive(Default)]
pub struct RunOutput<'a> {
    /// Periodic checkpoints go to `dir/step-NNNNNNN`, the final state to
    /// `dir/last`.
    pub dir: Option<&'a Path>,
    /// One JSON object per update.
    pub log: Option<&'a mut dyn Write>,
}

impl RunOutput<'_> {
    pub(crate) fn after_step(&mut self, trainer: &Trainer, log: &StepLog) -> Result<()> {
        if let Some(w) = self.log.as_mut() {
            let line = serde_json::to_string(log)?;
            writeln!(w, "{line}").map_err(|e| Error::io("<training log>", e))?;
        }
        if let Some(dir) = self.dir {
            let every = trainer.config.checkpoint_every;
            if every > 0 && trainer.step.is_multiple_of(every) {
                trainer.save(dir.join(format!("step-{:07}", trainer.step)))?;
            }
            if trainer.finished() {
                trainer.save(dir.join("last"))?;
            }
        }
        Ok(())
    }
}

/// Trailing moving average; entry `i` averages `losses[i+1-window..=i]`.
pub fn smoothed_losses(losses: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || losses.len() < window {
        return Vec::new();
    }
    let mut sum: f64 = losses[..window].iter().sum();
    let mut out = vec![sum / window as f64];
    for i in window..losses.len() {
        sum += losses[i] - losses[i - window];
        out.push(sum / window as f64);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRise {
    /// Indices into the smoothed series.
    pub from: usize,
    pub to: usize,
    pub ratio: f64,
}

/// The first pair of smoothed points at most `span` apart where the later one
/// exceeds the earlier by more than `tolerance` (relative).
pub fn find_loss_rise(losses: &[f64], window: usize, span: usize, tolerance: f64) -> Option<LossRise> {
    let s = smoothed_losses(losses, window);
    for i in 0..s.len() {
        for j in i + 1..s.len().min(i + span + 1) {
            if s[j] > s[i] * (1.0 + tolerance) {
                return Some(LossRise {
                    from: i,
                    to: j,
                    ratio: s[j] / s[i],
                });
            }
        }
    }
    None
}

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::builders::GenerationExample;
use super::schedule::Mode;
use super::trainer::{RunOutput, Trainer};
use crate::corpus::truncate;
use crate::error::{Error, Result};
use crate::metrics::{corpus_bleu, exact_match, whitespace_tokens};
use crate::model::{classification_loss_and_grads, classify_batch, forward, greedy, loss_and_grads, Batch, Parameters};
use crate::noising::{corrupt, NoiseConfig, TrainingTriple};
use crate::sampler::{LanguageSampler, SamplingPlan};
use crate::tokenizer::{Vocabulary, PAD};

/// Encoded monolingual corpora keyed by language tag.
pub struct PretrainData<'a> {
    pub corpora: &'a BTreeMap<String, Vec<Vec<u32>>>,
    pub vocab: &'a Vocabulary,
    pub noise: &'a NoiseConfig,
    pub plan: &'a SamplingPlan,
}

/// Longest instance the model can take once the language id is prepended.
fn instance_limit(noise: &NoiseConfig, params: &Parameters<f32>) -> usize {
    noise.max_len.min(params.config.max_positions - 1)
}

/// Draw `batch_size` instances language-first and corrupt each.
pub fn pretrain_batch<R: Rng + ?Sized>(
    data: &PretrainData,
    sampler: &LanguageSampler,
    limit: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<TrainingTriple>> {
    (0..batch_size)
        .map(|_| {
            let (li, ii) = sampler.draw(rng);
            let lang = &sampler.languages()[li];
            let ids = truncate(&data.corpora[lang][ii], limit);
            corrupt(&ids, lang, data.noise, data.vocab, rng)
        })
        .collect()
}

/// Runs the trainer to `total_steps` on the denoising objective and returns
/// the loss of every update it performed.
pub fn pretrain(trainer: &mut Trainer, data: &PretrainData, out: &mut RunOutput) -> Result<Vec<f64>> {
    if trainer.config.mode != Mode::Pretrain {
        return Err(Error::Config("pretrain needs mode = pretrain".into()));
    }
    data.noise.validate()?;
    let sizes: BTreeMap<String, usize> = data.corpora.iter().map(|(k, v)| (k.clone(), v.len())).collect();
    let sampler = LanguageSampler::new(data.plan, &sizes)?;
    for lang in sampler.languages() {
        data.vocab.language_id(lang)?;
    }
    let limit = instance_limit(data.noise, &trainer.params);
    let batch_size = trainer.config.batch_size;
    let mut losses = Vec::new();
    while !trainer.finished() {
        let log = trainer.update(|p, dropout, rng| {
            let triples = pretrain_batch(data, &sampler, limit, batch_size, rng)?;
            loss_and_grads(
                p,
                &Batch::from_triples(&triples),
                dropout,
                Some(rng as &mut dyn RngCore),
            )
        })?;
        losses.push(log.loss);
        out.after_step(trainer, &log)?;
    }
    Ok(losses)
}

/// Teacher-forced argmax accuracy over non-pad targets: `(correct, total)`.
pub fn token_accuracy(params: &Parameters<f32>, batch: &Batch) -> Result<(usize, usize)> {
    let logits = forward(params, batch, 0.0, None)?;
    let v = params.config.vocab_size;
    let t = logits.shape[1];
    let mut correct = 0;
    let mut total = 0;
    for b in 0..batch.len() {
        for i in 0..t {
            let tgt = batch.targets[b][i];
            if !batch.decoder_mask[b][i] || tgt == PAD {
                continue;
            }
            let row = &logits.data[(b * t + i) * v..(b * t + i + 1) * v];
            total += 1;
            if argmax(row) == tgt as usize {
                correct += 1;
            }
        }
    }
    Ok((correct, total))
}

fn argmax(row: &[f32]) -> usize {
    row.iter()
        .enumerate()
        .fold(
            (0, f32::NEG_INFINITY),
            |best, (i, &v)| if v > best.1 { (i, v) } else { best },
        )
        .0
}

/// Corrupt every training instance once with `seed` and report the
/// reconstruction accuracy of the model on the result.
pub fn denoising_accuracy(params: &Parameters<f32>, data: &PretrainData, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let limit = instance_limit(data.noise, params);
    let mut triples = Vec::new();
    for (lang, instances) in data.corpora {
        for ids in instances {
            triples.push(corrupt(&truncate(ids, limit), lang, data.noise, data.vocab, &mut rng)?);
        }
    }
    let (c, t) = token_accuracy(params, &Batch::from_triples(&triples))?;
    Ok(if t == 0 { 0.0 } else { c as f64 / t as f64 })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FinetuneData {
    Generation(Vec<GenerationExample>),
    /// Ids from `build_classification_example` and a label.
    Classification(Vec<(Vec<u32>, usize)>),
}

impl FinetuneData {
    pub fn len(&self) -> usize {
        match self {
            FinetuneData::Generation(v) => v.len(),
            FinetuneData::Classification(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMetric {
    Bleu,
    ExactMatch,
    Accuracy,
}

impl SelectionMetric {
    pub fn check_mode(self, mode: Mode) -> Result<()> {
        let ok = matches!(
            (self, mode),
            (
                SelectionMetric::Bleu | SelectionMetric::ExactMatch,
                Mode::FinetuneGeneration
            ) | (SelectionMetric::Accuracy, Mode::FinetuneClassification)
        );
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "metric {self:?} does not apply to mode {mode:?}"
            )))
        }
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneReport {
    pub metric: SelectionMetric,
    pub best_step: usize,
    pub best_value: f64,
    /// `(completed updates, validation value)`
    pub history: Vec<(usize, f64)>,
    pub losses: Vec<f64>,
    pub best: Parameters<f32>,
}

/// Train to `total_steps`, validating every `eval_every` updates and after
/// the last one, and keep the parameters with the highest validation value
/// (earliest wins ties).
pub fn finetune(
    trainer: &mut Trainer,
    data: &FinetuneData,
    metric: SelectionMetric,
    evaluate: &mut dyn FnMut(&Parameters<f32>) -> Result<f64>,
    out: &mut RunOutput,
) -> Result<FinetuneReport> {
    let mode = trainer.config.mode;
    metric.check_mode(mode)?;
    match (data, mode) {
        (FinetuneData::Generation(_), Mode::FinetuneGeneration) => {}
        (FinetuneData::Classification(_), Mode::FinetuneClassification) => {
            if trainer.params.classifier.is_none() {
                return Err(Error::Config(
                    "classification fine-tuning needs a classifier head".into(),
                ));
            }
        }
        _ => return Err(Error::Config(format!("data does not match mode {mode:?}"))),
    }
    if data.is_empty() {
        return Err(Error::EmptyInput("fine-tuning data"));
    }
    let batch_size = trainer.config.batch_size.min(data.len());
    let every = trainer.config.eval_every;
    let mut best: Option<(usize, f64, Parameters<f32>)> = None;
    let mut history = Vec::new();
    let mut losses = Vec::new();
    while !trainer.finished() {
        let log = trainer.update(|p, dropout, rng| {
            let picks = sample(rng, data.len(), batch_size).into_vec();
            match data {
                FinetuneData::Generation(ex) => {
                    let rows: Vec<_> = picks.iter().map(|&i| ex[i].row()).collect();
                    loss_and_grads(p, &Batch::from_rows(&rows), dropout, Some(rng as &mut dyn RngCore))
                }
                FinetuneData::Classification(ex) => {
                    let ids: Vec<Vec<u32>> = picks.iter().map(|&i| ex[i].0.clone()).collect();
                    let labels: Vec<usize> = picks.iter().map(|&i| ex[i].1).collect();
                    classification_loss_and_grads(
                        p,
                        &Batch::classification(&ids),
                        &labels,
                        dropout,
                        Some(rng as &mut dyn RngCore),
                    )
                }
            }
        })?;
        losses.push(log.loss);
        out.after_step(trainer, &log)?;
        let due = (every > 0 && trainer.step.is_multiple_of(every)) || trainer.finished();
        if due {
            let value = evaluate(&trainer.params)?;
            history.push((trainer.step, value));
            if best.as_ref().is_none_or(|b| value > b.1) {
                best = Some((trainer.step, value, trainer.params.clone()));
                if let Some(dir) = out.dir {
                    crate::model::checkpoint::save(&trainer.params, dir.join("best.plbk"))?;
                }
            }
        }
    }
    let (best_step, best_value, best) = match best {
        Some(b) => b,
        None => {
            // resumed at or past the end: validate what we have
            let value = evaluate(&trainer.params)?;
            history.push((trainer.step, value));
            (trainer.step, value, trainer.params.clone())
        }
    };
    Ok(FinetuneReport {
        metric,
        best_step,
        best_value,
        history,
        losses,
        best,
    })
}

/// Greedy decodes of every example, as ids without language prefix or `</s>`.
pub fn greedy_outputs(
    params: &Parameters<f32>,
    examples: &[GenerationExample],
    max_len: usize,
) -> Result<Vec<Vec<u32>>> {
    examples
        .iter()
        .map(|ex| Ok(greedy(params, &ex.encoder_input, ex.decoder_input[0], max_len)?.tokens))
        .collect()
}

/// Corpus BLEU (percent) of greedy decodes against the example targets,
/// compared as whitespace tokens of the detokenized text.
pub fn generation_bleu(
    params: &Parameters<f32>,
    examples: &[GenerationExample],
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<f64> {
    let hyps: Vec<String> = greedy_outputs(params, examples, max_len)?
        .iter()
        .map(|ids| vocab.decode(ids))
        .collect();
    let refs: Vec<String> = examples.iter().map(|ex| vocab.decode(ex.reference())).collect();
    let h: Vec<Vec<&str>> = hyps.iter().map(|s| whitespace_tokens(s)).collect();
    let r: Vec<Vec<&str>> = refs.iter().map(|s| whitespace_tokens(s)).collect();
    corpus_bleu(&h, &r)
}

/// Exact match of greedy decodes, compared on ids.
pub fn generation_exact_match(params: &Parameters<f32>, examples: &[GenerationExample], max_len: usize) -> Result<f64> {
    let hyps = greedy_outputs(params, examples, max_len)?;
    let refs: Vec<Vec<u32>> = examples.iter().map(|ex| ex.reference().to_vec()).collect();
    exact_match(&hyps, &refs)
}

pub fn predict_labels(params: &Parameters<f32>, inputs: &[Vec<u32>]) -> Result<Vec<usize>> {
    Ok(classify_batch(params, &Batch::classification(inputs))?
        .iter()
        .map(|row| argmax(row))
        .collect())
}

pub fn classification_accuracy(params: &Parameters<f32>, examples: &[(Vec<u32>, usize)]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("classification examples"));
    }
    let inputs: Vec<Vec<u32>> = examples.iter().map(|e| e.0.clone()).collect();
    let predicted = predict_labels(params, &inputs)?;
    let correct = predicted.iter().zip(examples).filter(|(p, e)| **p == e.1).count();
    Ok(correct as f64 / examples.len() as f64)
}

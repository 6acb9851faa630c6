//! Autoregressive decoding: greedy and beam search.

use super::network::{decode, encode, log_softmax_in_place, project};
use super::params::Parameters;
use super::tensor::Scalar;
use crate::error::{Error, Result};
use crate::tokenizer::{EOS, PAD};

#[derive(Debug, Clone, PartialEq)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub max_len: usize,
    /// Hypotheses are ranked by `log_prob / len^length_penalty`.
    pub length_penalty: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_size: 5,
            max_len: 128,
            length_penalty: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated ids without the language prefix and without `</s>`.
    pub tokens: Vec<u32>,
    /// Sum of token log-probabilities, including `</s>` when it was produced.
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    fn scored_len(&self) -> usize {
        self.tokens.len() + usize::from(self.finished)
    }

    pub fn score(&self, length_penalty: f64) -> f64 {
        let len = self.scored_len().max(1) as f64;
        self.log_prob / len.powf(length_penalty)
    }
}

struct Decoder<'a, T: Scalar> {
    params: &'a Parameters<T>,
    memory: Vec<T>,
    memory_mask: Vec<bool>,
}

impl<'a, T: Scalar> Decoder<'a, T> {
    fn new(params: &'a Parameters<T>, source: &[u32]) -> Result<Self> {
        let cfg = &params.config;
        if source.len() > cfg.max_positions {
            return Err(Error::PositionOverflow {
                len: source.len(),
                limit: cfg.max_positions,
            });
        }
        if let Some(&id) = source.iter().find(|&&id| id as usize >= cfg.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id,
                vocab_size: cfg.vocab_size,
            });
        }
        let memory_mask = vec![true; source.len()];
        let (memory, _) = encode(params, source, &memory_mask, 0.0, None);
        Ok(Decoder {
            params,
            memory,
            memory_mask,
        })
    }

    /// Log-probabilities of the next token after `prefix`.
    fn next_log_probs(&self, prefix: &[u32]) -> Vec<f64> {
        let mask = vec![true; prefix.len()];
        let (states, _) = decode(self.params, prefix, &mask, &self.memory, &self.memory_mask, 0.0, None);
        let d = self.params.config.d_model;
        let last = &states[(prefix.len() - 1) * d..];
        let mut logits = project(self.params, last, 1);
        log_softmax_in_place(&mut logits);
        let mut out: Vec<f64> = logits.iter().map(|v| v.as_f64()).collect();
        out[PAD as usize] = f64::NEG_INFINITY;
        out
    }
}

fn effective_max_len<T: Scalar>(p: &Parameters<T>, max_len: usize) -> usize {
    max_len.min(p.config.max_positions.saturating_sub(1))
}

fn greedy_from<T: Scalar>(dec: &Decoder<'_, T>, lang_id: u32, max_len: usize) -> Hypothesis {
    let mut prefix = vec![lang_id];
    let mut log_prob = 0.0;
    let mut finished = false;
    while prefix.len() - 1 < max_len {
        let lp = dec.next_log_probs(&prefix);
        let (best, &best_lp) =
            lp.iter().enumerate().fold(
                (0, &f64::NEG_INFINITY),
                |acc, (i, v)| if *v > *acc.1 { (i, v) } else { acc },
            );
        log_prob += best_lp;
        if best as u32 == EOS {
            finished = true;
            break;
        }
        prefix.push(best as u32);
    }
    Hypothesis {
        tokens: prefix[1..].to_vec(),
        log_prob,
        finished,
    }
}

/// Greedy argmax decoding starting from `[target_lang_id]`.
pub fn greedy<T: Scalar>(p: &Parameters<T>, source: &[u32], target_lang_id: u32, max_len: usize) -> Result<Hypothesis> {
    let dec = Decoder::new(p, source)?;
    Ok(greedy_from(&dec, target_lang_id, effective_max_len(p, max_len)))
}

/// Beam search. The greedy hypothesis always competes in the final ranking,
/// so the result never scores below greedy decoding.
pub fn beam_search<T: Scalar>(
    p: &Parameters<T>,
    source: &[u32],
    target_lang_id: u32,
    cfg: &BeamConfig,
) -> Result<Hypothesis> {
    if cfg.beam_size == 0 {
        return Err(Error::Config("beam_size must be at least 1".into()));
    }
    let dec = Decoder::new(p, source)?;
    let max_len = effective_max_len(p, cfg.max_len);
    let greedy = greedy_from(&dec, target_lang_id, max_len);
    if cfg.beam_size == 1 {
        return Ok(greedy);
    }

    let mut live: Vec<(Vec<u32>, f64)> = vec![(vec![target_lang_id], 0.0)];
    let mut done: Vec<Hypothesis> = vec![greedy];
    for _ in 0..max_len {
        let mut candidates: Vec<(usize, u32, f64)> = Vec::new();
        for (bi, (prefix, lp)) in live.iter().enumerate() {
            let next = dec.next_log_probs(prefix);
            let mut order: Vec<usize> = (0..next.len()).filter(|&t| next[t].is_finite()).collect();
            order.sort_by(|&a, &b| next[b].total_cmp(&next[a]).then(a.cmp(&b)));
            for &t in order.iter().take(cfg.beam_size) {
                candidates.push((bi, t as u32, lp + next[t]));
            }
        }
        candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
        let mut next_live = Vec::new();
        for (bi, tok, lp) in candidates.into_iter().take(cfg.beam_size) {
            let prefix = &live[bi].0;
            if tok == EOS {
                done.push(Hypothesis {
                    tokens: prefix[1..].to_vec(),
                    log_prob: lp,
                    finished: true,
                });
            } else {
                let mut np = prefix.clone();
                np.push(tok);
                next_live.push((np, lp));
            }
        }
        live = next_live;
        if live.is_empty() {
            break;
        }
    }
    done.extend(live.into_iter().map(|(prefix, lp)| Hypothesis {
        tokens: prefix[1..].to_vec(),
        log_prob: lp,
        finished: false,
    }));
    let best = done
        .into_iter()
        .reduce(|a, b| {
            if b.score(cfg.length_penalty) > a.score(cfg.length_penalty) {
                b
            } else {
                a
            }
        })
        .expect("greedy hypothesis is always present");
    Ok(best)
}

/// Decode `source` into target ids (language id and `</s>` excluded).
pub fn generate<T: Scalar>(
    p: &Parameters<T>,
    source: &[u32],
    target_lang_id: u32,
    beam_size: usize,
    max_len: usize,
) -> Result<Vec<u32>> {
    let cfg = BeamConfig {
        beam_size,
        max_len,
        ..BeamConfig::default()
    };
    Ok(beam_search(p, source, target_lang_id, &cfg)?.tokens)
}

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// The declared tokenization for BLEU and exact match.
pub fn whitespace_tokens(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

pub(crate) fn ngram_counts<W: Eq + Hash>(tokens: &[W], n: usize) -> HashMap<&[W], usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *out.entry(g).or_insert(0) += 1;
        }
    }
    out
}

/// `(clipped matches, candidate n-grams)` for one order.
pub(crate) fn clipped<W: Eq + Hash>(hyp: &[W], reference: &[W], n: usize) -> (usize, usize) {
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    let matched = h.iter().map(|(g, c)| (*c).min(r.get(g).copied().unwrap_or(0))).sum();
    (matched, hyp.len().saturating_sub(n - 1))
}

pub(crate) fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len == 0 {
        0.0
    } else if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

/// Geometric mean of per-order precisions; an order with no candidate
/// n-grams contributes 1, a zero precision makes the mean 0.
pub(crate) fn geometric_mean(precisions: &[f64]) -> f64 {
    if precisions.iter().any(|&p| p <= 0.0) {
        return 0.0;
    }
    (precisions.iter().map(|p| p.ln()).sum::<f64>() / precisions.len() as f64).exp()
}

fn check_lengths<A, B>(hyps: &[A], refs: &[B]) -> Result<()> {
    if hyps.is_empty() {
        return Err(Error::Metric("no hypotheses".into()));
    }
    if hyps.len() != refs.len() {
        return Err(Error::Metric(format!(
            "{} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    Ok(())
}

/// Corpus BLEU-4 in percent: clipped counts are pooled over the corpus
/// before the precisions are formed, without smoothing.
pub fn corpus_bleu<W: Eq + Hash>(hypotheses: &[Vec<W>], references: &[Vec<W>]) -> Result<f64> {
    check_lengths(hypotheses, references)?;
    let mut matched = [0usize; MAX_ORDER];
    let mut total = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hypotheses.iter().zip(references) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=MAX_ORDER {
            let (m, t) = clipped(h, r, n);
            matched[n - 1] += m;
            total[n - 1] += t;
        }
    }
    let precisions: Vec<f64> = (0..MAX_ORDER)
        .map(|i| {
            if total[i] == 0 {
                1.0
            } else {
                matched[i] as f64 / total[i] as f64
            }
        })
        .collect();
    Ok(100.0 * brevity_penalty(hyp_len, ref_len) * geometric_mean(&precisions))
}

/// Sentence BLEU-4 in percent with add-one smoothing on orders 2–4.
pub fn smoothed_bleu4<W: Eq + Hash>(hypothesis: &[W], reference: &[W]) -> f64 {
    let precisions: Vec<f64> = (1..=MAX_ORDER)
        .map(|n| {
            let (m, t) = clipped(hypothesis, reference, n);
            if t == 0 {
                1.0
            } else if n == 1 {
                m as f64 / t as f64
            } else {
                (m + 1) as f64 / (t + 1) as f64
            }
        })
        .collect();
    100.0 * brevity_penalty(hypothesis.len(), reference.len()) * geometric_mean(&precisions)
}

/// Fraction of pairs that are equal.
pub fn exact_match<W: PartialEq>(hypotheses: &[W], references: &[W]) -> Result<f64> {
    check_lengths(hypotheses, references)?;
    let hits = hypotheses.iter().zip(references).filter(|(h, r)| h == r).count();
    Ok(hits as f64 / hypotheses.len() as f64)
}

/// Exact match on text after collapsing whitespace runs and trimming.
pub fn exact_match_text<S: AsRef<str>>(hypotheses: &[S], references: &[S]) -> Result<f64> {
    let norm = |v: &[S]| -> Vec<Vec<String>> {
        v.iter()
            .map(|s| whitespace_tokens(s.as_ref()).into_iter().map(str::to_string).collect())
            .collect()
    };
    exact_match(&norm(hypotheses), &norm(references))
}

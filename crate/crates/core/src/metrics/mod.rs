//! Evaluation metrics. BLEU values are percentages on [0, 100]; exact match,
//! accuracy and CodeBLEU are ratios on [0, 1].
//!
//! BLEU and exact match compare whitespace tokens of detokenized text.
//! CodeBLEU tokenizes with the language profile's lexer.

mod bleu;
mod codebleu;
mod report;

pub use bleu::{corpus_bleu, exact_match, exact_match_text, smoothed_bleu4, whitespace_tokens, MAX_ORDER};
pub use codebleu::{
    codebleu, corpus_codebleu, weighted_ngram_match, CodeBleuWeights, LanguageProfile, MiniProfile,
    DEFAULT_KEYWORD_WEIGHT, DEFAULT_WEIGHTS,
};
pub use report::{MetricReport, Scale};

/// Share of predictions equal to their labels.
pub fn accuracy(predicted: &[usize], labels: &[usize]) -> crate::Result<f64> {
    exact_match(predicted, labels)
}

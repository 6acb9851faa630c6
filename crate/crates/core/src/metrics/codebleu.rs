use std::collections::HashSet;

use super::bleu::{brevity_penalty, geometric_mean, ngram_counts, MAX_ORDER};
use super::report::MetricReport;
use crate::error::{Error, Result};
use crate::minilang;

pub const DEFAULT_KEYWORD_WEIGHT: f64 = 5.0;
pub const DEFAULT_WEIGHTS: CodeBleuWeights = CodeBleuWeights([0.25; 4]);

/// Weights of (n-gram, weighted n-gram, AST match, dataflow match).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodeBleuWeights(pub [f64; 4]);

impl CodeBleuWeights {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.0.iter().sum();
        if self.0.iter().any(|w| w.is_nan() || *w < 0.0) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Metric(format!(
                "CodeBLEU weights must be non-negative and sum to 1, got {:?}",
                self.0
            )));
        }
        Ok(())
    }
}

/// What CodeBLEU needs from a programming language.
pub trait LanguageProfile {
    type Tree;
    type Flow;

    fn name(&self) -> &str;
    fn keywords(&self) -> &[&str];
    fn tokenize(&self, source: &str) -> Vec<String>;
    fn parse(&self, source: &str) -> std::result::Result<Self::Tree, String>;
    fn ast_match(&self, candidate: &Self::Tree, reference: &Self::Tree) -> f64;
    fn dataflow(&self, tree: &Self::Tree) -> Self::Flow;
    fn dataflow_match(&self, candidate: &Self::Flow, reference: &Self::Flow) -> f64;
}

/// The bundled mini-language.
#[derive(Debug, Clone, Copy, Default)]
pub struct MiniProfile;

impl LanguageProfile for MiniProfile {
    type Tree = minilang::Node;
    type Flow = minilang::DataflowGraph;

    fn name(&self) -> &str {
        "mini"
    }

    fn keywords(&self) -> &[&str] {
        &minilang::KEYWORDS
    }

    fn tokenize(&self, source: &str) -> Vec<String> {
        minilang::tokenize_lenient(source)
    }

    fn parse(&self, source: &str) -> std::result::Result<Self::Tree, String> {
        minilang::parse(source).map_err(|e| e.to_string())
    }

    fn ast_match(&self, candidate: &Self::Tree, reference: &Self::Tree) -> f64 {
        minilang::ast_match(candidate, reference)
    }

    fn dataflow(&self, tree: &Self::Tree) -> Self::Flow {
        minilang::extract_dataflow(tree)
    }

    fn dataflow_match(&self, candidate: &Self::Flow, reference: &Self::Flow) -> f64 {
        minilang::dataflow_match(candidate, reference)
    }
}

/// Keyword-weighted clipped n-gram precision on [0, 1]: an n-gram containing
/// a keyword counts `keyword_weight` times. Orders 2–4 get add-one
/// smoothing; the brevity penalty applies as in BLEU.
pub fn weighted_ngram_match<W: AsRef<str>>(
    hyp: &[W],
    reference: &[W],
    keywords: &[&str],
    keyword_weight: f64,
) -> Result<f64> {
    if keyword_weight.is_nan() || keyword_weight < 1.0 {
        return Err(Error::Metric(format!(
            "keyword_weight must be at least 1, got {keyword_weight}"
        )));
    }
    let hyp: Vec<&str> = hyp.iter().map(AsRef::as_ref).collect();
    let reference: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let keywords: HashSet<&str> = keywords.iter().copied().collect();
    let mut precisions = Vec::with_capacity(MAX_ORDER);
    for n in 1..=MAX_ORDER {
        let h = ngram_counts(&hyp, n);
        if h.is_empty() {
            precisions.push(1.0);
            continue;
        }
        let r = ngram_counts(&reference, n);
        let (mut num, mut den) = (0.0, 0.0);
        for (gram, count) in &h {
            let w = if gram.iter().any(|t| keywords.contains(t)) {
                keyword_weight
            } else {
                1.0
            };
            num += w * (*count).min(r.get(gram).copied().unwrap_or(0)) as f64;
            den += w * *count as f64;
        }
        precisions.push(if n == 1 { num / den } else { (num + 1.0) / (den + 1.0) });
    }
    Ok(brevity_penalty(hyp.len(), reference.len()) * geometric_mean(&precisions))
}

/// Composite score of one hypothesis. An unparseable hypothesis scores 0 on
/// the AST and dataflow components; an unparseable reference is an error.
pub fn codebleu<P: LanguageProfile>(
    hypothesis: &str,
    reference: &str,
    profile: &P,
    weights: CodeBleuWeights,
    keyword_weight: f64,
) -> Result<MetricReport> {
    weights.validate()?;
    let ref_tree = profile
        .parse(reference)
        .map_err(|e| Error::Metric(format!("reference does not parse: {e}")))?;
    let hyp_tokens = profile.tokenize(hypothesis);
    let ref_tokens = profile.tokenize(reference);
    let ngram = weighted_ngram_match(&hyp_tokens, &ref_tokens, &[], 1.0)?;
    let weighted = weighted_ngram_match(&hyp_tokens, &ref_tokens, profile.keywords(), keyword_weight)?;
    let (syntax, flow) = match profile.parse(hypothesis) {
        Ok(tree) => (
            profile.ast_match(&tree, &ref_tree),
            profile.dataflow_match(&profile.dataflow(&tree), &profile.dataflow(&ref_tree)),
        ),
        Err(_) => (0.0, 0.0),
    };
    let parts = [ngram, weighted, syntax, flow];
    let value = weights.0.iter().zip(parts).map(|(w, c)| w * c).sum();
    Ok(MetricReport::composite(
        "codebleu",
        value,
        vec![
            ("ngram_match".into(), parts[0]),
            ("weighted_ngram_match".into(), parts[1]),
            ("ast_match".into(), parts[2]),
            ("dataflow_match".into(), parts[3]),
        ],
        weights.0.to_vec(),
    ))
}

/// Mean composite over hypothesis/reference pairs; components are averaged
/// the same way so the weighted-sum identity still holds.
pub fn corpus_codebleu<P: LanguageProfile, S: AsRef<str>>(
    hypotheses: &[S],
    references: &[S],
    profile: &P,
    weights: CodeBleuWeights,
    keyword_weight: f64,
) -> Result<MetricReport> {
    if hypotheses.is_empty() || hypotheses.len() != references.len() {
        return Err(Error::Metric(format!(
            "need equal non-zero counts, got {} hypotheses and {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut sums = [0.0; 4];
    for (h, r) in hypotheses.iter().zip(references) {
        let rep = codebleu(h.as_ref(), r.as_ref(), profile, weights, keyword_weight)?;
        for (s, (_, c)) in sums.iter_mut().zip(&rep.components) {
            *s += c;
        }
    }
    let n = hypotheses.len() as f64;
    let parts = sums.map(|s| s / n);
    let value = weights.0.iter().zip(parts).map(|(w, c)| w * c).sum();
    let names = ["ngram_match", "weighted_ngram_match", "ast_match", "dataflow_match"];
    Ok(MetricReport::composite(
        "codebleu",
        value,
        names.iter().map(|s| s.to_string()).zip(parts).collect(),
        weights.0.to_vec(),
    ))
}

#[cfg(test)]
mod tests {
    use super::super::bleu::{smoothed_bleu4, whitespace_tokens};
    use super::*;

    const KW: [&str; 5] = minilang::KEYWORDS;

    fn ws(s: &str) -> Vec<&str> {
        whitespace_tokens(s)
    }

    #[test]
    fn weight_one_is_plain_smoothed_bleu() {
        let pairs = [
            ("if x > 0 : return y", "if x > 0 : return x"),
            ("a b c", "a b d"),
            ("a", "a b c d e"),
        ];
        for (h, r) in pairs {
            let plain = smoothed_bleu4(&ws(h), &ws(r)) / 100.0;
            let w1 = weighted_ngram_match(&ws(h), &ws(r), &KW, 1.0).unwrap();
            assert!((plain - w1).abs() < 1e-12);
            let none = weighted_ngram_match(&ws(h), &ws(r), &[], 5.0).unwrap();
            assert!((plain - none).abs() < 1e-12);
        }
    }

    #[test]
    fn keyword_change_costs_more() {
        let reference = ws("if x > 0 : return x");
        let ident = weighted_ngram_match(&ws("if x > 0 : return y"), &reference, &KW, 5.0).unwrap();
        let keyword = weighted_ngram_match(&ws("while x > 0 : return x"), &reference, &KW, 5.0).unwrap();
        assert!(keyword < ident, "{keyword} vs {ident}");
        // by hand: unigram precision (5+1+1+1+1+5+0)/(5+1+1+1+1+5+1) = 14/15 for the identifier change
        let p1: f64 = 14.0 / 15.0;
        let p2: f64 = (5.0 + 1.0 + 1.0 + 1.0 + 5.0 + 1.0) / (5.0 + 1.0 + 1.0 + 1.0 + 5.0 + 5.0 + 1.0);
        let p3: f64 = (5.0 + 1.0 + 1.0 + 5.0 + 1.0) / (5.0 + 1.0 + 1.0 + 5.0 + 5.0 + 1.0);
        let p4: f64 = (5.0 + 1.0 + 5.0 + 1.0) / (5.0 + 1.0 + 5.0 + 5.0 + 1.0);
        let expected = (p1 * p2 * p3 * p4).powf(0.25);
        assert!((ident - expected).abs() < 1e-12);
    }

    #[test]
    fn keyword_weight_below_one_rejected() {
        assert!(weighted_ngram_match(&ws("a"), &ws("a"), &KW, 0.5).is_err());
    }

    #[test]
    fn identical_program_scores_one() {
        let src = "fn f(x){ y = x + 1; return y; }";
        let r = codebleu(src, src, &MiniProfile, DEFAULT_WEIGHTS, DEFAULT_KEYWORD_WEIGHT).unwrap();
        assert!(r.components.iter().all(|(_, c)| (*c - 1.0).abs() < 1e-12));
        assert!((r.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn renamed_variables() {
        let reference = "fn f(x){ y = x * 2; if y > 3 { y = 0; } return y + x; }";
        let renamed = "fn f(a){ b = a * 2; if b > 3 { b = 0; } return b + a; }";
        let r = codebleu(
            renamed,
            reference,
            &MiniProfile,
            DEFAULT_WEIGHTS,
            DEFAULT_KEYWORD_WEIGHT,
        )
        .unwrap();
        let c: Vec<f64> = r.components.iter().map(|c| c.1).collect();
        assert_eq!(c[2], 1.0);
        assert_eq!(c[3], 1.0);
        assert!(c[0] < 1.0 && c[1] < 1.0);
        assert!(r.value > 0.0 && r.value < 1.0);
        let sum: f64 = c.iter().map(|x| 0.25 * x).sum();
        assert!((r.value - sum).abs() < 1e-9);
    }

    #[test]
    fn parse_failure_falls_back() {
        let reference = "fn f(x){ return x; }";
        let r = codebleu("fn f(x){ return x", reference, &MiniProfile, DEFAULT_WEIGHTS, 5.0).unwrap();
        assert_eq!((r.components[2].1, r.components[3].1), (0.0, 0.0));
        assert!(r.components[0].1 > 0.0);
        assert!(codebleu(reference, "fn (", &MiniProfile, DEFAULT_WEIGHTS, 5.0).is_err());
    }

    #[test]
    fn trailing_whitespace_is_ignored() {
        let a = codebleu("x = 1;", "x = 2;", &MiniProfile, DEFAULT_WEIGHTS, 5.0).unwrap();
        let b = codebleu("x = 1;  \n", "x = 2;\t", &MiniProfile, DEFAULT_WEIGHTS, 5.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn weights_are_validated() {
        assert!(CodeBleuWeights([0.5, 0.5, 0.0, 0.0]).validate().is_ok());
        assert!(CodeBleuWeights([0.5, 0.6, 0.0, -0.1]).validate().is_err());
        assert!(CodeBleuWeights([0.3, 0.3, 0.3, 0.3]).validate().is_err());
    }

    #[test]
    fn corpus_average_keeps_identity() {
        let h = ["x = 1;", "fn f(a){ return a; }"];
        let r = ["x = 2;", "fn f(b){ return b; }"];
        let rep = corpus_codebleu(&h, &r, &MiniProfile, DEFAULT_WEIGHTS, 5.0).unwrap();
        let sum: f64 = rep.components.iter().map(|c| 0.25 * c.1).sum();
        assert!((rep.value - sum).abs() < 1e-9);
    }
}

//! Corruption of token sequences for denoising pre-training.
//!
//! Three strategies are available: masking (positions replaced by `<mask>`),
//! deletion (positions dropped) and infilling (Poisson-length spans each
//! collapsed into a single `<mask>`). Every instance is corrupted by exactly
//! one strategy, picked by [`NoiseConfig::strategy_weights`].

use std::collections::BTreeSet;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::truncate;
use crate::error::{Error, Result};
use crate::tokenizer::{Vocabulary, EOS, MASK};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub mask_ratio: f64,
    pub poisson_lambda: f64,
    /// Relative weights of (masking, deletion, infilling).
    pub strategy_weights: [f64; 3],
    pub max_span_attempts_factor: usize,
    /// Instances are cut to this many tokens before corruption.
    pub max_len: usize,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            mask_ratio: 0.35,
            poisson_lambda: 3.5,
            strategy_weights: [1.0, 1.0, 1.0],
            max_span_attempts_factor: 10,
            max_len: 512,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return Err(Error::Config(format!("mask_ratio {} outside [0, 1]", self.mask_ratio)));
        }
        if !(self.poisson_lambda > 0.0 && self.poisson_lambda.is_finite()) {
            return Err(Error::Config(format!(
                "poisson_lambda must be positive, got {}",
                self.poisson_lambda
            )));
        }
        let sum: f64 = self.strategy_weights.iter().sum();
        if self.strategy_weights.iter().any(|w| *w < 0.0 || !w.is_finite()) || sum <= 0.0 {
            return Err(Error::Config(format!(
                "strategy_weights must be non-negative with a positive sum, got {:?}",
                self.strategy_weights
            )));
        }
        if self.max_span_attempts_factor == 0 || self.max_len == 0 {
            return Err(Error::Config(
                "max_span_attempts_factor and max_len must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Masking,
    Deletion,
    Infilling,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingTriple {
    pub encoder_input: Vec<u32>,
    /// `[lang_id] ++ x`
    pub decoder_input: Vec<u32>,
    /// `x ++ [eos]`
    pub target: Vec<u32>,
    pub strategy: Strategy,
}

/// Number of tokens a ratio selects out of `len`, rounding halves up.
pub fn noise_budget(ratio: f64, len: usize) -> usize {
    ((ratio * len as f64 + 0.5 + 1e-9).floor() as usize).min(len)
}

/// Knuth's product-of-uniforms Poisson sampler; exact for the small rates
/// used for span lengths.
pub fn sample_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> usize {
    let limit = (-lambda).exp();
    let mut k = 0;
    let mut p: f64 = rng.gen();
    while p > limit {
        k += 1;
        p *= rng.gen::<f64>();
    }
    k
}

pub fn poisson_pmf(k: usize, lambda: f64) -> f64 {
    let log_fact: f64 = (1..=k).map(|i| (i as f64).ln()).sum();
    (k as f64 * lambda.ln() - lambda - log_fact).exp()
}

pub fn apply_token_masking<R: Rng + ?Sized>(x: &[u32], ratio: f64, rng: &mut R) -> Vec<u32> {
    let n = noise_budget(ratio, x.len());
    let mut out = x.to_vec();
    for i in index::sample(rng, x.len(), n) {
        out[i] = MASK;
    }
    out
}

pub fn apply_token_deletion<R: Rng + ?Sized>(x: &[u32], ratio: f64, rng: &mut R) -> Vec<u32> {
    let n = noise_budget(ratio, x.len());
    let mut drop = vec![false; x.len()];
    for i in index::sample(rng, x.len(), n) {
        drop[i] = true;
    }
    x.iter().zip(drop).filter_map(|(&t, d)| (!d).then_some(t)).collect()
}

/// Result of span infilling with the bookkeeping needed for statistics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Infilled {
    pub output: Vec<u32>,
    /// Lengths of the applied spans, zero for pure insertions.
    pub span_lengths: Vec<usize>,
    pub covered: usize,
}

const PLACEMENT_TRIES: usize = 16;

/// Collapse Poisson-length spans into single mask tokens.
///
/// Draws continue until the covered count reaches the budget. A draw that
/// would overshoot is kept only when it lands no farther from the budget than
/// stopping short would. Spans never overlap and zero-length draws insert a
/// mask into a gap that is not inside any span.
pub fn infill_spans<R: Rng + ?Sized>(
    x: &[u32],
    ratio: f64,
    lambda: f64,
    attempts_factor: usize,
    rng: &mut R,
) -> Infilled {
    let n = x.len();
    let budget = noise_budget(ratio, n);
    if budget == 0 {
        return Infilled {
            output: x.to_vec(),
            span_lengths: Vec::new(),
            covered: 0,
        };
    }
    let expected_spans = (budget as f64 / lambda).ceil().max(1.0) as usize;
    let max_attempts = attempts_factor * expected_spans;

    let mut covered = vec![false; n];
    let mut inserts: BTreeSet<usize> = BTreeSet::new();
    // span start -> length
    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut total = 0usize;
    let mut attempts = 0usize;

    let inside_span = |covered: &[bool], gap: usize| gap > 0 && gap < n && covered[gap - 1] && covered[gap];

    while total < budget && attempts < max_attempts {
        attempts += 1;
        let len = sample_poisson(lambda, rng);
        let deficit = budget - total;
        if len > deficit && len - deficit > deficit {
            break;
        }
        if len == 0 {
            let gap = rng.gen_range(0..=n);
            if !inside_span(&covered, gap) && inserts.insert(gap) {
                spans.push((gap, 0));
            }
            continue;
        }
        if len > n {
            continue;
        }
        for _ in 0..PLACEMENT_TRIES {
            let start = rng.gen_range(0..=n - len);
            let free =
                covered[start..start + len].iter().all(|c| !c) && !inserts.range(start + 1..start + len).any(|_| true);
            if free {
                covered[start..start + len].iter_mut().for_each(|c| *c = true);
                spans.push((start, len));
                total += len;
                break;
            }
        }
    }

    let span_lengths: Vec<usize> = spans.iter().map(|s| s.1).collect();
    let mut starts: Vec<(usize, usize)> = spans.into_iter().filter(|s| s.1 > 0).collect();
    starts.sort_unstable();
    let mut out = Vec::with_capacity(n + inserts.len());
    let mut next_span = starts.iter().peekable();
    let mut i = 0;
    while i <= n {
        if inserts.contains(&i) {
            out.push(MASK);
        }
        if i == n {
            break;
        }
        if next_span.peek().is_some_and(|s| s.0 == i) {
            let (_, len) = next_span.next().unwrap();
            out.push(MASK);
            // Insertions strictly inside the span were excluded at placement.
            i += len;
        } else {
            out.push(x[i]);
            i += 1;
        }
    }
    Infilled {
        output: out,
        span_lengths,
        covered: total,
    }
}

pub fn apply_token_infilling<R: Rng + ?Sized>(x: &[u32], ratio: f64, lambda: f64, rng: &mut R) -> Vec<u32> {
    infill_spans(x, ratio, lambda, NoiseConfig::default().max_span_attempts_factor, rng).output
}

pub fn choose_strategy<R: Rng + ?Sized>(weights: &[f64; 3], rng: &mut R) -> Strategy {
    let sum: f64 = weights.iter().sum();
    let u = rng.gen::<f64>() * sum;
    let strategies = [Strategy::Masking, Strategy::Deletion, Strategy::Infilling];
    let mut acc = 0.0;
    for (w, s) in weights.iter().zip(strategies) {
        acc += w;
        if *w > 0.0 && u < acc {
            return s;
        }
    }
    // u landed on the upper edge through rounding; take the last live strategy.
    strategies
        .into_iter()
        .zip(weights)
        .rfind(|(_, w)| **w > 0.0)
        .map(|(s, _)| s)
        .unwrap_or(Strategy::Masking)
}

/// Truncate, corrupt with one strategy and assemble the decoder input/target
/// pair with the language id as the first decoder token.
pub fn corrupt<R: Rng + ?Sized>(
    x: &[u32],
    language: &str,
    config: &NoiseConfig,
    vocab: &Vocabulary,
    rng: &mut R,
) -> Result<TrainingTriple> {
    if x.is_empty() {
        return Err(Error::EmptyInput("instance to corrupt"));
    }
    let lang_id = vocab.language_id(language)?;
    let x = truncate(x, config.max_len);
    let strategy = choose_strategy(&config.strategy_weights, rng);
    let encoder_input = match strategy {
        Strategy::Masking => apply_token_masking(&x, config.mask_ratio, rng),
        Strategy::Deletion => apply_token_deletion(&x, config.mask_ratio, rng),
        Strategy::Infilling => {
            infill_spans(
                &x,
                config.mask_ratio,
                config.poisson_lambda,
                config.max_span_attempts_factor,
                rng,
            )
            .output
        }
    };
    let mut decoder_input = Vec::with_capacity(x.len() + 1);
    decoder_input.push(lang_id);
    decoder_input.extend_from_slice(&x);
    let mut target = x;
    target.push(EOS);
    Ok(TrainingTriple {
        encoder_input,
        decoder_input,
        target,
        strategy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::RawInstance;
    use crate::tokenizer::train_subword;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(n: u32) -> Vec<u32> {
        (100..100 + n).collect()
    }

    fn is_subsequence(sub: &[u32], full: &[u32]) -> bool {
        let mut it = full.iter();
        sub.iter().all(|s| it.any(|f| f == s))
    }

    #[test]
    fn budget_rounds_half_up() {
        assert_eq!(noise_budget(0.35, 20), 7);
        assert_eq!(noise_budget(0.35, 100), 35);
        assert_eq!(noise_budget(0.35, 10), 4);
        assert_eq!(noise_budget(0.5, 3), 2);
        assert_eq!(noise_budget(0.0, 3), 0);
        assert_eq!(noise_budget(1.0, 3), 3);
    }

    #[test]
    fn masking_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = seq(20);
        let out = apply_token_masking(&x, 0.35, &mut rng);
        assert_eq!(out.len(), 20);
        assert_eq!(out.iter().filter(|&&t| t == MASK).count(), 7);
        assert_eq!(apply_token_masking(&x, 0.0, &mut rng), x);
        assert!(apply_token_masking(&x, 1.0, &mut rng).iter().all(|&t| t == MASK));
    }

    #[test]
    fn deletion_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = seq(20);
        let out = apply_token_deletion(&x, 0.35, &mut rng);
        assert_eq!(out.len(), 13);
        assert!(is_subsequence(&out, &x));
        assert_eq!(apply_token_deletion(&x, 0.0, &mut rng), x);
        assert!(apply_token_deletion(&x, 1.0, &mut rng).is_empty());
    }

    #[test]
    fn poisson_pmf_closed_form() {
        // e^{-3.5} 3.5^3 / 3! = 0.0301974 * 42.875 / 6
        assert!((poisson_pmf(3, 3.5) - 0.21579).abs() < 1e-5);
        let total: f64 = (0..60).map(|k| poisson_pmf(k, 3.5)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_span_collapses_to_one_mask() {
        // Find a seed whose infilling applies exactly one span covering b c d.
        let x = [10, 11, 12, 13, 14];
        let found = (0..5000u64).find_map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = infill_spans(&x, 0.6, 3.5, 10, &mut rng);
            (r.span_lengths == [3] && r.output == [10, MASK, 14]).then_some(r)
        });
        assert!(found.is_some());
    }

    #[test]
    fn infilling_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let x = seq(40);
            let r = infill_spans(&x, 0.35, 3.5, 10, &mut rng);
            let inserts = r.span_lengths.iter().filter(|&&l| l == 0).count();
            let real = r.span_lengths.len() - inserts;
            assert_eq!(r.covered, r.span_lengths.iter().sum::<usize>());
            assert_eq!(r.output.len(), 40 - r.covered + real + inserts);
            assert!(r.output.len() <= 40 + inserts);
            let kept: Vec<u32> = r.output.iter().copied().filter(|&t| t != MASK).collect();
            assert!(is_subsequence(&kept, &x));
            assert_eq!(kept.len(), 40 - r.covered);
        }
    }

    #[test]
    fn infilling_zero_ratio_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(apply_token_infilling(&seq(30), 0.0, 3.5, &mut rng), seq(30));
    }

    #[test]
    fn infilling_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = seq(100);
        let (mut covered, mut spans, mut span_total) = (0usize, 0usize, 0usize);
        let trials = 10_000;
        for _ in 0..trials {
            let r = infill_spans(&x, 0.35, 3.5, 10, &mut rng);
            covered += r.covered;
            spans += r.span_lengths.len();
            span_total += r.span_lengths.iter().sum::<usize>();
        }
        let frac = covered as f64 / (100 * trials) as f64;
        let mean_span = span_total as f64 / spans as f64;
        assert!((frac - 0.35).abs() <= 0.01, "covered fraction {frac}");
        assert!((mean_span - 3.5).abs() <= 0.1, "mean span {mean_span}");
    }

    fn vocab() -> Vocabulary {
        let corpus = vec![RawInstance {
            text: "def add(a,b): return a+b".into(),
            language: "python".into(),
            source_id: "0".into(),
        }];
        train_subword(&corpus, 300, 1.0, 0)
            .unwrap()
            .add_language_ids(&["java", "python", "en_XX"])
            .unwrap()
    }

    #[test]
    fn corrupt_prefixes_language_id() {
        let v = vocab();
        let x = v.encode("def add(a,b): return a+b");
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = corrupt(&x, "python", &NoiseConfig::default(), &v, &mut rng).unwrap();
        assert_eq!(t.decoder_input[0], v.language_id("python").unwrap());
        assert_eq!(t.decoder_input.len(), t.target.len());
        assert_eq!(&t.target[..x.len()], &x[..]);
        assert_eq!(*t.target.last().unwrap(), EOS);
        assert!(t.encoder_input.iter().all(|&id| !v.is_language_id(id)));
    }

    #[test]
    fn corrupt_degenerate_weights_and_zero_ratio() {
        let v = vocab();
        let x = v.encode("def add(a,b): return a+b");
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = NoiseConfig {
            strategy_weights: [0.0, 0.0, 1.0],
            ..NoiseConfig::default()
        };
        for _ in 0..50 {
            assert_eq!(
                corrupt(&x, "python", &cfg, &v, &mut rng).unwrap().strategy,
                Strategy::Infilling
            );
        }
        for weights in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] {
            let cfg = NoiseConfig {
                mask_ratio: 0.0,
                strategy_weights: weights,
                ..NoiseConfig::default()
            };
            let t = corrupt(&x, "python", &cfg, &v, &mut rng).unwrap();
            assert_eq!(t.encoder_input, x);
        }
    }

    #[test]
    fn corrupt_rejects_bad_input() {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        assert!(corrupt(&[], "python", &NoiseConfig::default(), &v, &mut rng).is_err());
        assert!(matches!(
            corrupt(&[9], "ruby", &NoiseConfig::default(), &v, &mut rng),
            Err(Error::UnknownLanguage(_))
        ));
    }

    #[test]
    fn corrupt_truncates_first() {
        let v = vocab();
        let x: Vec<u32> = std::iter::repeat_n(v.encode("return")[0], 50).collect();
        let cfg = NoiseConfig {
            max_len: 16,
            ..NoiseConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = corrupt(&x, "java", &cfg, &v, &mut rng).unwrap();
        assert_eq!(t.target.len(), 17);
    }

    #[test]
    fn config_validation() {
        assert!(NoiseConfig::default().validate().is_ok());
        for bad in [
            NoiseConfig {
                mask_ratio: 1.5,
                ..NoiseConfig::default()
            },
            NoiseConfig {
                poisson_lambda: 0.0,
                ..NoiseConfig::default()
            },
            NoiseConfig {
                strategy_weights: [0.0; 3],
                ..NoiseConfig::default()
            },
            NoiseConfig {
                strategy_weights: [-1.0, 1.0, 1.0],
                ..NoiseConfig::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    proptest::proptest! {
        #[test]
        fn triple_reconstructs_original(
            x in proptest::collection::vec(300u32..400, 1..60),
            seed in 0u64..1000,
            ratio in 0.0f64..1.0,
        ) {
            let v = vocab();
            let cfg = NoiseConfig { mask_ratio: ratio, ..NoiseConfig::default() };
            let t1 = corrupt(&x, "java", &cfg, &v, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let t2 = corrupt(&x, "java", &cfg, &v, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            proptest::prop_assert_eq!(&t1, &t2);
            proptest::prop_assert_eq!(&t1.target[..t1.target.len() - 1], &x[..]);
            proptest::prop_assert_eq!(&t1.decoder_input[1..], &x[..]);
            match t1.strategy {
                Strategy::Masking => proptest::prop_assert_eq!(t1.encoder_input.len(), x.len()),
                Strategy::Deletion => proptest::prop_assert!(is_subsequence(&t1.encoder_input, &x)),
                Strategy::Infilling => {}
            }
        }
    }
}

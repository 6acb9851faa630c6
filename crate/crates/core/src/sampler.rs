//! Smoothed multinomial language sampling.
//!
//! With corpus shares `p_i = n_i / Σ n_j`, the per-instance resampling weight
//! is `q_i = (1 / p_i) · p_i^α / Σ_j p_j^α`. Batches are drawn in two stages:
//! a language with probability `p_i · q_i`, then an instance uniformly with
//! replacement inside that language.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusStats;
use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub alpha: f64,
    pub p: BTreeMap<String, f64>,
    pub q: BTreeMap<String, f64>,
    pub select: BTreeMap<String, f64>,
}

pub fn compute_plan(stats: &CorpusStats, alpha: f64) -> Result<SamplingPlan> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if stats.counts.is_empty() {
        return Err(Error::EmptyInput("sampling plan needs at least one language"));
    }
    if let Some((lang, _)) = stats.counts.iter().find(|(_, &n)| n == 0) {
        return Err(Error::EmptyLanguage(lang.clone()));
    }
    let total: f64 = stats.counts.values().map(|&n| n as f64).sum();
    let p: BTreeMap<String, f64> = stats
        .counts
        .iter()
        .map(|(l, &n)| (l.clone(), n as f64 / total))
        .collect();
    let z: f64 = p.values().map(|pi| pi.powf(alpha)).sum();
    let select: BTreeMap<String, f64> = p.iter().map(|(l, pi)| (l.clone(), pi.powf(alpha) / z)).collect();
    let q = p.iter().map(|(l, pi)| (l.clone(), select[l] / pi)).collect();
    Ok(SamplingPlan { alpha, p, q, select })
}

impl SamplingPlan {
    /// JSON rendering with every probability rounded to 12 significant digits.
    pub fn to_json_12(&self) -> serde_json::Value {
        let fmt = |m: &BTreeMap<String, f64>| {
            serde_json::Value::Object(
                m.iter()
                    .map(|(k, v)| (k.clone(), serde_json::Value::from(round_sig(*v, 12))))
                    .collect(),
            )
        };
        serde_json::json!({
            "alpha": self.alpha,
            "p": fmt(&self.p),
            "q": fmt(&self.q),
            "select": fmt(&self.select),
        })
    }
}

fn round_sig(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let magnitude = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(digits - 1 - magnitude);
    (x * scale).round() / scale
}

/// Two-stage draw over languages and instance indices, independent of where
/// the instances are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageSampler {
    languages: Vec<String>,
    cumulative: Vec<f64>,
    sizes: Vec<usize>,
}

impl LanguageSampler {
    /// `sizes` gives the instance count of every language in `plan`.
    pub fn new(plan: &SamplingPlan, sizes: &BTreeMap<String, usize>) -> Result<Self> {
        let mut languages = Vec::new();
        let mut cumulative = Vec::new();
        let mut counts = Vec::new();
        let mut acc = 0.0;
        for (lang, prob) in &plan.select {
            let n = *sizes.get(lang).ok_or_else(|| Error::UnknownLanguage(lang.clone()))?;
            if n == 0 {
                return Err(Error::EmptyLanguage(lang.clone()));
            }
            acc += prob;
            languages.push(lang.clone());
            cumulative.push(acc);
            counts.push(n);
        }
        if languages.is_empty() {
            return Err(Error::EmptyInput("sampling plan has no languages"));
        }
        Ok(LanguageSampler {
            languages,
            cumulative,
            sizes: counts,
        })
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    /// `(language index, instance index)`
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let total = *self.cumulative.last().unwrap();
        let u = rng.gen::<f64>() * total;
        let li = self
            .cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.languages.len() - 1);
        (li, rng.gen_range(0..self.sizes[li]))
    }
}

/// Unbounded stream of fixed-size batches drawn language-first.
pub struct BatchStream<'a, T, R> {
    data: Vec<(&'a str, &'a [T])>,
    sampler: LanguageSampler,
    batch_size: usize,
    rng: R,
}

pub fn stream_batches<'a, T, R: Rng>(
    datasets: &'a BTreeMap<String, Vec<T>>,
    plan: &SamplingPlan,
    batch_size: usize,
    rng: R,
) -> Result<BatchStream<'a, T, R>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let sizes = datasets.iter().map(|(l, d)| (l.clone(), d.len())).collect();
    let sampler = LanguageSampler::new(plan, &sizes)?;
    let data = sampler
        .languages()
        .iter()
        .map(|l| {
            let (name, d) = datasets.get_key_value(l).unwrap();
            (name.as_str(), d.as_slice())
        })
        .collect();
    Ok(BatchStream {
        data,
        sampler,
        batch_size,
        rng,
    })
}

impl<'a, T, R: Rng> BatchStream<'a, T, R> {
    /// One `(language, instance)` draw.
    pub fn draw(&mut self) -> (&'a str, &'a T) {
        let (li, idx) = self.sampler.draw(&mut self.rng);
        let (lang, data) = self.data[li];
        (lang, &data[idx])
    }

    pub fn into_rng(self) -> R {
        self.rng
    }
}

impl<'a, T, R: Rng> Iterator for BatchStream<'a, T, R> {
    type Item = Vec<(&'a str, &'a T)>;

    fn next(&mut self) -> Option<Self::Item> {
        Some((0..self.batch_size).map(|_| self.draw()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stats(counts: &[(&str, usize)]) -> CorpusStats {
        CorpusStats {
            counts: counts.iter().map(|(l, n)| (l.to_string(), *n)).collect(),
            token_counts: BTreeMap::new(),
        }
    }

    /// Independent evaluation of the weight formula, term by term as written.
    fn oracle_q(counts: &[f64], alpha: f64) -> Vec<f64> {
        let n: f64 = counts.iter().sum();
        let p: Vec<f64> = counts.iter().map(|c| c / n).collect();
        let denom: f64 = p.iter().map(|x| x.powf(alpha)).sum();
        p.iter().map(|pi| (1.0 / pi) * (pi.powf(alpha) / denom)).collect()
    }

    #[test]
    fn pl_nl_fourteen_to_one() {
        let plan = compute_plan(&stats(&[("a_pl", 14), ("b_nl", 1)]), 0.3).unwrap();
        // Frozen from a 30-digit evaluation of the weight formula.
        let oracle = oracle_q(&[14.0, 1.0], 0.3);
        assert!((oracle[0] - 0.737357065181556).abs() < 1e-12);
        assert!((oracle[1] - 4.677001087458216).abs() < 1e-12);
        assert!((plan.q["a_pl"] - oracle[0]).abs() < 1e-12);
        assert!((plan.q["b_nl"] - oracle[1]).abs() < 1e-12);
        assert!((plan.select["a_pl"] - 0.688199927502786).abs() < 1e-12);
        assert!((plan.select["b_nl"] - 0.311800072497214).abs() < 1e-12);
    }

    #[test]
    fn algebraic_limits() {
        let equal = compute_plan(&stats(&[("a", 5), ("b", 5), ("c", 5)]), 0.3).unwrap();
        assert!(equal.q.values().all(|q| (q - 1.0).abs() < 1e-12));

        let s = stats(&[("a", 14), ("b", 1), ("c", 3)]);
        let one = compute_plan(&s, 1.0).unwrap();
        assert!(one.q.values().all(|q| (q - 1.0).abs() < 1e-12));
        let zero = compute_plan(&s, 0.0).unwrap();
        assert!(zero.select.values().all(|x| (x - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn zero_count_names_language() {
        match compute_plan(&stats(&[("java", 4), ("python", 0)]), 0.3) {
            Err(Error::EmptyLanguage(l)) => assert_eq!(l, "python"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(compute_plan(&stats(&[("a", 1)]), 1.5).is_err());
    }

    #[test]
    fn stream_frequencies_follow_plan() {
        let plan = compute_plan(&stats(&[("a_pl", 14), ("b_nl", 1)]), 0.3).unwrap();
        let mut data = BTreeMap::new();
        data.insert("a_pl".to_string(), (0..14).collect::<Vec<u32>>());
        data.insert("b_nl".to_string(), vec![100u32]);
        let mut stream = stream_batches(&data, &plan, 1000, ChaCha8Rng::seed_from_u64(11)).unwrap();
        let mut pl = 0usize;
        for _ in 0..100 {
            let batch = stream.next().unwrap();
            assert_eq!(batch.len(), 1000);
            pl += batch.iter().filter(|(l, _)| *l == "a_pl").count();
        }
        assert!((pl as f64 / 100_000.0 - plan.select["a_pl"]).abs() < 0.005);
    }

    #[test]
    fn single_language_stream() {
        let plan = compute_plan(&stats(&[("java", 3)]), 0.3).unwrap();
        let mut data = BTreeMap::new();
        data.insert("java".to_string(), vec![1, 2, 3]);
        let mut stream = stream_batches(&data, &plan, 2048, ChaCha8Rng::seed_from_u64(0)).unwrap();
        let batch = stream.next().unwrap();
        assert_eq!(batch.len(), 2048);
        assert!(batch.iter().all(|(l, _)| *l == "java"));
    }

    #[test]
    fn stream_rejects_empty_dataset() {
        let plan = compute_plan(&stats(&[("java", 3), ("en", 1)]), 0.3).unwrap();
        let mut data: BTreeMap<String, Vec<u32>> = BTreeMap::new();
        data.insert("java".to_string(), vec![1]);
        data.insert("en".to_string(), vec![]);
        assert!(matches!(
            stream_batches(&data, &plan, 4, ChaCha8Rng::seed_from_u64(0)),
            Err(Error::EmptyLanguage(_))
        ));
        assert!(stream_batches(&data, &plan, 0, ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn stream_is_deterministic() {
        let plan = compute_plan(&stats(&[("a", 3), ("b", 1)]), 0.3).unwrap();
        let mut data = BTreeMap::new();
        data.insert("a".to_string(), vec![1, 2, 3]);
        data.insert("b".to_string(), vec![4]);
        let take = |seed| {
            stream_batches(&data, &plan, 8, ChaCha8Rng::seed_from_u64(seed))
                .unwrap()
                .take(5)
                .flatten()
                .map(|(_, v)| *v)
                .collect::<Vec<_>>()
        };
        assert_eq!(take(3), take(3));
    }

    #[test]
    fn json_uses_twelve_digits() {
        let plan = compute_plan(&stats(&[("pl", 14), ("nl", 1)]), 0.3).unwrap();
        let json = plan.to_json_12();
        let q = json["q"]["pl"].as_f64().unwrap();
        assert_eq!(q, round_sig(plan.q["pl"], 12));
        assert!((q - 0.737357065182).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn plan_invariants(counts in proptest::collection::vec(1usize..10_000, 1..6), alpha in 0.0f64..=1.0, scale in 1usize..50) {
            let named: Vec<(String, usize)> = counts.iter().enumerate().map(|(i, c)| (format!("l{i}"), *c)).collect();
            let s = CorpusStats { counts: named.iter().cloned().collect(), token_counts: BTreeMap::new() };
            let plan = compute_plan(&s, alpha).unwrap();
            let psum: f64 = plan.p.values().sum();
            let ssum: f64 = plan.select.values().sum();
            proptest::prop_assert!((psum - 1.0).abs() < 1e-12);
            proptest::prop_assert!((ssum - 1.0).abs() < 1e-12);
            for l in plan.p.keys() {
                let lhs = plan.p[l] * plan.q[l];
                proptest::prop_assert!((lhs - plan.select[l]).abs() <= 1e-12 * plan.select[l].max(1e-300));
            }
            let scaled = CorpusStats {
                counts: named.iter().map(|(l, c)| (l.clone(), c * scale)).collect(),
                token_counts: BTreeMap::new(),
            };
            let plan2 = compute_plan(&scaled, alpha).unwrap();
            for l in plan.q.keys() {
                proptest::prop_assert!((plan.q[l] - plan2.q[l]).abs() <= 1e-9 * plan.q[l]);
            }
            if alpha < 1.0 {
                let max = named.iter().max_by_key(|x| x.1).unwrap();
                let min = named.iter().min_by_key(|x| x.1).unwrap();
                if max.1 != min.1 {
                    proptest::prop_assert!(plan.q[&max.0] < 1.0);
                    proptest::prop_assert!(plan.q[&min.0] > 1.0);
                }
            }
        }
    }
}

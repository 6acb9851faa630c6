//! Small deterministic datasets for overfit checks, the acceptance suite and
//! CLI smoke runs.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{compute_stats, RawInstance};
use crate::error::Result;
use crate::noising::NoiseConfig;
use crate::sampler::{compute_plan, SamplingPlan, DEFAULT_ALPHA};
use crate::tokenizer::{train_subword, Vocabulary, DESK_VOCAB_SIZE};
use crate::training::PretrainData;

pub const CODE_LANG: &str = "mini";
pub const TEXT_LANG: &str = "en";

const FUNCS: [&str; 8] = ["add", "scale", "clamp", "step", "mix", "count", "pick", "fold"];
const VARS: [&str; 8] = ["a", "b", "n", "x", "y", "k", "acc", "total"];
const OPS: [(&str, &str); 4] = [("+", "adds"), ("-", "subtracts"), ("*", "multiplies"), ("/", "divides")];
const NOUNS: [&str; 8] = [
    "parser", "model", "token", "batch", "vector", "graph", "query", "buffer",
];
const VERBS: [&str; 6] = ["reads", "updates", "returns", "checks", "builds", "stores"];
const ADJS: [&str; 6] = ["small", "sorted", "empty", "shared", "final", "new"];

fn instance(text: String, language: &str, id: usize) -> RawInstance {
    RawInstance {
        text,
        language: language.to_string(),
        source_id: format!("{language}-{id}"),
    }
}

/// A mini-language function of one of a few shapes.
pub fn toy_function<R: Rng + ?Sized>(rng: &mut R) -> String {
    let f = FUNCS.choose(rng).unwrap();
    let mut vars = VARS.to_vec();
    vars.shuffle(rng);
    let (a, b, c) = (vars[0], vars[1], vars[2]);
    let (op, _) = OPS.choose(rng).unwrap();
    let k: u32 = rng.gen_range(1..10);
    match rng.gen_range(0..4) {
        0 => format!("fn {f}({a}, {b}) {{ {c} = {a} {op} {b}; return {c}; }}"),
        1 => format!("fn {f}({a}) {{ if {a} > {k} {{ {a} = {a} {op} {k}; }} return {a}; }}"),
        2 => format!("fn {f}({a}, {b}) {{ while {a} < {b} {{ {a} = {a} + {k}; }} return {a}; }}"),
        _ => format!("fn {f}({a}) {{ {b} = {f}({a} {op} {k}); return {b} * {a}; }}"),
    }
}

pub fn toy_sentence<R: Rng + ?Sized>(rng: &mut R) -> String {
    format!(
        "the {} {} {} the {} {}",
        ADJS.choose(rng).unwrap(),
        NOUNS.choose(rng).unwrap(),
        VERBS.choose(rng).unwrap(),
        ADJS.choose(rng).unwrap(),
        NOUNS.choose(rng).unwrap()
    )
}

/// `per_language` distinct code functions and as many English sentences.
pub fn toy_corpora(per_language: usize, seed: u64) -> BTreeMap<String, Vec<RawInstance>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut distinct = |make: &mut dyn FnMut(&mut ChaCha8Rng) -> String, lang: &str| {
        let mut seen = std::collections::BTreeSet::new();
        let mut out = Vec::new();
        while out.len() < per_language {
            let text = make(&mut rng);
            if seen.insert(text.clone()) {
                out.push(instance(text, lang, out.len()));
            }
        }
        out
    };
    let code = distinct(&mut |r| toy_function(r), CODE_LANG);
    let text = distinct(&mut |r| toy_sentence(r), TEXT_LANG);
    BTreeMap::from([(CODE_LANG.to_string(), code), (TEXT_LANG.to_string(), text)])
}

/// Sixteen (function, summary) pairs. The summary is a function of the
/// operator and the two parameter names.
pub fn toy_parallel_pairs() -> Vec<(String, String)> {
    let names = [("a", "b"), ("x", "y"), ("n", "k"), ("acc", "total")];
    let mut out = Vec::new();
    for (i, (op, verb)) in OPS.iter().enumerate() {
        for (j, (a, b)) in names.iter().enumerate() {
            let f = FUNCS[(i + 2 * j) % FUNCS.len()];
            out.push((
                format!("fn {f}({a}, {b}) {{ return {a} {op} {b}; }}"),
                format!("{verb} {a} and {b}"),
            ));
        }
    }
    out
}

/// Pair-classification examples whose label is announced by a marker word in
/// the first input: `same` for class 1, `other` for class 0.
pub fn toy_pair_classification(n: usize, seed: u64) -> Vec<(String, String, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = i % 2;
            let marker = if label == 1 { "same" } else { "other" };
            let a = format!("{marker} {}", toy_function(&mut rng));
            let b = toy_function(&mut rng);
            (a, b, label)
        })
        .collect()
}

/// A desk-size vocabulary trained on everything the fixtures produce, with
/// both fixture languages registered. Merging stops early once no pair
/// repeats, so the result is much smaller than the requested size.
pub fn toy_vocabulary(corpora: &BTreeMap<String, Vec<RawInstance>>) -> Result<Vocabulary> {
    let mut all: Vec<RawInstance> = corpora.values().flatten().cloned().collect();
    for (i, (src, tgt)) in toy_parallel_pairs().into_iter().enumerate() {
        all.push(instance(src, CODE_LANG, 1000 + i));
        all.push(instance(tgt, TEXT_LANG, 1000 + i));
    }
    all.push(instance("same other".into(), TEXT_LANG, 2000));
    train_subword(&all, DESK_VOCAB_SIZE, 1.0, 0)?.add_language_ids(&[CODE_LANG, TEXT_LANG])
}

/// Everything a pre-training run on the toy corpora needs.
pub struct PretrainFixture {
    pub raw: BTreeMap<String, Vec<RawInstance>>,
    pub encoded: BTreeMap<String, Vec<Vec<u32>>>,
    pub vocab: Vocabulary,
    pub noise: NoiseConfig,
    pub plan: SamplingPlan,
}

impl PretrainFixture {
    /// `per_language` instances of code and of English.
    pub fn new(per_language: usize, seed: u64) -> Result<PretrainFixture> {
        let raw = toy_corpora(per_language, seed);
        let vocab = toy_vocabulary(&raw)?;
        let encoded = raw
            .iter()
            .map(|(lang, items)| (lang.clone(), items.iter().map(|i| vocab.encode(&i.text)).collect()))
            .collect();
        let plan = compute_plan(&compute_stats(&raw), DEFAULT_ALPHA)?;
        Ok(PretrainFixture {
            raw,
            encoded,
            vocab,
            noise: NoiseConfig::default(),
            plan,
        })
    }

    pub fn data(&self) -> PretrainData<'_> {
        PretrainData {
            corpora: &self.encoded,
            vocab: &self.vocab,
            noise: &self.noise,
            plan: &self.plan,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_deterministic_and_distinct() {
        let a = toy_corpora(16, 1);
        assert_eq!(a, toy_corpora(16, 1));
        assert_eq!(a[CODE_LANG].len(), 16);
        assert_eq!(a[TEXT_LANG].len(), 16);
        for f in &a[CODE_LANG] {
            crate::minilang::parse(&f.text).unwrap();
        }
        let pairs = toy_parallel_pairs();
        assert_eq!(pairs.len(), 16);
        let targets: std::collections::BTreeSet<_> = pairs.iter().map(|p| &p.1).collect();
        assert_eq!(targets.len(), 16);
    }

    #[test]
    fn vocabulary_covers_fixtures() {
        let corpora = toy_corpora(16, 1);
        let v = toy_vocabulary(&corpora).unwrap();
        for inst in corpora.values().flatten() {
            assert_eq!(v.decode(&v.encode(&inst.text)), inst.text);
        }
        assert!(v.language_id(CODE_LANG).is_ok() && v.language_id(TEXT_LANG).is_ok());
        assert!(v.len() < 600, "{}", v.len());
    }
}

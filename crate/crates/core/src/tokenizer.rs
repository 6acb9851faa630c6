//! Byte-pair subword segmentation with byte fallback.
//!
//! Id layout: the five special tokens take ids 0..5, the 256 byte-fallback
//! pieces `<0x00>`..`<0xFF>` follow, then the learned text pieces (alphabet
//! first, merge products after), and finally any language-id symbols added
//! with [`Vocabulary::add_language_ids`].
//!
//! Text is pre-tokenized on whitespace and every word gets a leading `▁`
//! marker, so decoding restores single-space-separated words. Runs of
//! whitespace and leading/trailing whitespace are not preserved.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::RawInstance;
use crate::error::{Error, Result};

pub const BOS: u32 = 0;
pub const PAD: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const MASK: u32 = 4;

pub const SPECIAL_TOKENS: [&str; 5] = ["<s>", "<pad>", "</s>", "<unk>", "<mask>"];
const NUM_SPECIAL: u32 = SPECIAL_TOKENS.len() as u32;
const NUM_BYTES: u32 = 256;
const FIRST_TEXT_ID: u32 = NUM_SPECIAL + NUM_BYTES;

pub const WORD_MARKER: char = '\u{2581}';
const FORMAT_VERSION: u32 = 1;
const MIN_MERGE_FREQUENCY: usize = 2;

/// Desk-scale learned piece budget.
pub const DESK_VOCAB_SIZE: usize = 2000;
/// Full-scale learned piece budget.
pub const FULL_VOCAB_SIZE: usize = 50_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    /// Learned text pieces; id = FIRST_TEXT_ID + index.
    pieces: Vec<String>,
    merges: Vec<(String, String)>,
    /// Language-id symbols such as `<java>`, appended after all other ids.
    language_ids: Vec<String>,
    piece_ids: HashMap<String, u32>,
    merge_ranks: HashMap<(String, String), usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    version: u32,
    special_tokens: BTreeMap<String, u32>,
    byte_fallback: bool,
    pieces: Vec<String>,
    merges: Vec<(String, String)>,
    language_ids: Vec<String>,
}

/// `"java"` and `"<java>"` both name the symbol `<java>`.
pub fn language_symbol(tag: &str) -> String {
    if tag.starts_with('<') && tag.ends_with('>') && tag.len() > 2 {
        tag.to_string()
    } else {
        format!("<{tag}>")
    }
}

impl Vocabulary {
    fn from_parts(pieces: Vec<String>, merges: Vec<(String, String)>, language_ids: Vec<String>) -> Self {
        let piece_ids = pieces
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), FIRST_TEXT_ID + i as u32))
            .collect();
        let merge_ranks = merges.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect();
        Vocabulary {
            pieces,
            merges,
            language_ids,
            piece_ids,
            merge_ranks,
        }
    }

    /// Total number of ids, including specials and language ids.
    pub fn len(&self) -> usize {
        FIRST_TEXT_ID as usize + self.pieces.len() + self.language_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Count of learned text pieces plus byte-fallback pieces.
    pub fn base_piece_count(&self) -> usize {
        NUM_BYTES as usize + self.pieces.len()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn language_ids(&self) -> &[String] {
        &self.language_ids
    }

    fn first_language_id(&self) -> u32 {
        FIRST_TEXT_ID + self.pieces.len() as u32
    }

    pub fn is_language_id(&self, id: u32) -> bool {
        id >= self.first_language_id() && (id as usize) < self.len()
    }

    pub fn is_special(&self, id: u32) -> bool {
        id < NUM_SPECIAL
    }

    /// Id of a language symbol, accepting either `java` or `<java>`.
    pub fn language_id(&self, tag: &str) -> Result<u32> {
        let sym = language_symbol(tag);
        self.language_ids
            .iter()
            .position(|l| *l == sym)
            .map(|i| self.first_language_id() + i as u32)
            .ok_or_else(|| Error::UnknownLanguage(tag.to_string()))
    }

    /// Text of a single id.
    pub fn piece(&self, id: u32) -> Option<String> {
        if id < NUM_SPECIAL {
            Some(SPECIAL_TOKENS[id as usize].to_string())
        } else if id < FIRST_TEXT_ID {
            Some(format!("<0x{:02X}>", id - NUM_SPECIAL))
        } else if id < self.first_language_id() {
            Some(self.pieces[(id - FIRST_TEXT_ID) as usize].clone())
        } else {
            self.language_ids.get((id - self.first_language_id()) as usize).cloned()
        }
    }

    /// Append language-id symbols after every existing id.
    pub fn add_language_ids<S: AsRef<str>>(&self, tags: &[S]) -> Result<Vocabulary> {
        let mut langs = self.language_ids.clone();
        let mut seen: HashSet<String> = langs.iter().cloned().collect();
        for tag in tags {
            let sym = language_symbol(tag.as_ref());
            if !seen.insert(sym.clone()) || SPECIAL_TOKENS.contains(&sym.as_str()) {
                return Err(Error::DuplicateLanguage(tag.as_ref().to_string()));
            }
            langs.push(sym);
        }
        Ok(Vocabulary::from_parts(self.pieces.clone(), self.merges.clone(), langs))
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            self.encode_word(word, &mut out);
        }
        out
    }

    fn encode_word(&self, word: &str, out: &mut Vec<u32>) {
        // Symbols carry either a text piece or a raw byte run that cannot merge.
        enum Sym {
            Text(String),
            Bytes(Vec<u8>),
        }
        let mut syms: Vec<Sym> = Vec::with_capacity(word.len() + 1);
        syms.push(Sym::Text(WORD_MARKER.to_string()));
        for ch in word.chars() {
            let s = ch.to_string();
            if ch != WORD_MARKER && self.piece_ids.contains_key(&s) {
                syms.push(Sym::Text(s));
            } else {
                syms.push(Sym::Bytes(s.into_bytes()));
            }
        }
        loop {
            let mut best: Option<(usize, usize)> = None;
            for i in 0..syms.len().saturating_sub(1) {
                if let (Sym::Text(a), Sym::Text(b)) = (&syms[i], &syms[i + 1]) {
                    if let Some(&rank) = self.merge_ranks.get(&(a.clone(), b.clone())) {
                        if best.is_none_or(|(r, _)| rank < r) {
                            best = Some((rank, i));
                        }
                    }
                }
            }
            let Some((_, i)) = best else { break };
            let Sym::Text(b) = syms.remove(i + 1) else {
                unreachable!()
            };
            if let Sym::Text(a) = &mut syms[i] {
                a.push_str(&b);
            }
        }
        for sym in syms {
            match sym {
                Sym::Text(s) => out.push(self.piece_ids.get(&s).copied().unwrap_or(UNK)),
                Sym::Bytes(bytes) => out.extend(bytes.iter().map(|&b| NUM_SPECIAL + b as u32)),
            }
        }
    }

    /// Detokenize. Padding, `<s>` and `</s>` are dropped; `<mask>`, `<unk>` and
    /// language symbols are rendered as standalone words.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut bytes: Vec<u8> = Vec::new();
        let push_word = |bytes: &mut Vec<u8>, w: &str| {
            bytes.push(b' ');
            bytes.extend_from_slice(w.as_bytes());
        };
        for &id in ids {
            match id {
                BOS | PAD | EOS => {}
                UNK | MASK => push_word(&mut bytes, SPECIAL_TOKENS[id as usize]),
                _ if id < FIRST_TEXT_ID => bytes.push((id - NUM_SPECIAL) as u8),
                _ if id < self.first_language_id() => {
                    let piece = &self.pieces[(id - FIRST_TEXT_ID) as usize];
                    for ch in piece.chars() {
                        if ch == WORD_MARKER {
                            bytes.push(b' ');
                        } else {
                            let mut buf = [0u8; 4];
                            bytes.extend_from_slice(ch.encode_utf8(&mut buf).as_bytes());
                        }
                    }
                }
                _ => {
                    if let Some(sym) = self.piece(id) {
                        push_word(&mut bytes, &sym);
                    }
                }
            }
        }
        let text = String::from_utf8_lossy(&bytes);
        text.strip_prefix(' ').unwrap_or(&text).to_string()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = VocabFile {
            version: FORMAT_VERSION,
            special_tokens: SPECIAL_TOKENS
                .iter()
                .enumerate()
                .map(|(i, s)| (s.to_string(), i as u32))
                .collect(),
            byte_fallback: true,
            pieces: self.pieces.clone(),
            merges: self.merges.clone(),
            language_ids: self.language_ids.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(json: &str) -> Result<Vocabulary> {
        let file: VocabFile = serde_json::from_str(json)?;
        if file.version != FORMAT_VERSION || !file.byte_fallback {
            return Err(Error::Config(format!(
                "unsupported vocabulary format version {}",
                file.version
            )));
        }
        for (name, id) in &file.special_tokens {
            if SPECIAL_TOKENS.get(*id as usize) != Some(&name.as_str()) {
                return Err(Error::Config(format!("unexpected special token {name}={id}")));
            }
        }
        Ok(Vocabulary::from_parts(file.pieces, file.merges, file.language_ids))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Vocabulary> {
        let path = path.as_ref();
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocabulary::from_json(&json)
    }
}

/// Learn a byte-pair vocabulary on a seeded sample of `corpus`.
///
/// `vocab_size` bounds the base pieces (byte fallback plus learned text
/// pieces); specials and language ids come on top. Ties between equally
/// frequent pairs go to the lexicographically smallest pair.
pub fn train_subword(corpus: &[RawInstance], vocab_size: usize, sample_fraction: f64, seed: u64) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("tokenizer training corpus"));
    }
    if !(sample_fraction > 0.0 && sample_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "sample_fraction must lie in (0, 1], got {sample_fraction}"
        )));
    }
    let sample = training_sample(corpus, sample_fraction, seed);
    let texts: Vec<&str> = sample.iter().map(|i| i.text.as_str()).collect();
    learn_merges(&texts, vocab_size)
}

/// The seeded subset of `corpus` the tokenizer is trained on.
pub fn training_sample(corpus: &[RawInstance], sample_fraction: f64, seed: u64) -> Vec<&RawInstance> {
    let n = ((corpus.len() as f64 * sample_fraction).round() as usize).clamp(1, corpus.len());
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut chosen = order[..n].to_vec();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| &corpus[i]).collect()
}

fn learn_merges(texts: &[&str], vocab_size: usize) -> Result<Vocabulary> {
    let mut word_freq: BTreeMap<String, usize> = BTreeMap::new();
    for text in texts {
        for w in text.split_whitespace() {
            *word_freq.entry(w.to_string()).or_default() += 1;
        }
    }
    let mut alphabet: BTreeSet<String> = BTreeSet::new();
    alphabet.insert(WORD_MARKER.to_string());
    for w in word_freq.keys() {
        alphabet.extend(w.chars().filter(|&c| c != WORD_MARKER).map(String::from));
    }
    let required = NUM_BYTES as usize + alphabet.len();
    if vocab_size < required {
        return Err(Error::VocabTooSmall {
            requested: vocab_size,
            required,
        });
    }

    let mut pieces: Vec<String> = alphabet.into_iter().collect();
    let mut ids: HashMap<String, u32> = pieces.iter().enumerate().map(|(i, p)| (p.clone(), i as u32)).collect();
    let mut words: Vec<(Vec<u32>, usize)> = word_freq
        .iter()
        .map(|(w, &f)| {
            let syms = std::iter::once(WORD_MARKER)
                .chain(w.chars())
                .map(|c| ids[&c.to_string()])
                .collect();
            (syms, f)
        })
        .collect();

    let mut pair_counts: HashMap<(u32, u32), usize> = HashMap::new();
    let mut pair_words: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
    for (wi, (syms, f)) in words.iter().enumerate() {
        for p in syms.windows(2) {
            *pair_counts.entry((p[0], p[1])).or_default() += f;
            pair_words.entry((p[0], p[1])).or_default().insert(wi);
        }
    }

    let mut merges = Vec::new();
    while NUM_BYTES as usize + pieces.len() < vocab_size {
        let best = pair_counts
            .iter()
            .filter(|(_, &c)| c >= MIN_MERGE_FREQUENCY)
            .max_by(|(pa, ca), (pb, cb)| {
                ca.cmp(cb).then_with(|| {
                    let ka = (&pieces[pa.0 as usize], &pieces[pa.1 as usize]);
                    let kb = (&pieces[pb.0 as usize], &pieces[pb.1 as usize]);
                    kb.cmp(&ka)
                })
            })
            .map(|(p, _)| *p);
        let Some((a, b)) = best else { break };

        let merged = format!("{}{}", pieces[a as usize], pieces[b as usize]);
        let new_id = match ids.get(&merged) {
            Some(&id) => id,
            None => {
                let id = pieces.len() as u32;
                pieces.push(merged.clone());
                ids.insert(merged, id);
                id
            }
        };
        merges.push((pieces[a as usize].clone(), pieces[b as usize].clone()));

        let mut affected: Vec<usize> = pair_words
            .get(&(a, b))
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default();
        affected.sort_unstable();
        for wi in affected {
            let (syms, f) = &mut words[wi];
            for p in syms.windows(2) {
                let key = (p[0], p[1]);
                if let Some(c) = pair_counts.get_mut(&key) {
                    *c -= *f;
                    if *c == 0 {
                        pair_counts.remove(&key);
                    }
                }
                if let Some(ws) = pair_words.get_mut(&key) {
                    ws.remove(&wi);
                }
            }
            let mut merged_syms = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == a && syms[i + 1] == b {
                    merged_syms.push(new_id);
                    i += 2;
                } else {
                    merged_syms.push(syms[i]);
                    i += 1;
                }
            }
            *syms = merged_syms;
            for p in syms.windows(2) {
                *pair_counts.entry((p[0], p[1])).or_default() += *f;
                pair_words.entry((p[0], p[1])).or_default().insert(wi);
            }
        }
    }

    Ok(Vocabulary::from_parts(pieces, merges, Vec::new()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(texts: &[&str]) -> Vec<RawInstance> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| RawInstance {
                text: t.to_string(),
                language: "mini".into(),
                source_id: i.to_string(),
            })
            .collect()
    }

    fn toy() -> Vec<RawInstance> {
        corpus(&[
            "fn add(a, b) { return a + b; }",
            "fn sub(a, b) { return a - b; }",
            "returns the sum of two numbers",
            "returns the difference of two numbers",
        ])
    }

    #[test]
    fn repeated_pair_is_merged_first() {
        // Hand trace on "ababab": symbols ▁ a b a b a b, pair counts
        // (a,b)=3, (b,a)=2, (▁,a)=1, so the first merge is (a, b).
        let vocab = train_subword(&corpus(&["ababab", "ababab"]), 300, 1.0, 0).unwrap();
        assert_eq!(vocab.merges()[0], ("a".to_string(), "b".to_string()));
        assert!(vocab.encode("ababab").len() < 6);
    }

    #[test]
    fn sample_fraction_selects_seeded_subset() {
        let texts: Vec<String> = (0..100).map(|i| format!("item {i}")).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let c = corpus(&refs);
        let s = training_sample(&c, 0.2, 3);
        assert_eq!(s.len(), 20);
        let again = training_sample(&c, 0.2, 3);
        assert_eq!(s, again);
    }

    #[test]
    fn base_pieces_bounded() {
        let vocab = train_subword(&toy(), 290, 1.0, 1).unwrap();
        assert!(vocab.base_piece_count() <= 290);
    }

    #[test]
    fn too_small_vocab_is_fatal() {
        assert!(matches!(
            train_subword(&toy(), 10, 1.0, 1),
            Err(Error::VocabTooSmall { .. })
        ));
    }

    #[test]
    fn encode_round_trips_and_avoids_specials() {
        let vocab = train_subword(&toy(), 400, 1.0, 1)
            .unwrap()
            .add_language_ids(&["java", "python"])
            .unwrap();
        assert!(vocab.encode("").is_empty());
        for text in [
            "return x + 1;",
            "fn zzz(q) { return q * 9; }",
            "ünïcode ✓ \u{2581}marker",
        ] {
            let ids = vocab.encode(text);
            assert!(ids.iter().all(|&id| id > MASK && !vocab.is_language_id(id)));
            assert_eq!(vocab.decode(&ids), text);
        }
    }

    #[test]
    fn known_piece_encodes_to_one_id() {
        let vocab = train_subword(&toy(), 400, 1.0, 1).unwrap();
        let ids = vocab.encode("return");
        assert_eq!(ids.len(), 1, "{:?}", vocab.piece(ids[0]));
        assert_eq!(vocab.piece(ids[0]).unwrap(), "\u{2581}return");
    }

    #[test]
    fn language_ids_append() {
        let base = train_subword(&toy(), 400, 1.0, 1).unwrap();
        let v = base.len() as u32;
        let vocab = base.add_language_ids(&["java", "python", "en_XX"]).unwrap();
        assert_eq!(vocab.language_id("java").unwrap(), v);
        assert_eq!(vocab.language_id("<python>").unwrap(), v + 1);
        assert_eq!(vocab.language_id("en_XX").unwrap(), v + 2);
        assert_eq!(vocab.len(), base.len() + 3);
        assert_eq!(vocab.encode("return a"), base.encode("return a"));

        let none: [&str; 0] = [];
        assert_eq!(base.add_language_ids(&none).unwrap(), base);

        let ruby = vocab.add_language_ids(&["<ruby>"]).unwrap();
        assert_eq!(ruby.language_id("ruby").unwrap(), v + 3);
        assert_eq!(ruby.decode(&[v + 3]), "<ruby>");

        assert!(matches!(
            vocab.add_language_ids(&["java"]),
            Err(Error::DuplicateLanguage(_))
        ));
        assert!(base.add_language_ids(&["x", "x"]).is_err());
    }

    #[test]
    fn serialization_is_stable() {
        let a = train_subword(&toy(), 400, 1.0, 5)
            .unwrap()
            .add_language_ids(&["mini"])
            .unwrap();
        let b = train_subword(&toy(), 400, 1.0, 5)
            .unwrap()
            .add_language_ids(&["mini"])
            .unwrap();
        let ja = a.to_json().unwrap();
        assert_eq!(ja, b.to_json().unwrap());
        let back = Vocabulary::from_json(&ja).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.to_json().unwrap(), ja);
    }

    #[test]
    fn every_id_decodes() {
        let vocab = train_subword(&toy(), 400, 1.0, 1)
            .unwrap()
            .add_language_ids(&["a"])
            .unwrap();
        for id in 0..vocab.len() as u32 {
            assert!(vocab.piece(id).is_some());
        }
        assert!(vocab.piece(vocab.len() as u32).is_none());
    }

    #[test]
    fn larger_vocab_never_lengthens_encoding() {
        let c = toy();
        let mut prev: Option<Vec<usize>> = None;
        for size in [285, 290, 300, 330, 400] {
            let vocab = train_subword(&c, size, 1.0, 9).unwrap();
            let lens: Vec<usize> = c.iter().map(|i| vocab.encode(&i.text).len()).collect();
            if let Some(p) = &prev {
                assert!(lens.iter().zip(p).all(|(a, b)| a <= b));
            }
            prev = Some(lens);
        }
    }

    proptest::proptest! {
        #[test]
        fn round_trip_any_text(words in proptest::collection::vec("[a-z0-9(){};+\u{e9}\u{4e2d}]{1,8}", 0..8)) {
            let vocab = train_subword(&toy(), 400, 1.0, 1).unwrap();
            let text = words.join(" ");
            let ids = vocab.encode(&text);
            proptest::prop_assert!(ids.iter().all(|&id| (id as usize) < vocab.len()));
            proptest::prop_assert_eq!(vocab.decode(&ids), text);
        }
    }
}

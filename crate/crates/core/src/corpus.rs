//! Language-tagged corpus ingestion.
//!
//! A corpus file is UTF-8 JSONL with one object per line carrying a required
//! `"text"` string and an optional `"id"` string. The language of every record
//! comes from the caller, never from the file.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawInstance {
    pub text: String,
    pub language: String,
    pub source_id: String,
}

/// Outcome of reading one JSONL file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ingested {
    pub instances: Vec<RawInstance>,
    /// Lines that were not a JSON object with a non-blank `"text"` string.
    pub skipped: usize,
}

#[derive(Deserialize)]
struct JsonlRecord {
    text: String,
    #[serde(default)]
    id: Option<String>,
}

#[derive(Serialize)]
struct JsonlRecordOut<'a> {
    text: &'a str,
    id: &'a str,
}

/// Read every record of `path`, tagging it with `language`.
///
/// Malformed lines are counted in [`Ingested::skipped`] rather than failing the
/// file; the call only fails when the file is missing or no line at all could
/// be read. Blank lines are ignored and not counted.
pub fn ingest_jsonl(path: impl AsRef<Path>, language: &str) -> Result<Ingested> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Ingested::default();
    let mut non_blank = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        non_blank += 1;
        match serde_json::from_str::<JsonlRecord>(&line) {
            Ok(rec) if !rec.text.trim().is_empty() => {
                let source_id = rec.id.unwrap_or_else(|| format!("{}:{}", path.display(), lineno + 1));
                out.instances.push(RawInstance {
                    text: rec.text,
                    language: language.to_string(),
                    source_id,
                });
            }
            _ => out.skipped += 1,
        }
    }
    if non_blank > 0 && out.instances.is_empty() {
        return Err(Error::AllLinesMalformed {
            path: path.to_path_buf(),
            lines: non_blank,
        });
    }
    Ok(out)
}

/// Serialize instances back to the JSONL corpus format.
pub fn write_jsonl(path: impl AsRef<Path>, instances: &[RawInstance]) -> Result<()> {
    let path = path.as_ref();
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    for inst in instances {
        let line = serde_json::to_string(&JsonlRecordOut {
            text: &inst.text,
            id: &inst.source_id,
        })?;
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub counts: BTreeMap<String, usize>,
    #[serde(default)]
    pub token_counts: BTreeMap<String, usize>,
}

impl CorpusStats {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    /// Fill `token_counts` using the supplied segmenter.
    pub fn count_tokens(&mut self, corpora: &BTreeMap<String, Vec<RawInstance>>, token_len: impl Fn(&str) -> usize) {
        for (lang, instances) in corpora {
            let n = instances.iter().map(|i| token_len(&i.text)).sum();
            self.token_counts.insert(lang.clone(), n);
        }
    }
}

pub fn compute_stats(corpora: &BTreeMap<String, Vec<RawInstance>>) -> CorpusStats {
    let mut stats = CorpusStats::default();
    for (lang, instances) in corpora {
        stats.counts.insert(lang.clone(), instances.len());
        stats.token_counts.insert(lang.clone(), 0);
    }
    stats
}

/// Keep the first `max_len` ids. Never pads.
pub fn truncate(ids: &[u32], max_len: usize) -> Vec<u32> {
    ids[..ids.len().min(max_len)].to_vec()
}

/// Seeded shuffle followed by a cut: `floor(n * valid_fraction)` instances go to
/// the validation side.
pub fn split<T: Clone>(instances: &[T], valid_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(0.0..1.0).contains(&valid_fraction) {
        return Err(Error::Config(format!(
            "valid_fraction must lie in [0, 1), got {valid_fraction}"
        )));
    }
    let mut order: Vec<usize> = (0..instances.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_valid = (instances.len() as f64 * valid_fraction).floor() as usize;
    let valid = order[..n_valid].iter().map(|&i| instances[i].clone()).collect();
    let train = order[n_valid..].iter().map(|&i| instances[i].clone()).collect();
    Ok((train, valid))
}

/// Split a mini-language source file into its top-level `fn` items by brace
/// depth. Used to build fixture corpora; text outside any function is dropped.
pub fn split_top_level_functions(source: &str) -> Vec<String> {
    let mut out = Vec::new();
    let bytes = source.as_bytes();
    let mut depth = 0usize;
    let mut start: Option<usize> = None;
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' => depth += 1,
            b'}' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    if let Some(s) = start.take() {
                        out.push(source[s..=i].trim().to_string());
                    }
                }
            }
            b'f' if depth == 0 && start.is_none() => {
                let word_start = i == 0 || !is_ident_byte(bytes[i - 1]);
                let is_fn = source[i..].starts_with("fn") && bytes.get(i + 2).is_none_or(|b| !is_ident_byte(*b));
                if word_start && is_fn {
                    start = Some(i);
                }
            }
            _ => {}
        }
        i += 1;
    }
    out
}

fn is_ident_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

//! Line-oriented task files for fine-tuning and decoding.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Deserialize;

/// `{"source": ..., "target": ...}` per line.
#[derive(Debug, Clone, Deserialize)]
pub struct GenerationRecord {
    pub source: String,
    pub target: String,
}

/// `{"text": ..., "label": n}` or `{"text_a": ..., "text_b": ..., "label": n}`.
#[derive(Debug, Clone, Deserialize)]
pub struct ClassificationRecord {
    #[serde(alias = "text_a")]
    pub text: String,
    #[serde(default)]
    pub text_b: Option<String>,
    pub label: usize,
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        out.push(rec);
    }
    if out.is_empty() {
        bail!("{} holds no records", path.display());
    }
    Ok(out)
}

/// Every line of a text file, trailing newline removed.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Paths in a config file are relative to the file itself.
pub fn resolve(base: &Path, value: &str) -> PathBuf {
    let p = Path::new(value);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// `LANG=PATH`, or a bare path whose file stem names the language.
pub fn corpus_arg(arg: &str) -> Result<(String, PathBuf)> {
    if let Some((lang, path)) = arg.split_once('=') {
        if lang.is_empty() || path.is_empty() {
            bail!("corpus argument {arg:?} must be LANG=PATH or PATH");
        }
        return Ok((lang.to_string(), PathBuf::from(path)));
    }
    let path = PathBuf::from(arg);
    let lang = path
        .file_stem()
        .and_then(|s| s.to_str())
        .filter(|s| !s.is_empty())
        .with_context(|| format!("cannot take a language from {arg:?}; use LANG=PATH"))?
        .to_string();
    Ok((lang, path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_arguments() {
        assert_eq!(
            corpus_arg("java=a/b.jsonl").unwrap(),
            ("java".into(), PathBuf::from("a/b.jsonl"))
        );
        assert_eq!(
            corpus_arg("data/en.jsonl").unwrap(),
            ("en".into(), PathBuf::from("data/en.jsonl"))
        );
        assert!(corpus_arg("=x").is_err());
    }

    #[test]
    fn relative_paths_follow_the_config() {
        assert_eq!(resolve(Path::new("runs/a.cfg"), "v.json"), PathBuf::from("runs/v.json"));
        assert_eq!(resolve(Path::new("a.cfg"), "/abs/v.json"), PathBuf::from("/abs/v.json"));
    }

    #[test]
    fn classification_records() {
        let r: ClassificationRecord = serde_json::from_str(r#"{"text_a":"a","text_b":"b","label":1}"#).unwrap();
        assert_eq!((r.text.as_str(), r.text_b.as_deref(), r.label), ("a", Some("b"), 1));
        let r: ClassificationRecord = serde_json::from_str(r#"{"text":"a","label":0}"#).unwrap();
        assert!(r.text_b.is_none());
    }
}

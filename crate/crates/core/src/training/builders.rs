use serde::{Deserialize, Serialize};

use crate::corpus::truncate;
use crate::error::{Error, Result};
use crate::tokenizer::{Vocabulary, EOS};

/// One generation row: `decoder_input` is the target shifted right behind the
/// target-language id, `target` ends in `</s>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationExample {
    pub encoder_input: Vec<u32>,
    pub decoder_input: Vec<u32>,
    pub target: Vec<u32>,
}

impl GenerationExample {
    /// Target ids without the trailing `</s>`.
    pub fn reference(&self) -> &[u32] {
        &self.target[..self.target.len() - 1]
    }

    pub fn row(&self) -> (Vec<u32>, Vec<u32>, Vec<u32>) {
        (
            self.encoder_input.clone(),
            self.decoder_input.clone(),
            self.target.clone(),
        )
    }
}

/// Source ids are cut to `max_len` and target ids to `max_len - 1` (room for
/// the language id or `</s>`); the result must still fit `max_positions`.
pub fn build_generation_example(
    source_text: &str,
    target_text: &str,
    source_lang: &str,
    target_lang: &str,
    vocab: &Vocabulary,
    max_len: usize,
    max_positions: usize,
) -> Result<GenerationExample> {
    if source_text.trim().is_empty() {
        return Err(Error::EmptyInput("generation source"));
    }
    if target_text.trim().is_empty() {
        return Err(Error::EmptyInput("generation target"));
    }
    if max_len < 2 {
        return Err(Error::Config("max_len must be at least 2".into()));
    }
    vocab.language_id(source_lang)?;
    let lang = vocab.language_id(target_lang)?;
    let encoder_input = truncate(&vocab.encode(source_text), max_len);
    let body = truncate(&vocab.encode(target_text), max_len - 1);
    let mut decoder_input = Vec::with_capacity(body.len() + 1);
    decoder_input.push(lang);
    decoder_input.extend_from_slice(&body);
    let mut target = body;
    target.push(EOS);
    let longest = encoder_input.len().max(target.len());
    if longest > max_positions {
        return Err(Error::PositionOverflow {
            len: longest,
            limit: max_positions,
        });
    }
    Ok(GenerationExample {
        encoder_input,
        decoder_input,
        target,
    })
}

/// `a </s>` or `a </s> b </s>`. The same ids feed encoder and decoder.
pub fn build_classification_example(text_a: &str, text_b: Option<&str>, vocab: &Vocabulary) -> Result<Vec<u32>> {
    if text_a.trim().is_empty() {
        return Err(Error::EmptyInput("classification input"));
    }
    let mut ids = vocab.encode(text_a);
    ids.push(EOS);
    if let Some(b) = text_b {
        ids.extend(vocab.encode(b));
        ids.push(EOS);
    }
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::RawInstance;
    use crate::tokenizer::train_subword;

    fn vocab() -> Vocabulary {
        let corpus: Vec<RawInstance> = ["int add ( int a , int b ) { return a + b ; }", "adds two numbers"]
            .iter()
            .map(|t| RawInstance {
                text: t.to_string(),
                language: "java".into(),
                source_id: String::new(),
            })
            .collect();
        train_subword(&corpus, 300, 1.0, 0)
            .unwrap()
            .add_language_ids(&["java", "en_XX"])
            .unwrap()
    }

    #[test]
    fn summarization_prefix_is_target_language() {
        let v = vocab();
        let ex = build_generation_example("int add ( int a )", "adds numbers", "java", "en_XX", &v, 64, 64).unwrap();
        assert_eq!(ex.decoder_input[0], v.language_id("en_XX").unwrap());
        assert_eq!(&ex.decoder_input[1..], ex.reference());
        assert_eq!(*ex.target.last().unwrap(), EOS);
        assert_eq!(ex.encoder_input, v.encode("int add ( int a )"));
        assert_eq!(ex.decoder_input.len(), ex.target.len());
    }

    #[test]
    fn unseen_language_after_extension() {
        let v = vocab();
        assert!(build_generation_example("a", "b", "java", "cs", &v, 64, 64).is_err());
        let v = v.add_language_ids(&["cs"]).unwrap();
        let ex = build_generation_example("int a", "int b", "java", "cs", &v, 64, 64).unwrap();
        assert_eq!(ex.decoder_input[0], v.language_id("cs").unwrap());
        assert_eq!(v.language_id("cs").unwrap() as usize, v.len() - 1);
    }

    #[test]
    fn empty_texts_rejected() {
        let v = vocab();
        assert!(build_generation_example("int a", "  ", "java", "en_XX", &v, 64, 64).is_err());
        assert!(build_generation_example("", "adds", "java", "en_XX", &v, 64, 64).is_err());
        assert!(build_classification_example("", None, &v).is_err());
    }

    #[test]
    fn truncation_and_position_limit() {
        let v = vocab();
        let ex = build_generation_example(
            "int add ( int a , int b ) { return a + b ; }",
            "adds two numbers adds two numbers",
            "java",
            "en_XX",
            &v,
            4,
            4,
        )
        .unwrap();
        assert_eq!(ex.encoder_input.len(), 4);
        assert_eq!(ex.target.len(), 4);
        let err = build_generation_example("int add", "adds two numbers", "java", "en_XX", &v, 16, 3).unwrap_err();
        assert!(matches!(err, Error::PositionOverflow { limit: 3, .. }));
    }

    #[test]
    fn classification_eos_layout() {
        let v = vocab();
        let single = build_classification_example("int a", None, &v).unwrap();
        assert_eq!(single.iter().filter(|&&t| t == EOS).count(), 1);
        assert_eq!(*single.last().unwrap(), EOS);

        let pair = build_classification_example("int a", Some("int b"), &v).unwrap();
        let eos: Vec<usize> = pair
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == EOS)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(eos.len(), 2);
        assert_eq!(eos[0], v.encode("int a").len());
        assert_eq!(eos[1], pair.len() - 1);
    }
}

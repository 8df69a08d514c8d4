//! Word-level vocabulary over the controlled report language plus 101
//! two-decimal coordinate tokens.

use std::collections::HashMap;
use std::path::Path;

use crate::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
/// Pool token appended to unimodal text encoder inputs.
pub const CLS: u32 = 3;

/// Fixed-order token table with word-level tokenization.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

/// Grammar words, in canonical order. Coordinate tokens "0.00".."1.00" are
/// appended after these.
const WORDS: &[&str] = &[
    // punctuation
    ".", ",", "[", "]",
    // function words
    "the", "is", "are", "at", "has", "have", "no", "of", "in", "to", "a",
    // report scaffolding
    "lungs", "lung", "clear", "present", "seen", "extent", "study", "examination",
    "follow-up", "image", "coordinates", "for", "current", "contours", "mediastinal",
    "pulmonary",
    // comparison language
    "worsened", "improved", "unchanged", "worsening", "improving", "increased",
    "decreased", "new", "resolved", "stable", "prior", "previous", "compared",
    "again", "interval", "since", "persistent", "re-demonstrated",
    // severities
    "mild", "moderate", "severe",
    // conditions
    "pneumonia", "pleural", "effusion", "edema", "consolidation", "pneumothorax",
    // organs
    "left", "right", "apical", "zone", "costophrenic", "angle", "hilar",
    "structures", "lower",
];

impl Vocabulary {
    /// The built-in vocabulary: specials, grammar words, coordinate tokens.
    pub fn default_vocab() -> Self {
        let mut tokens: Vec<String> = vec![
            "<pad>".into(),
            "<bos>".into(),
            "<eos>".into(),
            "<cls>".into(),
        ];
        tokens.extend(WORDS.iter().map(|w| w.to_string()));
        for i in 0..=100u32 {
            tokens.push(format!("{:.2}", i as f64 / 100.0));
        }
        Self::from_tokens(tokens).expect("built-in vocabulary is valid")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Vocab(format!("duplicate token '{t}'")));
            }
        }
        for (id, name) in [(PAD, "<pad>"), (BOS, "<bos>"), (EOS, "<eos>"), (CLS, "<cls>")] {
            if tokens.get(id as usize).map(String::as_str) != Some(name) {
                return Err(Error::Vocab(format!("token {id} must be {name}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Result<u32> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| Error::Vocab(format!("unknown token '{token}'")))
    }

    pub fn token(&self, id: u32) -> Result<&str> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or_else(|| Error::Vocab(format!("token id {id} out of range")))
    }

    /// Newline-delimited token file with fixed ordering.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.tokens.join("\n") + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_tokens(text.lines().map(|l| l.to_string()).collect())
    }

    /// Word-level tokenization: whitespace-separated words; `[`, `]`, `,`
    /// and the sentence period are their own tokens; two-decimal numbers
    /// stay whole.
    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        let mut ids = Vec::new();
        for piece in lex(text) {
            ids.push(self.id(piece)?);
        }
        Ok(ids)
    }

    /// Inverse of [`Vocabulary::encode`] up to canonical spacing; special
    /// tokens are skipped. Coordinate lists print without inner spaces.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut out = String::new();
        let mut depth = 0usize;
        for &id in ids {
            if id <= CLS {
                continue;
            }
            let tok = self.token(id)?;
            if tok == "]" {
                depth = depth.saturating_sub(1);
            }
            let no_space_before =
                depth > 0 || matches!(tok, "." | "," | "]") || out.ends_with('[') || out.is_empty();
            if !no_space_before {
                out.push(' ');
            }
            out.push_str(tok);
            if tok == "[" {
                depth += 1;
            }
        }
        Ok(out)
    }
}

/// Split text into vocabulary pieces (see [`Vocabulary::encode`]).
fn lex(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b.is_ascii_whitespace() {
            i += 1;
        } else if b == b'[' || b == b']' || b == b',' {
            out.push(&text[i..i + 1]);
            i += 1;
        } else if b == b'.' {
            // A period inside a number was consumed by the number branch,
            // so this is sentence punctuation.
            out.push(&text[i..i + 1]);
            i += 1;
        } else if b.is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'.' && i + 1 < bytes.len() && bytes[i + 1].is_ascii_digit()
            {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            out.push(&text[start..i]);
        } else {
            let start = i;
            while i < bytes.len() {
                let c = bytes[i];
                if c.is_ascii_whitespace() || c == b'[' || c == b']' || c == b',' || c == b'.' {
                    break;
                }
                i += 1;
            }
            out.push(&text[start..i]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar_sentences_tokenize() {
        let v = Vocabulary::default_vocab();
        let text = "pneumonia worsened at left lower lung zone, coordinates for current \
                    image is [0.10,0.45,0.55,0.90], coordinates for previous image is \
                    [0.12,0.40,0.58,0.88].";
        let ids = v.encode(text).unwrap();
        assert!(ids.len() > 20);
        let back = v.decode(&ids).unwrap();
        assert_eq!(back, text.split_whitespace().collect::<Vec<_>>().join(" "));
    }

    #[test]
    fn unknown_token_is_an_error() {
        let v = Vocabulary::default_vocab();
        let err = v.encode("florid cardiomegaly.").unwrap_err();
        assert!(matches!(err, Error::Vocab(_)));
    }

    #[test]
    fn coordinate_tokens_cover_the_unit_interval() {
        let v = Vocabulary::default_vocab();
        assert!(v.id("0.00").is_ok());
        assert!(v.id("0.57").is_ok());
        assert!(v.id("1.00").is_ok());
        assert!(v.id("1.01").is_err());
    }

    #[test]
    fn save_load_preserves_ordering() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = Vocabulary::default_vocab();
        v.save(&path).unwrap();
        let u = Vocabulary::load(&path).unwrap();
        assert_eq!(u.len(), v.len());
        assert_eq!(u.id("worsened").unwrap(), v.id("worsened").unwrap());
    }

    #[test]
    fn class_tokens_are_single_vocabulary_items() {
        let v = Vocabulary::default_vocab();
        for w in ["worsened", "unchanged", "improved"] {
            assert_eq!(v.encode(w).unwrap().len(), 1);
        }
    }
}

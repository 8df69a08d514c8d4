//! The comparison lexicon: flip pairs, fixed points, and marker terms.

use std::collections::BTreeMap;

use crate::{Error, Result};

/// Vocabulary of comparison language.
///
/// `flips` maps every member of a flip pair to its partner (both directions)
/// and every fixed point to itself; `markers` are words that signal a
/// reference to a prior study without being flippable themselves.
#[derive(Debug, Clone)]
pub struct ComparisonLexicon {
    flips: BTreeMap<String, String>,
    fixed: Vec<String>,
    markers: Vec<String>,
}

impl Default for ComparisonLexicon {
    fn default() -> Self {
        let pairs = [
            ("worsened", "improved"),
            ("worsening", "improving"),
            ("increased", "decreased"),
            ("new", "resolved"),
        ];
        let fixed = ["unchanged", "stable"];
        let markers = [
            "prior",
            "previous",
            "compared",
            "again",
            "interval",
            "since",
            "persistent",
            "re-demonstrated",
        ];
        let mut flips = BTreeMap::new();
        for (a, b) in pairs {
            flips.insert(a.to_string(), b.to_string());
            flips.insert(b.to_string(), a.to_string());
        }
        for f in fixed {
            flips.insert(f.to_string(), f.to_string());
        }
        ComparisonLexicon {
            flips,
            fixed: fixed.iter().map(|s| s.to_string()).collect(),
            markers: markers.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl ComparisonLexicon {
    /// Partner of a flip-pair word, or the word itself for fixed points.
    pub fn flip_word<'a>(&'a self, word: &str) -> Option<&'a str> {
        self.flips.get(word).map(|s| s.as_str())
    }

    /// Word that describes change (member of a flip pair or fixed point).
    pub fn is_comparison_term(&self, word: &str) -> bool {
        self.flips.contains_key(word)
    }

    /// Word that references a prior study.
    pub fn is_marker(&self, word: &str) -> bool {
        self.markers.iter().any(|m| m == word)
    }

    /// Any lexicon term at all.
    pub fn is_term(&self, word: &str) -> bool {
        self.is_comparison_term(word) || self.is_marker(word)
    }

    /// Does the sentence contain any lexicon term?
    pub fn sentence_has_term(&self, sentence: &str) -> bool {
        words_of(sentence).any(|w| self.is_term(w))
    }

    pub fn fixed_points(&self) -> &[String] {
        &self.fixed
    }

    pub fn markers(&self) -> &[String] {
        &self.markers
    }

    /// Check the involution invariant: flip(flip(w)) == w for every entry.
    pub fn validate(&self) -> Result<()> {
        for (w, partner) in &self.flips {
            let back = self
                .flips
                .get(partner)
                .ok_or_else(|| Error::config(format!("'{partner}' has no flip entry")))?;
            if back != w {
                return Err(Error::config(format!(
                    "flip map not an involution: {w} -> {partner} -> {back}"
                )));
            }
        }
        for f in &self.fixed {
            if self.flips.get(f).map(String::as_str) != Some(f.as_str()) {
                return Err(Error::config(format!("fixed point '{f}' does not map to itself")));
            }
        }
        Ok(())
    }
}

/// Iterate the words of a sentence, stripping sentence punctuation but
/// keeping in-word hyphens (for "re-demonstrated").
pub fn words_of(sentence: &str) -> impl Iterator<Item = &str> {
    sentence
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| c == '.' || c == ','))
        .filter(|w| !w.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_lexicon_is_involutive() {
        ComparisonLexicon::default().validate().unwrap();
    }

    #[test]
    fn flip_pairs_and_fixed_points() {
        let lex = ComparisonLexicon::default();
        assert_eq!(lex.flip_word("worsened"), Some("improved"));
        assert_eq!(lex.flip_word("improved"), Some("worsened"));
        assert_eq!(lex.flip_word("new"), Some("resolved"));
        assert_eq!(lex.flip_word("unchanged"), Some("unchanged"));
        assert_eq!(lex.flip_word("stable"), Some("stable"));
        assert_eq!(lex.flip_word("pneumonia"), None);
    }

    #[test]
    fn marker_detection() {
        let lex = ComparisonLexicon::default();
        assert!(lex.sentence_has_term("compared to the prior study."));
        assert!(lex.sentence_has_term("rib fractures are re-demonstrated."));
        assert!(!lex.sentence_has_term("pneumonia is present at left lung."));
    }
}

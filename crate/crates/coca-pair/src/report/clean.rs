//! Cleaning, comparison extraction, and comparison reversal over the
//! controlled report language.

use super::lexicon::{words_of, ComparisonLexicon};
use super::Report;

/// What cleaning decided to do with one sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CleanAction {
    /// No comparison content; kept verbatim.
    Keep,
    /// Comparison whose present status is inferable; rewritten.
    Rewrite(String),
    /// Pure comparison (no inferable current status); dropped.
    Drop,
    /// Comparison content in a shape the grammar does not recognize.
    Reject,
}

/// Trailing clauses that only anchor a comparison to the prior study.
const MARKER_CLAUSES: [&str; 2] = [
    " compared to the prior study",
    " since the previous examination",
];

fn strip_marker_clause(body: &str) -> &str {
    for clause in MARKER_CLAUSES {
        if let Some(head) = body.strip_suffix(clause) {
            return head;
        }
    }
    body
}

/// Classify and, where possible, rewrite a single sentence.
pub fn clean_sentence(sentence: &str, lex: &ComparisonLexicon) -> CleanAction {
    if !lex.sentence_has_term(sentence) {
        return CleanAction::Keep;
    }
    let body = sentence.trim().trim_end_matches('.');
    let body = strip_marker_clause(body);

    // "worsening X" / "improving X"  ->  "X is present."
    for prefix in ["worsening ", "improving "] {
        if let Some(rest) = body.strip_prefix(prefix) {
            if !lex.sentence_has_term(rest) {
                return CleanAction::Rewrite(format!("{rest} is present."));
            }
        }
    }

    // "new X [at Y]"  ->  "X is present [at Y]."
    if let Some(rest) = body.strip_prefix("new ") {
        if !lex.sentence_has_term(rest) {
            return match rest.split_once(" at ") {
                Some((what, place)) => {
                    CleanAction::Rewrite(format!("{what} is present at {place}."))
                }
                None => CleanAction::Rewrite(format!("{rest} is present.")),
            };
        }
    }

    // "X is worsened|improved [at Y]"  ->  "X is present [at Y]."
    for cls in ["worsened", "improved"] {
        let infix = format!(" is {cls}");
        if let Some(idx) = body.find(&infix) {
            let subject = &body[..idx];
            let tail = &body[idx + infix.len()..];
            let ok_tail = tail.is_empty() || tail.starts_with(" at ");
            if ok_tail && !lex.sentence_has_term(subject) && !lex.sentence_has_term(tail) {
                return CleanAction::Rewrite(format!("{subject} is present{tail}."));
            }
        }
    }

    // "X at Y has increased|decreased in extent"  ->  "X is present at Y."
    for cls in ["increased", "decreased"] {
        let suffix = format!(" has {cls} in extent");
        if let Some(head) = body.strip_suffix(&suffix) {
            if let Some((what, place)) = head.split_once(" at ") {
                if !lex.sentence_has_term(what) && !lex.sentence_has_term(place) {
                    return CleanAction::Rewrite(format!("{what} is present at {place}."));
                }
            }
        }
    }

    // Pure comparisons: nothing about the current image can be asserted.
    let droppable = [" is unchanged", " are unchanged", " is stable", " are stable"];
    if droppable.iter().any(|p| body.contains(p)) || body.ends_with(" has resolved") {
        return CleanAction::Drop;
    }

    CleanAction::Reject
}

/// Result of [`clean_report`].
#[derive(Debug, Clone)]
pub struct CleanedReport {
    pub report: Report,
    /// Sentences with comparison content the grammar could not handle.
    pub rejects: Vec<String>,
}

/// Remove comparison content from a report: keep plain descriptions,
/// rewrite comparisons whose present status is inferable, drop pure
/// comparisons, and collect anything unrecognized into `rejects`.
pub fn clean_report(report: &Report, lex: &ComparisonLexicon) -> CleanedReport {
    let mut rejects = Vec::new();
    let mut process = |sentences: &[String]| -> Vec<String> {
        let mut out = Vec::new();
        for s in sentences {
            match clean_sentence(s, lex) {
                CleanAction::Keep => out.push(s.clone()),
                CleanAction::Rewrite(r) => out.push(r),
                CleanAction::Drop => {}
                CleanAction::Reject => rejects.push(s.clone()),
            }
        }
        out
    };
    let findings = process(&report.findings);
    let impression = process(&report.impression);
    CleanedReport {
        report: Report {
            indication: report.indication.clone(),
            findings,
            impression,
        },
        rejects,
    }
}

/// Exactly the sentences containing at least one lexicon term, in their
/// original order (findings first, then impression).
pub fn extract_comparisons(report: &Report, lex: &ComparisonLexicon) -> Vec<String> {
    report
        .findings
        .iter()
        .chain(report.impression.iter())
        .filter(|s| lex.sentence_has_term(s))
        .cloned()
        .collect()
}

/// Reverse the temporal direction of a comparison sentence.
///
/// Appearance/disappearance swaps structurally (`new X.` <-> `X has
/// resolved.`); every other flip-pair term is replaced by its partner in
/// one simultaneous pass, leaving fixed points untouched.
pub fn reverse_comparison_text(sentence: &str, lex: &ComparisonLexicon) -> String {
    let trimmed = sentence.trim();
    let body = trimmed.strip_suffix('.').unwrap_or(trimmed);

    if let Some(rest) = body.strip_prefix("new ") {
        return format!("{rest} has resolved.");
    }
    if let Some(head) = body.strip_suffix(" has resolved") {
        return format!("new {head}.");
    }

    let flipped: Vec<String> = body
        .split(' ')
        .map(|w| match lex.flip_word(w) {
            Some(partner) => partner.to_string(),
            None => w.to_string(),
        })
        .collect();
    format!("{}.", flipped.join(" "))
}

/// A sentence contains no lexicon term at all (used to verify cleaning).
pub fn is_marker_free(sentence: &str, lex: &ComparisonLexicon) -> bool {
    !words_of(sentence).any(|w| lex.is_term(w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::annotation::{Condition, Organ, ProgressionLabel};
    use crate::report::grammar::*;

    fn lex() -> ComparisonLexicon {
        ComparisonLexicon::default()
    }

    #[test]
    fn worsening_rewrites_to_present() {
        assert_eq!(
            clean_sentence("worsening pleural effusion.", &lex()),
            CleanAction::Rewrite("pleural effusion is present.".to_string())
        );
    }

    #[test]
    fn unchanged_contours_are_dropped() {
        assert_eq!(
            clean_sentence("mediastinal contours are unchanged.", &lex()),
            CleanAction::Drop
        );
    }

    #[test]
    fn marker_free_sentences_are_kept() {
        assert_eq!(
            clean_sentence("mild pneumonia is present at left lung.", &lex()),
            CleanAction::Keep
        );
    }

    #[test]
    fn progression_with_marker_clause_rewrites() {
        let s = progression_marker_sentence(
            Condition::Edema,
            ProgressionLabel::Worsened,
            Organ::RightLung,
        );
        assert_eq!(
            clean_sentence(&s, &lex()),
            CleanAction::Rewrite("edema is present at right lung.".to_string())
        );
    }

    #[test]
    fn new_lesion_rewrites_with_location() {
        let s = new_lesion_sentence(Severity::Mild, Condition::Pneumonia, Organ::LeftLung);
        assert_eq!(
            clean_sentence(&s, &lex()),
            CleanAction::Rewrite("mild pneumonia is present at left lung.".to_string())
        );
    }

    #[test]
    fn resolved_and_stable_drop_unknown_rejects() {
        let s = resolved_lesion_sentence(Severity::Mild, Condition::Edema, Organ::LeftLung);
        assert_eq!(clean_sentence(&s, &lex()), CleanAction::Drop);
        let s = stable_sentence(Condition::Edema, Organ::LeftLung);
        assert_eq!(clean_sentence(&s, &lex()), CleanAction::Drop);
        // Marker term in an unrecognized shape goes to rejects.
        assert_eq!(
            clean_sentence("clips are again seen over the left breast.", &lex()),
            CleanAction::Reject
        );
    }

    #[test]
    fn clean_report_has_no_lexicon_terms_left() {
        let report = Report {
            indication: "follow-up examination.".into(),
            findings: vec![
                status_sentence(Severity::Mild, Condition::Pneumonia, Organ::LeftLung),
                new_lesion_sentence(Severity::Severe, Condition::Edema, Organ::RightLung),
                extent_sentence(Condition::Pneumonia, Organ::LeftLung, true),
            ],
            impression: vec![
                progression_sentence(Condition::Pneumonia, ProgressionLabel::Worsened, Organ::LeftLung),
                unchanged_marker_sentence(Condition::Edema),
            ],
        };
        let cleaned = clean_report(&report, &lex());
        assert!(cleaned.rejects.is_empty());
        for s in cleaned.report.findings.iter().chain(&cleaned.report.impression) {
            assert!(is_marker_free(s, &lex()), "term survived cleaning: {s}");
        }
        // Drops removed the unchanged sentence entirely.
        assert_eq!(cleaned.report.impression.len(), 1);
    }

    #[test]
    fn no_marker_report_is_a_fixed_point() {
        let report = Report {
            indication: String::new(),
            findings: vec![
                "mild pneumonia is present at left lung.".to_string(),
                "the lungs are clear.".to_string(),
            ],
            impression: vec![],
        };
        let cleaned = clean_report(&report, &lex());
        assert_eq!(cleaned.report.findings, report.findings);
        assert!(cleaned.rejects.is_empty());
    }

    #[test]
    fn reversal_examples() {
        assert_eq!(
            reverse_comparison_text("improved pneumonia.", &lex()),
            "worsened pneumonia."
        );
        assert_eq!(
            reverse_comparison_text("new mild pulmonary edema.", &lex()),
            "mild pulmonary edema has resolved."
        );
        assert_eq!(
            reverse_comparison_text("mild pulmonary edema has resolved.", &lex()),
            "new mild pulmonary edema."
        );
        assert_eq!(
            reverse_comparison_text(
                "pneumonia is unchanged since the previous examination.",
                &lex()
            ),
            "pneumonia is unchanged since the previous examination."
        );
    }

    #[test]
    fn reversal_is_an_involution_on_grammar_sentences() {
        let l = lex();
        let sentences = [
            progression_sentence(Condition::Pneumonia, ProgressionLabel::Worsened, Organ::LeftLung),
            progression_marker_sentence(
                Condition::PleuralEffusion,
                ProgressionLabel::Improved,
                Organ::RightLowerLungZone,
            ),
            new_lesion_sentence(Severity::Moderate, Condition::Edema, Organ::LeftApicalZone),
            resolved_lesion_sentence(Severity::Mild, Condition::Pneumothorax, Organ::RightLung),
            extent_sentence(Condition::Consolidation, Organ::LeftLung, true),
            stable_sentence(Condition::Pneumonia, Organ::RightHilarStructures),
            unchanged_marker_sentence(Condition::Edema),
            short_trend_sentence(Condition::PleuralEffusion, true),
        ];
        for s in sentences {
            let twice = reverse_comparison_text(&reverse_comparison_text(&s, &l), &l);
            assert_eq!(twice, s, "not involutive: {s}");
        }
    }

    #[test]
    fn extraction_partitions_the_report() {
        let l = lex();
        let comparison =
            progression_sentence(Condition::Pneumonia, ProgressionLabel::Improved, Organ::LeftLung);
        let plain = "mild pneumonia is present at left lung.".to_string();
        let report = Report {
            indication: String::new(),
            findings: vec![plain.clone(), comparison.clone()],
            impression: vec![lungs_clear_sentence()],
        };
        let extracted = extract_comparisons(&report, &l);
        assert_eq!(extracted, vec![comparison.clone()]);
        let cleaned = clean_report(&report, &l);
        // Every input sentence lands in exactly one bucket.
        for s in report.findings.iter().chain(&report.impression) {
            let in_extract = extracted.contains(s);
            let in_clean_verbatim = cleaned.report.findings.contains(s)
                || cleaned.report.impression.contains(s);
            let in_rejects = cleaned.rejects.contains(s);
            let count = [in_extract, in_clean_verbatim, in_rejects]
                .iter()
                .filter(|b| **b)
                .count();
            assert_eq!(count, 1, "sentence in {count} buckets: {s}");
        }
    }
}

//! Report structuring: the controlled report language, sectioned reports,
//! comparison extraction/reversal, cleaning, and scene annotations.

pub mod annotation;
pub mod clean;
pub mod grammar;
pub mod lexicon;

pub use annotation::{
    parse_annotation_text, parse_scene_annotation, serialize_scene_annotation, BoxCoords,
    Condition, Organ, ProgressionLabel, SceneAnnotation,
};
pub use clean::{
    clean_report, clean_sentence, extract_comparisons, is_marker_free, reverse_comparison_text,
    CleanAction, CleanedReport,
};
pub use grammar::Severity;
pub use lexicon::ComparisonLexicon;

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A sectioned report. Findings and impression are sentence lists; every
/// sentence ends with a period.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub indication: String,
    pub findings: Vec<String>,
    pub impression: Vec<String>,
}

impl Report {
    /// All body sentences (findings then impression).
    pub fn sentences(&self) -> impl Iterator<Item = &String> {
        self.findings.iter().chain(self.impression.iter())
    }

    /// Findings + impression joined into one text.
    pub fn body_text(&self) -> String {
        self.sentences().cloned().collect::<Vec<_>>().join(" ")
    }
}

/// Split text into sentences at a period followed by whitespace or end of
/// input. Periods inside coordinates ("0.10") never qualify.
pub fn split_sentences(text: &str) -> Vec<String> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'.' {
            let at_end = i + 1 == bytes.len();
            if at_end || bytes[i + 1].is_ascii_whitespace() {
                let s = text[start..=i].trim();
                if !s.is_empty() {
                    out.push(s.to_string());
                }
                start = i + 1;
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    out
}

/// Parse one sectioned-report record of the form
/// `INDICATION: ... FINDINGS: ... IMPRESSION: ...`.
pub fn parse_sectioned_report(line: &str) -> Result<Report> {
    let fpos = line
        .find("FINDINGS:")
        .ok_or_else(|| Error::parse(0, "missing FINDINGS: header"))?;
    let ipos = line
        .find("IMPRESSION:")
        .ok_or_else(|| Error::parse(0, "missing IMPRESSION: header"))?;
    if ipos < fpos {
        return Err(Error::parse(ipos, "IMPRESSION: before FINDINGS:"));
    }
    let indication = match line.find("INDICATION:") {
        Some(p) if p < fpos => line[p + "INDICATION:".len()..fpos].trim().to_string(),
        _ => String::new(),
    };
    let findings = split_sentences(&line[fpos + "FINDINGS:".len()..ipos]);
    let impression = split_sentences(&line[ipos + "IMPRESSION:".len()..]);
    Ok(Report {
        indication,
        findings,
        impression,
    })
}

/// Render a report as one sectioned line.
pub fn format_sectioned_report(r: &Report) -> String {
    format!(
        "INDICATION: {} FINDINGS: {} IMPRESSION: {}",
        r.indication,
        r.findings.join(" "),
        r.impression.join(" ")
    )
}

/// One line of a structured record file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub study_id: String,
    pub text: String,
    pub kind: String,
}

/// Write records as JSON lines.
pub fn write_records(path: &Path, records: &[Record]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Read a JSON-lines record file.
pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentence_splitting_respects_decimals() {
        let text = "pneumonia worsened at left lung, coordinates for current image is \
                    [0.10,0.45,0.55,0.90], coordinates for previous image is \
                    [0.12,0.40,0.58,0.88]. the lungs are clear.";
        let s = split_sentences(text);
        assert_eq!(s.len(), 2);
        assert!(s[0].ends_with("[0.12,0.40,0.58,0.88]."));
        assert_eq!(s[1], "the lungs are clear.");
    }

    #[test]
    fn sectioned_roundtrip() {
        let r = Report {
            indication: "follow-up examination.".into(),
            findings: vec![
                "mild pneumonia is present at left lung.".into(),
                "the lungs are clear.".into(),
            ],
            impression: vec!["pneumonia is worsened at left lung.".into()],
        };
        let line = format_sectioned_report(&r);
        let back = parse_sectioned_report(&line).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn missing_headers_are_errors() {
        assert!(parse_sectioned_report("just text with no headers.").is_err());
    }

    #[test]
    fn record_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let records = vec![
            Record {
                study_id: "000007".into(),
                text: "pneumonia is worsened at left lung.".into(),
                kind: "comparison".into(),
            },
            Record {
                study_id: "000007:rev".into(),
                text: "pneumonia is improved at left lung.".into(),
                kind: "comparison".into(),
            },
        ];
        write_records(&path, &records).unwrap();
        assert_eq!(read_records(&path).unwrap(), records);
    }
}

//! Scene annotations: condition / progression / organ / paired boxes, and
//! their exact text template.
//!
//! Template: `[condition] [progression] at [organ], coordinates for current
//! image is [x1,x2,y1,y2], coordinates for previous image is [x1,x2,y1,y2].`
//! with two-decimal coordinates.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// The five pulmonary conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    Pneumonia,
    PleuralEffusion,
    Edema,
    Consolidation,
    Pneumothorax,
}

impl Condition {
    pub const ALL: [Condition; 5] = [
        Condition::Pneumonia,
        Condition::PleuralEffusion,
        Condition::Edema,
        Condition::Consolidation,
        Condition::Pneumothorax,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Pneumonia => "pneumonia",
            Condition::PleuralEffusion => "pleural effusion",
            Condition::Edema => "edema",
            Condition::Consolidation => "consolidation",
            Condition::Pneumothorax => "pneumothorax",
        }
    }
}

/// The ten anatomical structures annotations may point at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Organ {
    LeftApicalZone,
    LeftCostophrenicAngle,
    LeftHilarStructures,
    LeftLowerLungZone,
    LeftLung,
    RightApicalZone,
    RightCostophrenicAngle,
    RightHilarStructures,
    RightLowerLungZone,
    RightLung,
}

impl Organ {
    pub const ALL: [Organ; 10] = [
        Organ::LeftApicalZone,
        Organ::LeftCostophrenicAngle,
        Organ::LeftHilarStructures,
        Organ::LeftLowerLungZone,
        Organ::LeftLung,
        Organ::RightApicalZone,
        Organ::RightCostophrenicAngle,
        Organ::RightHilarStructures,
        Organ::RightLowerLungZone,
        Organ::RightLung,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Organ::LeftApicalZone => "left apical zone",
            Organ::LeftCostophrenicAngle => "left costophrenic angle",
            Organ::LeftHilarStructures => "left hilar structures",
            Organ::LeftLowerLungZone => "left lower lung zone",
            Organ::LeftLung => "left lung",
            Organ::RightApicalZone => "right apical zone",
            Organ::RightCostophrenicAngle => "right costophrenic angle",
            Organ::RightHilarStructures => "right hilar structures",
            Organ::RightLowerLungZone => "right lower lung zone",
            Organ::RightLung => "right lung",
        }
    }
}

/// Three-way temporal change class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProgressionLabel {
    Worsened,
    Unchanged,
    Improved,
}

impl ProgressionLabel {
    pub const ALL: [ProgressionLabel; 3] = [
        ProgressionLabel::Worsened,
        ProgressionLabel::Unchanged,
        ProgressionLabel::Improved,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProgressionLabel::Worsened => "worsened",
            ProgressionLabel::Unchanged => "unchanged",
            ProgressionLabel::Improved => "improved",
        }
    }

    /// Label of the swapped image pair.
    pub fn flip(self) -> Self {
        match self {
            ProgressionLabel::Worsened => ProgressionLabel::Improved,
            ProgressionLabel::Unchanged => ProgressionLabel::Unchanged,
            ProgressionLabel::Improved => ProgressionLabel::Worsened,
        }
    }
}

/// Axis-aligned normalized box with `x1 < x2`, `y1 < y2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxCoords {
    pub x1: f64,
    pub x2: f64,
    pub y1: f64,
    pub y2: f64,
}

impl BoxCoords {
    pub fn new(x1: f64, x2: f64, y1: f64, y2: f64) -> Result<Self> {
        for (v, name) in [(x1, "x1"), (x2, "x2"), (y1, "y1"), (y2, "y2")] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::parse(0, format!("{name}={v} outside [0,1]")));
            }
        }
        if x1 >= x2 {
            return Err(Error::parse(0, format!("box ordering violated: x1={x1} >= x2={x2}")));
        }
        if y1 >= y2 {
            return Err(Error::parse(0, format!("box ordering violated: y1={y1} >= y2={y2}")));
        }
        Ok(BoxCoords { x1, x2, y1, y2 })
    }

    /// Snap all coordinates to two decimals (the template precision).
    pub fn rounded2(x1: f64, x2: f64, y1: f64, y2: f64) -> Result<Self> {
        let r = |v: f64| (v * 100.0).round() / 100.0;
        BoxCoords::new(r(x1), r(x2), r(y1), r(y2))
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    fn fmt_bracketed(&self) -> String {
        format!(
            "[{:.2},{:.2},{:.2},{:.2}]",
            self.x1, self.x2, self.y1, self.y2
        )
    }
}

/// One localized condition-progression fact about an image pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneAnnotation {
    pub condition: Condition,
    pub progression: ProgressionLabel,
    pub organ: Organ,
    pub box_current: BoxCoords,
    pub box_prior: BoxCoords,
}

impl SceneAnnotation {
    /// The reversed-pair form: boxes swapped, progression flipped.
    pub fn reversed(&self) -> Self {
        SceneAnnotation {
            condition: self.condition,
            progression: self.progression.flip(),
            organ: self.organ,
            box_current: self.box_prior,
            box_prior: self.box_current,
        }
    }
}

/// Render the exact annotation template.
pub fn serialize_scene_annotation(a: &SceneAnnotation) -> String {
    format!(
        "{} {} at {}, coordinates for current image is {}, coordinates for previous image is {}.",
        a.condition.as_str(),
        a.progression.as_str(),
        a.organ.as_str(),
        a.box_current.fmt_bracketed(),
        a.box_prior.fmt_bracketed(),
    )
}

// ── Parsing ─────────────────────────────────────────────────────────

struct Cursor<'a> {
    input: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(input: &'a str) -> Self {
        Cursor { input, pos: 0 }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.input.len()
            && self.input.as_bytes()[self.pos].is_ascii_whitespace()
        {
            self.pos += 1;
        }
    }

    fn rest(&self) -> &'a str {
        &self.input[self.pos..]
    }

    /// Consume a literal (used for multi-word names and punctuation).
    fn eat(&mut self, lit: &str) -> bool {
        self.skip_ws();
        if self.rest().starts_with(lit) {
            self.pos += lit.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, lit: &str, what: &str) -> Result<()> {
        if self.eat(lit) {
            Ok(())
        } else {
            Err(Error::parse(self.pos, format!("expected {what} ('{lit}')")))
        }
    }

    fn word(&mut self) -> (usize, &'a str) {
        self.skip_ws();
        let start = self.pos;
        let bytes = self.input.as_bytes();
        while self.pos < self.input.len() {
            let b = bytes[self.pos];
            if b.is_ascii_whitespace() || b == b',' || b == b'[' || b == b']' || b == b'.' {
                break;
            }
            self.pos += 1;
        }
        (start, &self.input[start..self.pos])
    }

    fn number(&mut self) -> Result<f64> {
        self.skip_ws();
        let start = self.pos;
        let bytes = self.input.as_bytes();
        while self.pos < self.input.len() {
            let b = bytes[self.pos];
            if b.is_ascii_digit() || b == b'.' || b == b'-' {
                self.pos += 1;
            } else {
                break;
            }
        }
        self.input[start..self.pos]
            .parse::<f64>()
            .map_err(|_| Error::parse(start, "expected a coordinate"))
    }
}

fn parse_box(c: &mut Cursor) -> Result<BoxCoords> {
    let open = c.pos;
    c.expect("[", "opening bracket")?;
    let x1 = c.number()?;
    c.expect(",", "comma")?;
    let x2 = c.number()?;
    c.expect(",", "comma")?;
    let y1 = c.number()?;
    c.expect(",", "comma")?;
    let y2 = c.number()?;
    c.expect("]", "closing bracket")?;
    BoxCoords::rounded2(x1, x2, y1, y2).map_err(|e| match e {
        Error::Parse { message, .. } => Error::parse(open, message),
        other => other,
    })
}

/// Parse the annotation template; tolerant of extra whitespace.
pub fn parse_scene_annotation(s: &str) -> Result<SceneAnnotation> {
    let mut c = Cursor::new(s);
    c.skip_ws();

    let cond_pos = c.pos;
    let condition = Condition::ALL
        .into_iter()
        .find(|cond| c.eat(cond.as_str()))
        .ok_or_else(|| Error::parse(cond_pos, "unknown condition"))?;

    let (prog_pos, prog_word) = c.word();
    let progression = ProgressionLabel::ALL
        .into_iter()
        .find(|p| p.as_str() == prog_word)
        .ok_or_else(|| Error::parse(prog_pos, format!("unknown progression '{prog_word}'")))?;

    c.expect("at", "'at'")?;
    c.skip_ws();
    let organ_pos = c.pos;
    let organ = Organ::ALL
        .into_iter()
        .find(|o| c.eat(o.as_str()))
        .ok_or_else(|| Error::parse(organ_pos, "unknown organ"))?;

    c.expect(",", "comma")?;
    for w in ["coordinates", "for", "current", "image", "is"] {
        c.expect(w, "template word")?;
    }
    let box_current = parse_box(&mut c)?;
    c.expect(",", "comma")?;
    for w in ["coordinates", "for", "previous", "image", "is"] {
        c.expect(w, "template word")?;
    }
    let box_prior = parse_box(&mut c)?;
    c.expect(".", "final period")?;
    c.skip_ws();
    if !c.rest().is_empty() {
        return Err(Error::parse(c.pos, "trailing input after annotation"));
    }

    Ok(SceneAnnotation {
        condition,
        progression,
        organ,
        box_current,
        box_prior,
    })
}

/// Parse a text consisting of several annotation sentences; sentences that
/// fail to parse are returned separately.
pub fn parse_annotation_text(text: &str) -> (Vec<SceneAnnotation>, Vec<String>) {
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for sentence in crate::report::split_sentences(text) {
        match parse_scene_annotation(&sentence) {
            Ok(a) => ok.push(a),
            Err(_) => failed.push(sentence),
        }
    }
    (ok, failed)
}

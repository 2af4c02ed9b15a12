//! JSONL annotation records: one JSON object per line with `qid`, `vid`,
//! `query`, `duration`, `relevant_windows` (seconds) and `saliency_ratings`
//! (one integer per clip).

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::span::MomentSpan;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    #[serde(deserialize_with = "string_or_number")]
    pub qid: String,
    pub vid: String,
    pub query: String,
    pub duration: f64,
    pub relevant_windows: Vec<[f64; 2]>,
    pub saliency_ratings: Vec<i64>,
}

fn string_or_number<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        S(String),
        I(i64),
        U(u64),
    }
    Ok(match Id::deserialize(d)? {
        Id::S(s) => s,
        Id::I(i) => i.to_string(),
        Id::U(u) => u.to_string(),
    })
}

/// `ceil(duration / clip_len)`.
pub fn num_clips(duration: f64, clip_len: f64) -> usize {
    (duration / clip_len - 1e-9).ceil().max(0.0) as usize
}

impl AnnotationRecord {
    pub fn validate(&self, clip_len: f64) -> Result<()> {
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(Error::data(format!("qid {}: duration must be positive", self.qid)));
        }
        if self.relevant_windows.is_empty() {
            return Err(Error::data(format!("qid {}: no relevant windows", self.qid)));
        }
        for w in &self.relevant_windows {
            if !(0.0 <= w[0] && w[0] <= w[1] && w[1] <= self.duration) {
                return Err(Error::data(format!(
                    "qid {}: window [{}, {}] outside [0, {}]",
                    self.qid, w[0], w[1], self.duration
                )));
            }
        }
        let lv = num_clips(self.duration, clip_len);
        if self.saliency_ratings.len() != lv {
            return Err(Error::data(format!(
                "qid {}: {} saliency ratings for {lv} clips",
                self.qid,
                self.saliency_ratings.len()
            )));
        }
        Ok(())
    }

    pub fn normalized_moments(&self) -> Vec<MomentSpan> {
        self.relevant_windows
            .iter()
            .map(|w| MomentSpan::new(w[0] / self.duration, w[1] / self.duration))
            .collect()
    }

    pub fn saliency_labels(&self, threshold: i64) -> Vec<bool> {
        self.saliency_ratings.iter().map(|&r| r >= threshold).collect()
    }
}

pub fn parse_annotations(text: &str, clip_len: f64) -> Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnotationRecord =
            serde_json::from_str(line).map_err(|e| Error::data(format!("annotations line {}: {e}", i + 1)))?;
        rec.validate(clip_len)
            .map_err(|e| Error::data(format!("annotations line {}: {}", i + 1, e)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_annotations(path: &Path, clip_len: f64) -> Result<Vec<AnnotationRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        text.push_str(&line?);
        text.push('\n');
    }
    parse_annotations(&text, clip_len)
}

pub fn write_annotations(path: &Path, records: &[AnnotationRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

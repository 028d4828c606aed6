//! JSON-lines annotation files.
//!
//! One record per line with keys `qid`, `vid`, `duration`, `query`,
//! `relevant_windows` and the optional `saliency_scores` (one rating per clip)
//! and `verb_index` (word position of the query's verb). An optional first
//! line `{"saliency_scale": [min, max]}` declares the rating scale; `max` is
//! the "Very Good" rating. Without it the scale is 0..=4.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSpan {
    pub video_id: String,
    pub start: f64,
    pub end: f64,
}

impl MomentSpan {
    pub fn new(video_id: impl Into<String>, start: f64, end: f64) -> Self {
        Self {
            video_id: video_id.into(),
            start,
            end,
        }
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    /// Length of the intersection; zero across videos.
    pub fn overlap(&self, other: &MomentSpan) -> f64 {
        if self.video_id != other.video_id {
            return 0.0;
        }
        (self.end.min(other.end) - self.start.max(other.start)).max(0.0)
    }

    pub fn validate(&self, duration: f64) -> std::result::Result<(), String> {
        if !(self.start.is_finite() && self.end.is_finite()) {
            return Err(format!("window [{}, {}] is not finite", self.start, self.end));
        }
        if self.start < 0.0 || self.start >= self.end || self.end > duration {
            return Err(format!(
                "window [{}, {}] must satisfy 0 <= start < end <= duration {duration}",
                self.start, self.end
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaliencyScale {
    pub min: u32,
    pub max: u32,
}

impl Default for SaliencyScale {
    fn default() -> Self {
        Self { min: 0, max: 4 }
    }
}

impl SaliencyScale {
    pub fn very_good(&self) -> u32 {
        self.max
    }

    pub fn contains(&self, rating: u32) -> bool {
        (self.min..=self.max).contains(&rating)
    }
}

fn string_or_number<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<String, D::Error> {
    match Value::deserialize(d)? {
        Value::String(s) => Ok(s),
        Value::Number(n) => Ok(n.to_string()),
        other => Err(serde::de::Error::custom(format!(
            "expected string or number, got {other}"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    #[serde(deserialize_with = "string_or_number")]
    pub qid: String,
    #[serde(deserialize_with = "string_or_number")]
    pub vid: String,
    pub duration: f64,
    pub query: String,
    pub relevant_windows: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saliency_scores: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verb_index: Option<usize>,
}

impl AnnotationRecord {
    pub fn windows(&self) -> Vec<MomentSpan> {
        self.relevant_windows
            .iter()
            .map(|w| MomentSpan::new(self.vid.clone(), w[0], w[1]))
            .collect()
    }

    pub fn validate(&self, scale: &SaliencyScale) -> std::result::Result<(), String> {
        if self.qid.is_empty() || self.vid.is_empty() {
            return Err("qid and vid must be non-empty".into());
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(format!("duration must be positive, got {}", self.duration));
        }
        if self.query.split_whitespace().next().is_none() {
            return Err("query is empty".into());
        }
        if self.relevant_windows.is_empty() {
            return Err("relevant_windows is empty".into());
        }
        for w in self.windows() {
            w.validate(self.duration)?;
        }
        if let Some(scores) = &self.saliency_scores {
            if let Some(bad) = scores.iter().find(|s| !scale.contains(**s)) {
                return Err(format!(
                    "saliency rating {bad} outside scale {}..={}",
                    scale.min, scale.max
                ));
            }
        }
        if let Some(v) = self.verb_index {
            let words = self.query.split_whitespace().count();
            if v >= words {
                return Err(format!("verb_index {v} outside query of {words} words"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationSet {
    pub scale: SaliencyScale,
    pub records: Vec<AnnotationRecord>,
}

impl AnnotationSet {
    pub fn get(&self, qid: &str) -> Option<&AnnotationRecord> {
        self.records.iter().find(|r| r.qid == qid)
    }

    pub fn num_videos(&self) -> usize {
        let mut vids: Vec<&str> = self.records.iter().map(|r| r.vid.as_str()).collect();
        vids.sort_unstable();
        vids.dedup();
        vids.len()
    }
}

const REQUIRED_KEYS: [&str; 5] = ["qid", "vid", "duration", "query", "relevant_windows"];

pub fn parse_annotations(text: &str) -> Result<AnnotationSet> {
    let mut set = AnnotationSet::default();
    let mut seen_record = false;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(trimmed).map_err(|e| Error::Validation {
            line: line_no,
            message: format!("malformed JSON: {e}"),
        })?;
        let obj = value.as_object().ok_or_else(|| Error::Validation {
            line: line_no,
            message: "expected a JSON object".into(),
        })?;
        if !seen_record && obj.contains_key("saliency_scale") && !obj.contains_key("qid") {
            let scale: [u32; 2] =
                serde_json::from_value(obj["saliency_scale"].clone()).map_err(|e| Error::Validation {
                    line: line_no,
                    message: format!("saliency_scale must be [min, max]: {e}"),
                })?;
            if scale[0] >= scale[1] {
                return Err(Error::Validation {
                    line: line_no,
                    message: format!("saliency_scale [{}, {}] is empty", scale[0], scale[1]),
                });
            }
            set.scale = SaliencyScale {
                min: scale[0],
                max: scale[1],
            };
            continue;
        }
        seen_record = true;
        if let Some(key) = REQUIRED_KEYS.iter().find(|k| !obj.contains_key(**k)) {
            return Err(Error::Validation {
                line: line_no,
                message: format!("missing required key `{key}`"),
            });
        }
        let record: AnnotationRecord = serde_json::from_value(value).map_err(|e| Error::Validation {
            line: line_no,
            message: e.to_string(),
        })?;
        record
            .validate(&set.scale)
            .map_err(|message| Error::Validation { line: line_no, message })?;
        set.records.push(record);
    }
    Ok(set)
}

pub fn load_annotations(path: &Path) -> Result<AnnotationSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text)
}

pub fn write_annotations(path: &Path, set: &AnnotationSet) -> Result<()> {
    let mut out = Vec::new();
    if set.scale != SaliencyScale::default() {
        let header = serde_json::json!({ "saliency_scale": [set.scale.min, set.scale.max] });
        writeln!(out, "{header}").expect("write to vec");
    }
    for record in &set.records {
        let line = serde_json::to_string(record).map_err(|e| Error::format(e.to_string()))?;
        writeln!(out, "{line}").expect("write to vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

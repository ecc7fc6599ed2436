//! The human-authored input bundle and the taxonomy grouping its notes.
//!
//! A bundle is a single JSON document:
//!
//! ```json
//! {
//!   "title": "...",
//!   "contribution": "...",
//!   "target_words": 350,
//!   "notes": [
//!     {"id": "P1", "pid": "10.1000/x", "citation": "Smith et al. 2020",
//!      "summary": "...", "strengths": "...", "limitations": "...", "relation": "..."}
//!   ]
//! }
//! ```
//!
//! Parsing validates the full schema up front so no model is ever invoked
//! against a partially valid bundle.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::canonical;

pub const MIN_TARGET_WORDS: u64 = 50;

const NOTE_FIELDS: [&str; 7] = [
    "id",
    "pid",
    "citation",
    "summary",
    "strengths",
    "limitations",
    "relation",
];
const BUNDLE_FIELDS: [&str; 4] = ["title", "contribution", "target_words", "notes"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BundleError {
    #[error("malformed syntax at byte {offset}: {message}")]
    MalformedSyntax { offset: usize, message: String },
    #[error("schema violation: {0}")]
    SchemaViolation(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("malformed syntax at byte {offset}: {message}")]
    MalformedSyntax { offset: usize, message: String },
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("cluster references unknown note {0}")]
    UnknownMember(String),
    #[error("notes not assigned to any cluster: {}", .0.join(", "))]
    Uncovered(Vec<String>),
    #[error("note {0} assigned to more than one cluster")]
    DoubleAssigned(String),
}

/// A note identifier: a letter followed by ASCII letters or digits.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct NoteId(String);

impl NoteId {
    pub fn parse(raw: &str) -> Option<Self> {
        is_note_id(raw).then(|| NoteId(raw.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

pub fn is_note_id(raw: &str) -> bool {
    let mut chars = raw.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric())
}

impl TryFrom<String> for NoteId {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        if is_note_id(&value) {
            Ok(NoteId(value))
        } else {
            Err(format!("invalid note id {value:?}"))
        }
    }
}

impl From<NoteId> for String {
    fn from(id: NoteId) -> Self {
        id.0
    }
}

impl fmt::Display for NoteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteRecord {
    pub id: NoteId,
    pub pid: String,
    pub citation: String,
    pub summary: String,
    pub strengths: String,
    pub limitations: String,
    pub relation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputBundle {
    pub title: String,
    pub contribution: String,
    pub target_words: u64,
    pub notes: Vec<NoteRecord>,
}

impl InputBundle {
    pub fn note(&self, id: &str) -> Option<&NoteRecord> {
        self.notes.iter().find(|n| n.id.as_str() == id)
    }

    /// Look a cited key up either by note id or by persistent identifier.
    pub fn resolve(&self, key: &str) -> Option<&NoteRecord> {
        self.notes
            .iter()
            .find(|n| n.id.as_str() == key || n.pid == key)
    }

    pub fn ids(&self) -> BTreeSet<&str> {
        self.notes.iter().map(|n| n.id.as_str()).collect()
    }

    /// Deterministic encoding hashed into every provenance record.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical::to_canonical_bytes(self).expect("bundle is always encodable")
    }

    /// Human-editable form; `parse_bundle` reads it back unchanged.
    pub fn to_pretty_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("bundle is always encodable");
        s.push('\n');
        s
    }
}

pub fn parse_bundle(raw: &[u8]) -> Result<InputBundle, BundleError> {
    let text = std::str::from_utf8(raw).map_err(|e| BundleError::MalformedSyntax {
        offset: e.valid_up_to(),
        message: "input is not valid UTF-8".into(),
    })?;
    let value: Value = serde_json::from_str(text).map_err(|e| BundleError::MalformedSyntax {
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let schema = BundleError::SchemaViolation;
    let top = value
        .as_object()
        .ok_or_else(|| schema("bundle must be an object".into()))?;
    reject_unknown(top, &BUNDLE_FIELDS, "bundle").map_err(schema)?;

    let title = required_text(top, "title", "bundle").map_err(schema)?;
    let contribution = required_text(top, "contribution", "bundle").map_err(schema)?;
    let target_words = match top.get("target_words") {
        None => return Err(schema("bundle is missing field `target_words`".into())),
        Some(v) => v
            .as_u64()
            .ok_or_else(|| schema("`target_words` must be a positive integer".into()))?,
    };
    if target_words < MIN_TARGET_WORDS {
        return Err(schema(format!(
            "`target_words` is {target_words}, must be at least {MIN_TARGET_WORDS}"
        )));
    }
    let raw_notes = match top.get("notes") {
        None => return Err(schema("bundle is missing field `notes`".into())),
        Some(Value::Array(items)) => items,
        Some(_) => return Err(schema("`notes` must be a list".into())),
    };
    if raw_notes.is_empty() {
        return Err(schema("bundle must contain at least one note".into()));
    }

    let mut notes = Vec::with_capacity(raw_notes.len());
    let mut seen = BTreeSet::new();
    for (index, raw_note) in raw_notes.iter().enumerate() {
        let note = parse_note(raw_note, index).map_err(schema)?;
        if !seen.insert(note.id.clone()) {
            return Err(schema(format!("duplicate id {}", note.id)));
        }
        notes.push(note);
    }

    Ok(InputBundle {
        title,
        contribution,
        target_words,
        notes,
    })
}

fn parse_note(value: &Value, index: usize) -> Result<NoteRecord, String> {
    let obj = value
        .as_object()
        .ok_or_else(|| format!("note #{index} must be an object"))?;
    // Name the record by its id as soon as we have one.
    let label = match obj.get("id").and_then(Value::as_str) {
        Some(id) if !id.is_empty() => format!("note {id}"),
        _ => format!("note #{index}"),
    };
    reject_unknown(obj, &NOTE_FIELDS, &label)?;
    for field in NOTE_FIELDS {
        if !obj.contains_key(field) {
            return Err(format!("{label} is missing field `{field}`"));
        }
    }
    let id_text = required_text(obj, "id", &label)?;
    let id = NoteId::parse(&id_text).ok_or_else(|| {
        format!("{label}: id {id_text:?} must be a letter followed by letters or digits")
    })?;
    Ok(NoteRecord {
        id,
        pid: required_text(obj, "pid", &label)?,
        citation: required_text(obj, "citation", &label)?,
        summary: required_text(obj, "summary", &label)?,
        strengths: optional_text(obj, "strengths", &label)?,
        limitations: optional_text(obj, "limitations", &label)?,
        relation: optional_text(obj, "relation", &label)?,
    })
}

fn reject_unknown(obj: &Map<String, Value>, allowed: &[&str], label: &str) -> Result<(), String> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(format!("{label} has unknown field `{k}`")),
        None => Ok(()),
    }
}

fn required_text(obj: &Map<String, Value>, field: &str, label: &str) -> Result<String, String> {
    let text = optional_text(obj, field, label)?;
    if text.trim().is_empty() {
        return Err(format!("{label}: field `{field}` must not be empty"));
    }
    Ok(text)
}

fn optional_text(obj: &Map<String, Value>, field: &str, label: &str) -> Result<String, String> {
    match obj.get(field) {
        None => Err(format!("{label} is missing field `{field}`")),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(format!("{label}: field `{field}` must be text")),
    }
}

/// Convert serde_json's 1-based line/column into a byte offset.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub name: String,
    #[serde(default)]
    pub rationale: String,
    pub member_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub clusters: Vec<Cluster>,
}

impl Taxonomy {
    pub fn to_pretty_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("taxonomy is always encodable");
        s.push('\n');
        s
    }

    /// Re-check the coverage invariants against a (possibly different) bundle.
    pub fn validate_against(&self, bundle: &InputBundle) -> Result<(), TaxonomyError> {
        if self.clusters.is_empty() {
            return Err(TaxonomyError::SchemaViolation(
                "taxonomy has no clusters".into(),
            ));
        }
        let mut names = BTreeSet::new();
        for cluster in &self.clusters {
            if cluster.name.trim().is_empty() {
                return Err(TaxonomyError::SchemaViolation(
                    "cluster name must not be empty".into(),
                ));
            }
            if !names.insert(cluster.name.as_str()) {
                return Err(TaxonomyError::SchemaViolation(format!(
                    "duplicate cluster name {:?}",
                    cluster.name
                )));
            }
        }
        let known = bundle.ids();
        let mut assigned: BTreeMap<&str, &str> = BTreeMap::new();
        for cluster in &self.clusters {
            for member in &cluster.member_ids {
                if !known.contains(member.as_str()) {
                    return Err(TaxonomyError::UnknownMember(member.clone()));
                }
                if assigned.insert(member, &cluster.name).is_some() {
                    return Err(TaxonomyError::DoubleAssigned(member.clone()));
                }
            }
        }
        let uncovered: Vec<String> = bundle
            .notes
            .iter()
            .map(|n| n.id.as_str())
            .filter(|id| !assigned.contains_key(id))
            .map(str::to_owned)
            .collect();
        if !uncovered.is_empty() {
            return Err(TaxonomyError::Uncovered(uncovered));
        }
        Ok(())
    }
}

pub fn parse_taxonomy(raw: &[u8], bundle: &InputBundle) -> Result<Taxonomy, TaxonomyError> {
    let text = std::str::from_utf8(raw).map_err(|e| TaxonomyError::MalformedSyntax {
        offset: e.valid_up_to(),
        message: "input is not valid UTF-8".into(),
    })?;
    let value: Value = serde_json::from_str(text).map_err(|e| TaxonomyError::MalformedSyntax {
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let taxonomy: Taxonomy = serde_json::from_value(value)
        .map_err(|e| TaxonomyError::SchemaViolation(e.to_string()))?;
    taxonomy.validate_against(bundle)?;
    Ok(taxonomy)
}

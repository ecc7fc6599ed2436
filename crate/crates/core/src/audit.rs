//! Draft parsing and the claim audit.
//!
//! A draft has three parts: the `RELATED WORK (DRAFT)` header, paragraphs of
//! body text, and a `CLAIM CHECKLIST` of bullets (`-` or `*`). A bullet may end
//! with its supporting ids in parentheses or brackets, `(P1, P3)`, and may
//! carry the `[NEEDS HUMAN CHECK]` marker anywhere. Inline citations take the
//! form `(citation text; KEY)` where KEY is a note id or a persistent id.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::{is_note_id, InputBundle};

pub const DRAFT_HEADER: &str = "RELATED WORK (DRAFT)";
pub const CHECKLIST_HEADING: &str = "CLAIM CHECKLIST";
pub const NEEDS_HUMAN_CHECK: &str = "[NEEDS HUMAN CHECK]";
pub const CSV_HEADER: &str = "claim,cited_ids,status,resolver_note";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DraftError {
    #[error("draft has no \"{DRAFT_HEADER}\" header")]
    MissingHeader,
    #[error("draft repeats the \"{DRAFT_HEADER}\" header on line {0}")]
    DuplicateHeader(usize),
    #[error("draft has no \"{CHECKLIST_HEADING}\" section")]
    MissingChecklist,
    #[error("malformed checklist entry on line {line}: {reason}")]
    MalformedChecklistEntry { line: usize, reason: String },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuditError {
    #[error("row {index} out of range ({len} rows)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("row {0} is already supported")]
    AlreadySupported(usize),
    #[error("resolver note must not be empty")]
    EmptyNote,
    #[error("malformed audit csv: {0}")]
    MalformedCsv(String),
}

/// A key that can close a citation: a note id, or a DOI/arXiv-style pid.
pub fn is_citation_key(token: &str) -> bool {
    is_note_id(token)
        || (token.len() >= 3
            && (token.contains('/') || token.contains(':'))
            && !token
                .chars()
                .any(|c| c.is_whitespace() || matches!(c, '(' | ')' | '[' | ']' | ';' | ',')))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InlineCitation {
    pub paragraph: usize,
    /// Byte offset of the opening parenthesis within the paragraph.
    pub offset: usize,
    pub citation: String,
    pub key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerPosition {
    pub paragraph: usize,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimEntry {
    pub claim: String,
    pub supporting_ids: Vec<String>,
    pub needs_human_check: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftArtifact {
    pub header: String,
    pub body: Vec<String>,
    pub checklist: Vec<ClaimEntry>,
    pub citations: Vec<InlineCitation>,
    pub body_markers: Vec<MarkerPosition>,
}

impl DraftArtifact {
    /// Render in the layout `parse_draft` expects.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(DRAFT_HEADER);
        out.push_str("\n\n");
        for p in &self.body {
            out.push_str(p);
            out.push_str("\n\n");
        }
        out.push_str(CHECKLIST_HEADING);
        out.push('\n');
        for entry in &self.checklist {
            out.push_str("- ");
            out.push_str(&entry.claim);
            if entry.needs_human_check {
                out.push(' ');
                out.push_str(NEEDS_HUMAN_CHECK);
            }
            if !entry.supporting_ids.is_empty() {
                out.push_str(" (");
                out.push_str(&entry.supporting_ids.join(", "));
                out.push(')');
            }
            out.push('\n');
        }
        out
    }

    pub fn flagged_claims(&self) -> usize {
        self.checklist.iter().filter(|c| c.needs_human_check).count()
    }
}

/// Strip markdown decoration and numbering from a heading candidate.
fn heading_text(line: &str) -> &str {
    let mut s = line.trim();
    s = s.trim_start_matches('#').trim();
    if let Some(pos) = s.find([')', '.']) {
        if pos > 0 && s[..pos].chars().all(|c| c.is_ascii_digit()) {
            s = s[pos + 1..].trim();
        }
    }
    s = s.trim_matches('*').trim_matches('_').trim();
    s = s.trim_end_matches(':').trim();
    s.trim_matches('"').trim()
}

fn is_heading(line: &str, heading: &str) -> bool {
    heading_text(line).eq_ignore_ascii_case(heading)
}

fn inline_citation_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\(([^()]*;[^()]*)\)").unwrap())
}

fn trailing_label_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\s*[-—–]?\s*\b(?:supporting(?:\s+paper)?\s+ids?|supporting|supported\s+by|sources?|ids?)\s*:\s*([^()\[\]:]+)$")
            .unwrap()
    })
}

fn trailing_group_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\s*(?:\(([^()\[\]]*)\)|\[([^()\[\]]*)\])\s*$").unwrap())
}

/// `(citation; KEY)` pairs inside one parenthesized group; several may be chained.
fn citation_pairs(inner: &str) -> Vec<(String, String)> {
    let mut pairs = Vec::new();
    let mut pending: Vec<&str> = Vec::new();
    for part in inner.split(';').map(str::trim) {
        if is_citation_key(part) && !pending.is_empty() {
            pairs.push((pending.join("; "), part.to_owned()));
            pending.clear();
        } else if !part.is_empty() {
            pending.push(part);
        }
    }
    pairs
}

fn extract_citations(paragraph: usize, text: &str) -> Vec<InlineCitation> {
    inline_citation_re()
        .captures_iter(text)
        .flat_map(|caps| {
            let offset = caps.get(0).unwrap().start();
            citation_pairs(&caps[1])
                .into_iter()
                .map(move |(citation, key)| InlineCitation {
                    paragraph,
                    offset,
                    citation,
                    key,
                })
        })
        .collect()
}

enum IdList {
    Keys(Vec<String>),
    Empty,
    NotIds,
    Malformed(String),
}

fn classify_group(inner: &str) -> IdList {
    let trimmed = inner.trim();
    let lower = trimmed.to_ascii_lowercase();
    if matches!(lower.as_str(), "none" | "n/a" | "-" | "") {
        return IdList::Empty;
    }
    // Accept an optional label such as "Supporting: P1, P2" or "IDs: P1".
    let body = match trimmed.split_once(':') {
        Some((label, rest))
            if label
                .split_whitespace()
                .all(|w| w.chars().all(|c| c.is_ascii_alphabetic()))
                && !is_citation_key(trimmed) =>
        {
            rest
        }
        _ => trimmed,
    };
    let tokens: Vec<&str> = body.split([',', ';']).map(str::trim).collect();
    let keys = tokens.iter().filter(|t| is_citation_key(t)).count();
    if keys == 0 {
        return IdList::NotIds;
    }
    if tokens.iter().any(|t| t.is_empty()) {
        return IdList::Malformed(format!("empty entry in id list ({trimmed})"));
    }
    if keys < tokens.len() {
        return IdList::NotIds;
    }
    IdList::Keys(tokens.into_iter().map(str::to_owned).collect())
}

fn parse_entry(content: &str, line: usize) -> Result<ClaimEntry, DraftError> {
    let needs_human_check = content.contains(NEEDS_HUMAN_CHECK);
    let without_marker = content
        .replace(NEEDS_HUMAN_CHECK, " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ");

    let mut claim = without_marker.as_str();
    let mut ids = Vec::new();
    if let Some(caps) = trailing_group_re().captures(claim) {
        let inner = caps.get(1).or_else(|| caps.get(2)).unwrap().as_str();
        match classify_group(inner) {
            IdList::Keys(keys) => {
                ids = keys;
                claim = &claim[..caps.get(0).unwrap().start()];
            }
            IdList::Empty => claim = &claim[..caps.get(0).unwrap().start()],
            IdList::NotIds => {}
            IdList::Malformed(reason) => {
                return Err(DraftError::MalformedChecklistEntry { line, reason })
            }
        }
    } else if let Some(caps) = trailing_label_re().captures(claim) {
        match classify_group(&caps[1]) {
            IdList::Keys(keys) => {
                ids = keys;
                claim = &claim[..caps.get(0).unwrap().start()];
            }
            IdList::Empty => claim = &claim[..caps.get(0).unwrap().start()],
            IdList::NotIds => {}
            IdList::Malformed(reason) => {
                return Err(DraftError::MalformedChecklistEntry { line, reason })
            }
        }
    }
    let claim = claim
        .trim()
        .trim_end_matches(['-', '—', '–', ':'])
        .trim()
        .to_owned();
    if claim.is_empty() {
        return Err(DraftError::MalformedChecklistEntry {
            line,
            reason: "claim text is empty".into(),
        });
    }
    for c in extract_citations(0, &claim) {
        ids.push(c.key);
    }
    let mut seen = BTreeSet::new();
    ids.retain(|id| seen.insert(id.clone()));
    Ok(ClaimEntry {
        claim,
        supporting_ids: ids,
        needs_human_check,
    })
}

pub fn parse_draft(raw: &str) -> Result<DraftArtifact, DraftError> {
    let lines: Vec<&str> = raw.lines().collect();
    let headers: Vec<usize> = lines
        .iter()
        .enumerate()
        .filter(|(_, l)| is_heading(l, DRAFT_HEADER))
        .map(|(i, _)| i)
        .collect();
    let header_at = *headers.first().ok_or(DraftError::MissingHeader)?;
    if let Some(&dup) = headers.get(1) {
        return Err(DraftError::DuplicateHeader(dup + 1));
    }
    let checklist_at = lines
        .iter()
        .enumerate()
        .skip(header_at + 1)
        .find(|(_, l)| is_heading(l, CHECKLIST_HEADING))
        .map(|(i, _)| i)
        .ok_or(DraftError::MissingChecklist)?;

    let mut body = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in &lines[header_at + 1..checklist_at] {
        if line.trim().is_empty() {
            if !current.is_empty() {
                body.push(current.join("\n").trim().to_owned());
                current.clear();
            }
        } else {
            current.push(line.trim_end());
        }
    }
    if !current.is_empty() {
        body.push(current.join("\n").trim().to_owned());
    }

    let mut checklist = Vec::new();
    for (i, line) in lines.iter().enumerate().skip(checklist_at + 1) {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let content = trimmed
            .strip_prefix("- ")
            .or_else(|| trimmed.strip_prefix("* "))
            .ok_or_else(|| DraftError::MalformedChecklistEntry {
                line: i + 1,
                reason: "expected a bullet starting with '-' or '*'".into(),
            })?;
        checklist.push(parse_entry(content, i + 1)?);
    }
    if checklist.is_empty() && !body.is_empty() {
        return Err(DraftError::MissingChecklist);
    }

    let citations = body
        .iter()
        .enumerate()
        .flat_map(|(i, p)| extract_citations(i, p))
        .collect();
    let body_markers = body
        .iter()
        .enumerate()
        .flat_map(|(i, p)| {
            p.match_indices(NEEDS_HUMAN_CHECK).map(move |(offset, _)| MarkerPosition {
                paragraph: i,
                offset,
            })
        })
        .collect();

    Ok(DraftArtifact {
        header: DRAFT_HEADER.to_owned(),
        body,
        checklist,
        citations,
        body_markers,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditStatus {
    Supported,
    NeedsHumanCheck,
    Unsupported,
    InventedCitation,
}

impl AuditStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            AuditStatus::Supported => "supported",
            AuditStatus::NeedsHumanCheck => "needs_human_check",
            AuditStatus::Unsupported => "unsupported",
            AuditStatus::InventedCitation => "invented_citation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            AuditStatus::Supported,
            AuditStatus::NeedsHumanCheck,
            AuditStatus::Unsupported,
            AuditStatus::InventedCitation,
        ]
        .into_iter()
        .find(|st| st.as_str() == s)
    }
}

impl fmt::Display for AuditStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitedSource {
    /// The key as written in the draft.
    pub id: String,
    pub citation: Option<String>,
    pub pid: Option<String>,
}

impl CitedSource {
    pub fn known(&self) -> bool {
        self.pid.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRow {
    pub claim: String,
    pub cited: Vec<CitedSource>,
    pub status: AuditStatus,
    pub resolver_note: Option<String>,
}

impl AuditRow {
    pub fn cited_ids(&self) -> Vec<String> {
        self.cited.iter().map(|c| c.id.clone()).collect()
    }
}

pub fn audit_draft(draft: &DraftArtifact, bundle: &InputBundle) -> Vec<AuditRow> {
    draft
        .checklist
        .iter()
        .map(|entry| {
            let cited: Vec<CitedSource> = entry
                .supporting_ids
                .iter()
                .map(|key| match bundle.resolve(key) {
                    Some(note) => CitedSource {
                        id: key.clone(),
                        citation: Some(note.citation.clone()),
                        pid: Some(note.pid.clone()),
                    },
                    None => CitedSource {
                        id: key.clone(),
                        citation: None,
                        pid: None,
                    },
                })
                .collect();
            let status = if cited.iter().any(|c| !c.known()) {
                AuditStatus::InventedCitation
            } else if entry.needs_human_check {
                AuditStatus::NeedsHumanCheck
            } else if cited.is_empty() {
                AuditStatus::Unsupported
            } else {
                AuditStatus::Supported
            };
            AuditRow {
                claim: entry.claim.clone(),
                cited,
                status,
                resolver_note: None,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InlineFinding {
    /// Cited key is not in the bundle. Breaks citation closure.
    UnknownKey { paragraph: usize, key: String },
    /// Key resolves but the citation text differs from the bundle's.
    CitationTextMismatch {
        paragraph: usize,
        key: String,
        written: String,
        expected: String,
    },
    /// Cited in the body but backs no checklist claim.
    NotInChecklist { paragraph: usize, key: String },
}

impl InlineFinding {
    pub fn breaks_closure(&self) -> bool {
        matches!(self, InlineFinding::UnknownKey { .. })
    }
}

impl fmt::Display for InlineFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InlineFinding::UnknownKey { paragraph, key } => {
                write!(f, "paragraph {}: cites {key}, which is not in the bundle", paragraph + 1)
            }
            InlineFinding::CitationTextMismatch {
                paragraph,
                key,
                written,
                expected,
            } => write!(
                f,
                "paragraph {}: {key} cited as {written:?}, bundle says {expected:?}",
                paragraph + 1
            ),
            InlineFinding::NotInChecklist { paragraph, key } => write!(
                f,
                "paragraph {}: {key} is cited but backs no checklist claim",
                paragraph + 1
            ),
        }
    }
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn inline_findings(draft: &DraftArtifact, bundle: &InputBundle) -> Vec<InlineFinding> {
    let checklist_notes: BTreeSet<&str> = draft
        .checklist
        .iter()
        .flat_map(|c| c.supporting_ids.iter())
        .filter_map(|k| bundle.resolve(k))
        .map(|n| n.id.as_str())
        .collect();
    let mut findings = Vec::new();
    for c in &draft.citations {
        match bundle.resolve(&c.key) {
            None => findings.push(InlineFinding::UnknownKey {
                paragraph: c.paragraph,
                key: c.key.clone(),
            }),
            Some(note) => {
                if normalize_ws(&c.citation) != normalize_ws(&note.citation) {
                    findings.push(InlineFinding::CitationTextMismatch {
                        paragraph: c.paragraph,
                        key: c.key.clone(),
                        written: c.citation.clone(),
                        expected: note.citation.clone(),
                    });
                }
                if !checklist_notes.contains(note.id.as_str()) {
                    findings.push(InlineFinding::NotInChecklist {
                        paragraph: c.paragraph,
                        key: c.key.clone(),
                    });
                }
            }
        }
    }
    findings
}

fn csv_field(field: &str, out: &mut String) {
    if field.contains([',', '"', '\n', '\r']) {
        out.push('"');
        out.push_str(&field.replace('"', "\"\""));
        out.push('"');
    } else {
        out.push_str(field);
    }
}

/// One line per row after the header; fields quoted only when needed.
pub fn write_audit_csv(rows: &[AuditRow]) -> Vec<u8> {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        csv_field(&row.claim, &mut out);
        out.push(',');
        csv_field(&row.cited_ids().join(";"), &mut out);
        out.push(',');
        csv_field(row.status.as_str(), &mut out);
        out.push(',');
        csv_field(row.resolver_note.as_deref().unwrap_or(""), &mut out);
        out.push('\n');
    }
    out.into_bytes()
}

/// The CSV view of an audit row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditCsvRow {
    pub claim: String,
    pub cited_ids: Vec<String>,
    pub status: AuditStatus,
    pub resolver_note: Option<String>,
}

impl From<&AuditRow> for AuditCsvRow {
    fn from(row: &AuditRow) -> Self {
        AuditCsvRow {
            claim: row.claim.clone(),
            cited_ids: row.cited_ids(),
            status: row.status,
            resolver_note: row.resolver_note.clone(),
        }
    }
}

pub fn read_audit_csv(raw: &[u8]) -> Result<Vec<AuditCsvRow>, AuditError> {
    let bad = |e: String| AuditError::MalformedCsv(e);
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(raw);
    let header = reader.headers().map_err(|e| bad(e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        if record.len() != 4 {
            return Err(bad(format!("expected 4 fields, got {}", record.len())));
        }
        let status = AuditStatus::parse(&record[2])
            .ok_or_else(|| bad(format!("unknown status {:?}", &record[2])))?;
        let cited_ids = if record[1].is_empty() {
            Vec::new()
        } else {
            record[1].split(';').map(str::to_owned).collect()
        };
        rows.push(AuditCsvRow {
            claim: record[0].to_owned(),
            cited_ids,
            status,
            resolver_note: Some(record[3].to_owned()).filter(|n| !n.is_empty()),
        });
    }
    Ok(rows)
}

fn md_cell(s: &str) -> String {
    s.replace('|', "\\|").replace('\n', " ")
}

pub fn write_audit_markdown(rows: &[AuditRow], findings: &[InlineFinding]) -> String {
    let mut out = String::from("# Claim audit\n\n");
    let count = |st| rows.iter().filter(|r| r.status == st).count();
    out.push_str(&format!(
        "{} claims: {} supported, {} need human check, {} unsupported, {} cite unknown sources.\n\n",
        rows.len(),
        count(AuditStatus::Supported),
        count(AuditStatus::NeedsHumanCheck),
        count(AuditStatus::Unsupported),
        count(AuditStatus::InventedCitation),
    ));
    out.push_str("| # | Claim | Sources | Status | Resolver note |\n");
    out.push_str("|---|-------|---------|--------|---------------|\n");
    for (i, row) in rows.iter().enumerate() {
        let sources = row
            .cited
            .iter()
            .map(|c| match (&c.citation, &c.pid) {
                (Some(cit), Some(pid)) => format!("{} ({cit}; {pid})", c.id),
                _ => format!("{} (not in bundle)", c.id),
            })
            .collect::<Vec<_>>()
            .join("<br>");
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} |\n",
            i + 1,
            md_cell(&row.claim),
            md_cell(&sources),
            row.status,
            md_cell(row.resolver_note.as_deref().unwrap_or("")),
        ));
    }
    if !findings.is_empty() {
        out.push_str("\n## Inline citation findings\n\n");
        for f in findings {
            out.push_str(&format!("- {f}\n"));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub row: usize,
    pub claim: String,
    pub status: AuditStatus,
    pub note: String,
    pub previous_note: Option<String>,
}

/// Attach a human resolver note. The status is left as computed.
pub fn resolve_claim(
    rows: &mut [AuditRow],
    index: usize,
    note: &str,
) -> Result<Resolution, AuditError> {
    let len = rows.len();
    let row = rows
        .get_mut(index)
        .ok_or(AuditError::IndexOutOfRange { index, len })?;
    if row.status == AuditStatus::Supported {
        return Err(AuditError::AlreadySupported(index));
    }
    if note.trim().is_empty() {
        return Err(AuditError::EmptyNote);
    }
    let previous_note = row.resolver_note.replace(note.to_owned());
    Ok(Resolution {
        row: index,
        claim: row.claim.clone(),
        status: row.status,
        note: note.to_owned(),
        previous_note,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::fixtures::bundle;

    const DRAFT: &str = "\
RELATED WORK (DRAFT)

Provenance capture has been studied widely (Author P1 2020; P1). Later work
extended it to workflows (Author P2 2020; P2).

Some questions remain open [NEEDS HUMAN CHECK].

CLAIM CHECKLIST
- Provenance capture is widely studied (P1)
- Workflow extensions exist [P2, P1]
- Open questions remain [NEEDS HUMAN CHECK]
";

    #[test]
    fn parses_conforming_draft() {
        let d = parse_draft(DRAFT).unwrap();
        assert_eq!(d.body.len(), 2);
        assert_eq!(d.checklist.len(), 3);
        assert_eq!(d.checklist[1].supporting_ids, vec!["P2", "P1"]);
        assert!(d.checklist[2].needs_human_check);
        assert_eq!(d.checklist[2].claim, "Open questions remain");
        assert_eq!(d.citations.len(), 2);
        assert_eq!(d.body_markers.len(), 1);
    }

    #[test]
    fn extracts_inline_citation() {
        let raw = "RELATED WORK (DRAFT)\n\nAs shown (Smith et al. 2020; P3).\n\nCLAIM CHECKLIST\n- x (P3)\n";
        let d = parse_draft(raw).unwrap();
        assert_eq!(
            d.citations,
            vec![InlineCitation {
                paragraph: 0,
                offset: 9,
                citation: "Smith et al. 2020".into(),
                key: "P3".into()
            }]
        );
    }

    #[test]
    fn chained_and_pid_citations() {
        let pairs = citation_pairs("A 2020; P1; B 2021; 10.1145/3442188");
        assert_eq!(
            pairs,
            vec![
                ("A 2020".into(), "P1".into()),
                ("B 2021".into(), "10.1145/3442188".into())
            ]
        );
        assert!(citation_pairs("see above; and below").is_empty());
    }

    #[test]
    fn missing_sections() {
        assert_eq!(parse_draft("CLAIM CHECKLIST\n- a (P1)"), Err(DraftError::MissingHeader));
        assert_eq!(
            parse_draft("RELATED WORK (DRAFT)\n\nBody text."),
            Err(DraftError::MissingChecklist)
        );
        assert_eq!(
            parse_draft("RELATED WORK (DRAFT)\nx\nRELATED WORK (DRAFT)\nCLAIM CHECKLIST\n- a (P1)"),
            Err(DraftError::DuplicateHeader(3))
        );
    }

    #[test]
    fn decorated_headings_are_recognized() {
        let raw = "Here you go.\n\n## **RELATED WORK (DRAFT)**\n\nText.\n\n3) \"CLAIM CHECKLIST\":\n* claim (P1)\n";
        let d = parse_draft(raw).unwrap();
        assert_eq!(d.body, vec!["Text."]);
        assert_eq!(d.checklist[0].supporting_ids, vec!["P1"]);
    }

    #[test]
    fn malformed_entries_carry_line_numbers() {
        let raw = "RELATED WORK (DRAFT)\n\nText.\n\nCLAIM CHECKLIST\n- ok (P1)\nnot a bullet\n";
        assert_eq!(
            parse_draft(raw),
            Err(DraftError::MalformedChecklistEntry {
                line: 7,
                reason: "expected a bullet starting with '-' or '*'".into()
            })
        );
        let raw = "RELATED WORK (DRAFT)\n\nText.\n\nCLAIM CHECKLIST\n- (P1)\n";
        assert!(matches!(
            parse_draft(raw),
            Err(DraftError::MalformedChecklistEntry { line: 6, .. })
        ));
        let raw = "RELATED WORK (DRAFT)\n\nText.\n\nCLAIM CHECKLIST\n- claim (P1, )\n";
        assert!(matches!(
            parse_draft(raw),
            Err(DraftError::MalformedChecklistEntry { line: 6, .. })
        ));
    }

    #[test]
    fn checklist_id_forms() {
        let e = parse_entry("claim — Supporting: P1, P2", 1).unwrap();
        assert_eq!((e.claim.as_str(), e.supporting_ids.len()), ("claim", 2));
        let e = parse_entry("the ratio is 3:1", 1).unwrap();
        assert_eq!(e.claim, "the ratio is 3:1");
        let e = parse_entry("claim (Supporting: P1, P2)", 1).unwrap();
        assert_eq!((e.claim.as_str(), e.supporting_ids.len()), ("claim", 2));
        let e = parse_entry("claim (preliminary results only)", 1).unwrap();
        assert_eq!(e.claim, "claim (preliminary results only)");
        assert!(e.supporting_ids.is_empty());
        let e = parse_entry("[NEEDS HUMAN CHECK] claim (none)", 1).unwrap();
        assert!(e.needs_human_check && e.supporting_ids.is_empty());
        assert_eq!(e.claim, "claim");
        let e = parse_entry("as argued (Smith 2020; P4)", 1).unwrap();
        assert_eq!(e.supporting_ids, vec!["P4"]);
        assert_eq!(e.claim, "as argued (Smith 2020; P4)");
    }

    #[test]
    fn round_trip_through_text() {
        let d = parse_draft(DRAFT).unwrap();
        assert_eq!(parse_draft(&d.to_text()).unwrap(), d);
    }

    #[test]
    fn audit_statuses() {
        let b = bundle(&["P1", "P2"]);
        let raw = "RELATED WORK (DRAFT)\n\nx\n\nCLAIM CHECKLIST\n\
            - supported (P1)\n- invented (P7)\n- flagged [NEEDS HUMAN CHECK] (P2)\n\
            - bare claim\n- by pid (10.1000/p2)\n- flagged but invented [NEEDS HUMAN CHECK] (P9)\n";
        let rows = audit_draft(&parse_draft(raw).unwrap(), &b);
        let statuses: Vec<_> = rows.iter().map(|r| r.status).collect();
        assert_eq!(
            statuses,
            vec![
                AuditStatus::Supported,
                AuditStatus::InventedCitation,
                AuditStatus::NeedsHumanCheck,
                AuditStatus::Unsupported,
                AuditStatus::Supported,
                AuditStatus::InventedCitation,
            ]
        );
        assert_eq!(rows[0].cited[0].citation.as_deref(), Some("Author P1 2020"));
        assert_eq!(rows[4].cited[0].pid.as_deref(), Some("10.1000/p2"));
    }

    #[test]
    fn inline_findings_report_unknown_and_orphans() {
        let b = bundle(&["P1", "P2"]);
        let raw = "RELATED WORK (DRAFT)\n\nA (Author P1 2020; P1). B (Wrong 1999; P2). C (Ghost 2020; P8).\n\n\
                   CLAIM CHECKLIST\n- a (P1)\n";
        let f = inline_findings(&parse_draft(raw).unwrap(), &b);
        assert_eq!(f.len(), 3);
        assert!(matches!(&f[0], InlineFinding::CitationTextMismatch { key, .. } if key == "P2"));
        assert!(matches!(&f[1], InlineFinding::NotInChecklist { key, .. } if key == "P2"));
        assert!(matches!(&f[2], InlineFinding::UnknownKey { key, .. } if key == "P8"));
        assert_eq!(f.iter().filter(|x| x.breaks_closure()).count(), 1);
    }

    #[test]
    fn csv_layout() {
        assert_eq!(write_audit_csv(&[]), format!("{CSV_HEADER}\n").into_bytes());
        let b = bundle(&["P1"]);
        let rows = audit_draft(&parse_draft(DRAFT).unwrap(), &b);
        let out = String::from_utf8(write_audit_csv(&rows)).unwrap();
        assert_eq!(out.lines().count(), 4);
        assert!(out.contains("Workflow extensions exist,P2;P1,invented_citation,"));
    }

    #[test]
    fn csv_quotes_commas_and_reads_back() {
        let rows = vec![AuditRow {
            claim: "a, \"quoted\" claim".into(),
            cited: vec![],
            status: AuditStatus::Unsupported,
            resolver_note: Some("line one\nline two".into()),
        }];
        let out = write_audit_csv(&rows);
        assert!(String::from_utf8_lossy(&out).contains("\"a, \"\"quoted\"\" claim\""));
        let back = read_audit_csv(&out).unwrap();
        assert_eq!(back, vec![AuditCsvRow::from(&rows[0])]);
    }

    #[test]
    fn resolving_claims() {
        let b = bundle(&["P1", "P2"]);
        let mut rows = audit_draft(&parse_draft(DRAFT).unwrap(), &b);
        assert_eq!(
            resolve_claim(&mut rows, 0, "x"),
            Err(AuditError::AlreadySupported(0))
        );
        assert_eq!(
            resolve_claim(&mut rows, 9, "x"),
            Err(AuditError::IndexOutOfRange { index: 9, len: 3 })
        );
        let r = resolve_claim(&mut rows, 2, "verified against DOI landing page").unwrap();
        assert_eq!(r.previous_note, None);
        assert_eq!(rows[2].status, AuditStatus::NeedsHumanCheck);
        let r = resolve_claim(&mut rows, 2, "second look").unwrap();
        assert_eq!(r.previous_note.as_deref(), Some("verified against DOI landing page"));
        assert_eq!(rows[2].resolver_note.as_deref(), Some("second look"));
    }

    #[test]
    fn markdown_report_lists_rows() {
        let b = bundle(&["P1", "P2"]);
        let d = parse_draft(DRAFT).unwrap();
        let md = write_audit_markdown(&audit_draft(&d, &b), &inline_findings(&d, &b));
        assert!(md.contains("| 3 | Open questions remain |"));
        assert!(md.contains("3 claims: 2 supported, 1 need human check"));
    }
}

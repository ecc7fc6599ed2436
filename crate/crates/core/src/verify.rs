//! Mechanical checks over a packed crate.

use std::fmt;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::audit::{
    audit_draft, inline_findings, parse_draft, read_audit_csv, AuditCsvRow, AuditStatus,
    DraftArtifact,
};
use crate::bundle::{parse_bundle, parse_taxonomy, InputBundle};
use crate::provenance::{bundle_digest, InteractionLog};
use crate::redact::RedactedLog;
use crate::rocrate::{
    read_manifest, CrateArchive, InspectionCard, AUDIT_CSV_PATH, BUNDLE_PATH, CARD_JSON_PATH,
    DRAFT_PATH, REDACTED_LOG_PATH, SECTIONS, TAXONOMY_PATH,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerifyError {
    #[error("crate unreadable: {0}")]
    CrateUnreadable(String),
    #[error("source log does not belong to this crate: {0}")]
    SourceMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CheckName {
    NotesInspectable,
    StructureConforms,
    ClaimMapping,
    HashIntegrity,
    InputDerivation,
}

impl CheckName {
    pub const ORDER: [CheckName; 5] = [
        CheckName::NotesInspectable,
        CheckName::StructureConforms,
        CheckName::ClaimMapping,
        CheckName::HashIntegrity,
        CheckName::InputDerivation,
    ];
}

impl fmt::Display for CheckName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

impl fmt::Display for CheckStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// A named part of a check that can be skipped on its own, e.g. re-hashing
/// raw text the tier removed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SubCheck {
    pub name: &'static str,
    pub status: CheckStatus,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CheckResult {
    pub name: CheckName,
    pub status: CheckStatus,
    pub findings: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub subchecks: Vec<SubCheck>,
}

impl CheckResult {
    fn from_findings(name: CheckName, findings: Vec<String>) -> Self {
        let status = if findings.is_empty() {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        };
        CheckResult {
            name,
            status,
            findings,
            subchecks: vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
    pub overall: CheckStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceReport>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.overall == CheckStatus::Pass
    }

    pub fn check(&self, name: CheckName) -> &CheckResult {
        self.checks
            .iter()
            .find(|c| c.name == name)
            .expect("every report has all five checks")
    }

    pub fn status(&self, name: CheckName) -> CheckStatus {
        self.check(name).status
    }

    fn recompute_overall(&mut self) {
        let failed = self.checks.iter().any(|c| c.status == CheckStatus::Fail)
            || self.source.as_ref().is_some_and(|s| s.status == CheckStatus::Fail);
        self.overall = if failed {
            CheckStatus::Fail
        } else {
            CheckStatus::Pass
        };
    }

    pub fn with_source(mut self, source: SourceReport) -> Self {
        self.source = Some(source);
        self.recompute_overall();
        self
    }

    pub fn to_pretty_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report is always encodable");
        s.push('\n');
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("# Crate verification: {}\n\n", self.overall);
        out.push_str("| # | Check | Status |\n|---|-------|--------|\n");
        for (i, c) in self.checks.iter().enumerate() {
            let _ = writeln!(out, "| {} | {} | {} |", i + 1, c.name, c.status);
        }
        for c in &self.checks {
            if c.findings.is_empty() && c.subchecks.is_empty() {
                continue;
            }
            let _ = write!(out, "\n## {}\n\n", c.name);
            for s in &c.subchecks {
                let _ = writeln!(out, "- {} ({}): {}", s.name, s.status, s.detail);
            }
            for f in &c.findings {
                let _ = writeln!(out, "- {f}");
            }
        }
        if let Some(s) = &self.source {
            let _ = write!(out, "\n## Source log comparison: {}\n\n", s.status);
            if s.findings.is_empty() {
                out.push_str("- redacted log and source log agree\n");
            }
            for f in &s.findings {
                let _ = writeln!(out, "- {f}");
            }
        }
        out
    }
}

/// What the crate's members parse into, or why they did not.
struct Contents {
    bundle: Result<InputBundle, String>,
    draft: Result<DraftArtifact, String>,
    log: Result<RedactedLog, String>,
}

fn member<'a>(archive: &'a CrateArchive, path: &str) -> Result<&'a [u8], String> {
    archive.get(path).ok_or_else(|| format!("{path} is missing"))
}

fn member_text<'a>(archive: &'a CrateArchive, path: &str) -> Result<&'a str, String> {
    std::str::from_utf8(member(archive, path)?).map_err(|_| format!("{path} is not UTF-8"))
}

fn load(archive: &CrateArchive) -> Contents {
    let bundle = member(archive, BUNDLE_PATH)
        .and_then(|raw| parse_bundle(raw).map_err(|e| format!("{BUNDLE_PATH}: {e}")));
    let draft = member_text(archive, DRAFT_PATH)
        .and_then(|text| parse_draft(text).map_err(|e| format!("{DRAFT_PATH}: {e}")));
    let log = member(archive, REDACTED_LOG_PATH).and_then(|raw| {
        RedactedLog::from_json(raw).map_err(|e| format!("{REDACTED_LOG_PATH}: {e}"))
    });
    Contents { bundle, draft, log }
}

fn notes_inspectable(c: &Contents) -> CheckResult {
    let findings = match &c.bundle {
        Ok(_) => vec![],
        Err(e) => vec![e.clone()],
    };
    CheckResult::from_findings(CheckName::NotesInspectable, findings)
}

fn structure_conforms(archive: &CrateArchive, c: &Contents) -> CheckResult {
    let mut findings = Vec::new();
    match (&c.bundle, member(archive, TAXONOMY_PATH)) {
        (Ok(bundle), Ok(raw)) => {
            if let Err(e) = parse_taxonomy(raw, bundle) {
                findings.push(format!("{TAXONOMY_PATH}: {e}"));
            }
        }
        (Err(_), Ok(_)) => findings.push("taxonomy cannot be checked without a valid bundle".into()),
        (_, Err(e)) => findings.push(e),
    }
    if let Err(e) = &c.draft {
        findings.push(e.clone());
    }
    match member(archive, CARD_JSON_PATH)
        .and_then(|raw| InspectionCard::from_json(raw).map_err(|e| format!("{CARD_JSON_PATH}: {e}")))
    {
        Ok(card) => {
            for (name, body) in card.sections() {
                if body.trim().is_empty() {
                    findings.push(format!("card section {name:?} is empty"));
                }
            }
            debug_assert_eq!(card.sections().len(), SECTIONS.len());
        }
        Err(e) => findings.push(e),
    }
    if let Err(e) = &c.log {
        findings.push(e.clone());
    }
    CheckResult::from_findings(CheckName::StructureConforms, findings)
}

fn claim_mapping(archive: &CrateArchive, c: &Contents) -> CheckResult {
    let (bundle, draft) = match (&c.bundle, &c.draft) {
        (Ok(b), Ok(d)) => (b, d),
        _ => {
            return CheckResult::from_findings(
                CheckName::ClaimMapping,
                vec!["audit cannot be recomputed without a valid bundle and draft".into()],
            )
        }
    };
    let mut findings = Vec::new();
    let recomputed = audit_draft(draft, bundle);
    for (i, row) in recomputed.iter().enumerate() {
        if row.status == AuditStatus::InventedCitation {
            let unknown: Vec<_> = row
                .cited
                .iter()
                .filter(|s| !s.known())
                .map(|s| s.id.as_str())
                .collect();
            findings.push(format!(
                "row {}: InventedCitation {} not in bundle ({:?})",
                i + 1,
                unknown.join(", "),
                row.claim
            ));
        }
    }
    for f in inline_findings(draft, bundle) {
        if f.breaks_closure() {
            findings.push(format!("draft body: {f}"));
        }
    }
    match member(archive, AUDIT_CSV_PATH)
        .and_then(|raw| read_audit_csv(raw).map_err(|e| format!("{AUDIT_CSV_PATH}: {e}")))
    {
        Ok(packed) => {
            if packed.len() != recomputed.len() {
                findings.push(format!(
                    "{AUDIT_CSV_PATH} has {} rows, the draft gives {}",
                    packed.len(),
                    recomputed.len()
                ));
            }
            for (i, (p, r)) in packed.iter().zip(&recomputed).enumerate() {
                let r = AuditCsvRow::from(r);
                if p.claim != r.claim || p.cited_ids != r.cited_ids || p.status != r.status {
                    findings.push(format!(
                        "row {}: packed ({:?}, [{}], {}) but recomputed ({:?}, [{}], {})",
                        i + 1,
                        p.claim,
                        p.cited_ids.join(";"),
                        p.status,
                        r.claim,
                        r.cited_ids.join(";"),
                        r.status
                    ));
                }
            }
        }
        Err(e) => findings.push(e),
    }
    CheckResult::from_findings(CheckName::ClaimMapping, findings)
}

fn hash_integrity(archive: &CrateArchive, c: &Contents) -> CheckResult {
    let mut findings = Vec::new();
    let mut subchecks = Vec::new();

    let manifest = match read_manifest(archive) {
        Ok(m) => Some(m),
        Err(e) => {
            findings.push(format!("manifest: {e}"));
            None
        }
    };
    if let Some(m) = &manifest {
        let mismatches = m.digest_mismatches(archive);
        subchecks.push(SubCheck {
            name: "manifest digests",
            status: if mismatches.is_empty() {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            detail: format!(
                "{} of {} entities match",
                m.entities.len() - mismatches.len(),
                m.entities.len()
            ),
        });
        findings.extend(mismatches);
    }

    match &c.log {
        Ok(log) => {
            let retained = log
                .records
                .iter()
                .filter(|r| r.prompt_text.is_some() || r.response_text.is_some())
                .count();
            if log.policy.drop_raw_text || retained == 0 {
                subchecks.push(SubCheck {
                    name: "raw text re-hash",
                    status: CheckStatus::Skipped,
                    detail: format!(
                        "the {} tier removes prompt and response text; digests cannot be recomputed",
                        log.policy.tier
                    ),
                });
            } else {
                let mut bad = Vec::new();
                for (i, r) in log.records.iter().enumerate() {
                    for field in r.linkage_mismatches() {
                        bad.push(format!("{REDACTED_LOG_PATH} record {i}: {field} does not match its text"));
                    }
                }
                subchecks.push(SubCheck {
                    name: "raw text re-hash",
                    status: if bad.is_empty() {
                        CheckStatus::Pass
                    } else {
                        CheckStatus::Fail
                    },
                    detail: format!("{retained} records re-hashed"),
                });
                findings.extend(bad);
            }

            if let Some(m) = &manifest {
                let mut bad = Vec::new();
                let mut linked = 0;
                for a in &m.actions {
                    let Some(inv) = &a.invocation else { continue };
                    linked += 1;
                    match log.records.get(inv.record) {
                        Some(r)
                            if r.stage == inv.stage
                                && r.digest_triple()
                                    == (&inv.prompt_sha256, &inv.response_sha256, &inv.bundle_sha256) => {}
                        Some(_) => bad.push(format!(
                            "{}: digests disagree with log record {}",
                            a.id, inv.record
                        )),
                        None => bad.push(format!("{}: log has no record {}", a.id, inv.record)),
                    }
                }
                subchecks.push(SubCheck {
                    name: "action links",
                    status: if bad.is_empty() {
                        CheckStatus::Pass
                    } else {
                        CheckStatus::Fail
                    },
                    detail: format!("{linked} model actions checked against the log"),
                });
                findings.extend(bad);
            }
        }
        Err(e) => findings.push(e.clone()),
    }

    let status = if findings.is_empty() {
        CheckStatus::Pass
    } else {
        CheckStatus::Fail
    };
    CheckResult {
        name: CheckName::HashIntegrity,
        status,
        findings,
        subchecks,
    }
}

fn input_derivation(archive: &CrateArchive, c: &Contents) -> CheckResult {
    let bundle = match &c.bundle {
        Ok(b) => b,
        Err(_) => {
            return CheckResult::from_findings(
                CheckName::InputDerivation,
                vec!["no valid bundle to derive from".into()],
            )
        }
    };
    let expected = bundle_digest(bundle);
    let mut findings = Vec::new();
    match &c.log {
        Ok(log) if log.records.is_empty() => findings.push("interaction log has no records".into()),
        Ok(log) => {
            for (i, r) in log.records.iter().enumerate() {
                if r.bundle_sha256 != expected {
                    findings.push(format!(
                        "record {i} ({}) used bundle {}, crate holds {}",
                        r.stage.as_str(),
                        r.bundle_sha256,
                        expected
                    ));
                }
            }
        }
        Err(e) => findings.push(e.clone()),
    }
    if let Ok(card) = member(archive, CARD_JSON_PATH)
        .map_err(|_| ())
        .and_then(|raw| InspectionCard::from_json(raw).map_err(|_| ()))
    {
        if card.model_configuration.bundle_sha256 != expected {
            findings.push(format!(
                "card names bundle {}, crate holds {}",
                card.model_configuration.bundle_sha256, expected
            ));
        }
    }
    CheckResult::from_findings(CheckName::InputDerivation, findings)
}

/// Run the five checks in order. Content problems are findings, never errors.
pub fn verify_crate(archive: &CrateArchive) -> VerificationReport {
    let c = load(archive);
    let checks = vec![
        notes_inspectable(&c),
        structure_conforms(archive, &c),
        claim_mapping(archive, &c),
        hash_integrity(archive, &c),
        input_derivation(archive, &c),
    ];
    debug_assert!(checks.iter().map(|c| c.name).eq(CheckName::ORDER));
    let mut report = VerificationReport {
        checks,
        overall: CheckStatus::Pass,
        source: None,
    };
    report.recompute_overall();
    report
}

pub fn verify_crate_bytes(zip: &[u8]) -> Result<VerificationReport, VerifyError> {
    let archive =
        CrateArchive::from_zip_bytes(zip).map_err(|e| VerifyError::CrateUnreadable(e.to_string()))?;
    Ok(verify_crate(&archive))
}

/// Escrow comparison of a crate's redacted log against the private source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SourceReport {
    pub status: CheckStatus,
    pub findings: Vec<String>,
}

pub fn verify_against_source(
    archive: &CrateArchive,
    source: &InteractionLog,
) -> Result<SourceReport, VerifyError> {
    let raw = archive
        .get(REDACTED_LOG_PATH)
        .ok_or_else(|| VerifyError::SourceMismatch("crate has no redacted log".into()))?;
    let redacted = RedactedLog::from_json(raw)
        .map_err(|e| VerifyError::SourceMismatch(format!("crate log unreadable: {e}")))?;
    if redacted.run_id != source.run_id {
        return Err(VerifyError::SourceMismatch(format!(
            "crate is run {}, source log is run {}",
            redacted.run_id, source.run_id
        )));
    }
    if redacted.records.len() != source.records.len() {
        return Err(VerifyError::SourceMismatch(format!(
            "crate log has {} records, source log has {}",
            redacted.records.len(),
            source.records.len()
        )));
    }
    let mut findings = Vec::new();
    let digest = source.digest();
    if redacted.redacted_from_sha256 != digest {
        findings.push(format!(
            "redacted_from_sha256 is {}, source log hashes to {}",
            redacted.redacted_from_sha256, digest
        ));
    }
    for (i, (r, s)) in redacted.records.iter().zip(&source.records).enumerate() {
        let (rp, rr, rb) = r.digest_triple();
        let (sp, sr, sb) = s.digest_triple();
        for (field, a, b) in [
            ("prompt_sha256", rp, sp),
            ("response_sha256", rr, sr),
            ("bundle_sha256", rb, sb),
        ] {
            if a != b {
                findings.push(format!("record {i}: {field} differs ({a} in crate, {b} in source)"));
            }
        }
        for field in s.linkage_mismatches() {
            findings.push(format!("record {i}: source {field} does not match its text"));
        }
    }
    let status = if findings.is_empty() {
        CheckStatus::Pass
    } else {
        CheckStatus::Fail
    };
    Ok(SourceReport { status, findings })
}

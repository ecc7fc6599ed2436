//! Inspection card, crate packing and manifest reading.

mod archive;
mod card;
mod manifest;

use std::collections::BTreeMap;

use serde_json::{json, Value};
use thiserror::Error;

pub use archive::{is_safe_member_path, ArchiveError, CrateArchive};
pub use card::{
    build_card, standard_artifacts, CardError, CardNarrative, InspectionCard, ModelSummary,
    SECTIONS,
};
pub use manifest::{
    read_manifest, ActionEntity, CrateManifest, FileEntity, InvocationRef, ManifestError,
    RootDataset, RO_CRATE_CONTEXT, ROOT_ID,
};

use crate::provenance::{Digest, InteractionLog, RunId};
use crate::redact::{check_redaction, default_patterns, RedactedLog, RedactionPolicy};

pub const MANIFEST_PATH: &str = "ro-crate-metadata.json";
pub const TAXONOMY_TEMPLATE_PATH: &str = "code/templates/taxonomy.txt";
pub const SYNTHESIS_TEMPLATE_PATH: &str = "code/templates/synthesis.txt";
pub const WORKFLOW_PATH: &str = "code/workflow.json";
pub const BUNDLE_PATH: &str = "inputs/bundle.json";
pub const TAXONOMY_PATH: &str = "outputs/taxonomy.json";
pub const DRAFT_PATH: &str = "outputs/draft.md";
pub const AUDIT_CSV_PATH: &str = "outputs/audit.csv";
pub const AUDIT_MD_PATH: &str = "outputs/audit.md";
pub const REDACTED_LOG_PATH: &str = "provenance/interaction_log.redacted.json";
pub const CARD_JSON_PATH: &str = "provenance/card.json";
pub const CARD_MD_PATH: &str = "card.md";
/// File name of the private log; never allowed inside a crate.
pub const UNREDACTED_LOG_NAME: &str = "interaction_log.json";

pub const TOOL_ID: &str = "#airo";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Code,
    Data,
    Provenance,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Code => "code",
            Role::Data => "data",
            Role::Provenance => "provenance",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "code" => Some(Role::Code),
            "data" => Some(Role::Data),
            "provenance" => Some(Role::Provenance),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PayloadFile {
    pub path: String,
    pub bytes: Vec<u8>,
    pub role: Role,
    pub description: String,
    pub encoding_format: String,
}

impl PayloadFile {
    pub fn new(path: &str, bytes: Vec<u8>, role: Role, description: &str) -> Self {
        let encoding_format = match path.rsplit('.').next() {
            Some("json") => "application/json",
            Some("md") => "text/markdown",
            Some("csv") => "text/csv",
            _ => "text/plain",
        };
        PayloadFile {
            path: path.to_owned(),
            bytes,
            role,
            description: description.to_owned(),
            encoding_format: encoding_format.to_owned(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Instrument {
    /// The model call recorded at `record` in the redacted log.
    Model { record: usize },
    /// This tool, run without a model.
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSpec {
    pub id: String,
    pub name: String,
    pub object: Vec<String>,
    pub result: Vec<String>,
    pub instrument: Instrument,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CratePayload {
    pub run_id: RunId,
    pub name: String,
    pub description: String,
    pub files: Vec<PayloadFile>,
    pub actions: Vec<ActionSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PackError {
    #[error("unredacted material in crate: {0}")]
    UnredactedLeak(String),
    #[error("manifest would reference {0:?}, which is not in the payload")]
    DanglingEntity(String),
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
}

fn leak(msg: impl Into<String>) -> PackError {
    PackError::UnredactedLeak(msg.into())
}

/// Refuse anything that would put private material into the crate.
fn leak_gate(payload: &CratePayload, policy: &RedactionPolicy) -> Result<RedactedLog, PackError> {
    for f in &payload.files {
        if f.path.rsplit('/').next() == Some(UNREDACTED_LOG_NAME) {
            return Err(leak(format!("{} is the unredacted log", f.path)));
        }
        if f.path.ends_with(".json")
            && f.path != REDACTED_LOG_PATH
            && InteractionLog::from_json(&f.bytes).is_ok()
        {
            return Err(leak(format!("{} holds an unredacted interaction log", f.path)));
        }
    }
    let raw = payload
        .files
        .iter()
        .find(|f| f.path == REDACTED_LOG_PATH)
        .ok_or_else(|| {
            leak(format!(
                "no log redacted at the {} tier; run redact before pack",
                policy.tier
            ))
        })?;
    let log = RedactedLog::from_json(&raw.bytes)
        .map_err(|e| leak(format!("{REDACTED_LOG_PATH} is not a redacted log: {e}")))?;
    if log.run_id != payload.run_id {
        return Err(PackError::InvalidPayload(format!(
            "redacted log belongs to run {}, payload to {}",
            log.run_id, payload.run_id
        )));
    }
    if log.policy != *policy {
        return Err(leak(format!(
            "log was redacted with the {} policy, pack requested {}",
            log.policy.tier, policy.tier
        )));
    }
    if log.reapply(policy) != log {
        return Err(leak("redacted log keeps fields its policy drops"));
    }
    let mut scanned = log.clone();
    for r in &mut scanned.records {
        // Raw text is allowed through at the auditor tier; scan everything else.
        r.prompt_text = None;
        r.response_text = None;
    }
    if let Some(f) = check_redaction(&scanned, &default_patterns()).first() {
        return Err(leak(format!("redacted log still contains {f}")));
    }
    Ok(log)
}

fn model_node(id: &str, record: &crate::redact::RedactedRecord) -> Value {
    let c = &record.config;
    json!({
        "@id": id,
        "@type": "SoftwareApplication",
        "name": c.model_name,
        "modelInterface": c.interface.backend_name(),
        "temperature": c.temperature,
        "topP": c.top_p,
        "maxTokens": c.max_tokens,
        "endpoint": c.endpoint,
    })
}

fn tool_node() -> Value {
    json!({
        "@id": TOOL_ID,
        "@type": "SoftwareApplication",
        "name": "airo",
        "version": env!("CARGO_PKG_VERSION"),
    })
}

/// Build the crate: payload files plus `ro-crate-metadata.json`.
///
/// A pure function of its arguments; equal inputs give byte-equal archives.
pub fn pack(payload: &CratePayload, policy: &RedactionPolicy) -> Result<CrateArchive, PackError> {
    policy.validate().map_err(PackError::InvalidPayload)?;
    let log = leak_gate(payload, policy)?;

    let mut files: BTreeMap<&str, &PayloadFile> = BTreeMap::new();
    for f in &payload.files {
        if f.path == MANIFEST_PATH || !is_safe_member_path(&f.path) {
            return Err(PackError::InvalidPayload(format!("bad member path {:?}", f.path)));
        }
        if files.insert(&f.path, f).is_some() {
            return Err(PackError::InvalidPayload(format!("duplicate member {:?}", f.path)));
        }
    }

    let mut produced_by: BTreeMap<&str, &str> = BTreeMap::new();
    let mut actions = Vec::new();
    let mut contextual = Vec::new();
    let mut tool_used = false;
    for spec in &payload.actions {
        for path in spec.object.iter().chain(&spec.result) {
            if !files.contains_key(path.as_str()) {
                return Err(PackError::DanglingEntity(path.clone()));
            }
        }
        for path in &spec.result {
            if produced_by.insert(path, &spec.id).is_some() {
                return Err(PackError::InvalidPayload(format!("{path} has two producers")));
            }
        }
        let (instrument, invocation) = match spec.instrument {
            Instrument::Model { record } => {
                let r = log
                    .records
                    .get(record)
                    .ok_or_else(|| PackError::DanglingEntity(format!("log record {record}")))?;
                let model_id = format!("#model-{}", spec.id.trim_start_matches('#'));
                contextual.push(model_node(&model_id, r));
                let (p, resp, b) = r.digest_triple();
                let inv = InvocationRef {
                    log: REDACTED_LOG_PATH.to_owned(),
                    record,
                    stage: r.stage,
                    prompt_sha256: p.clone(),
                    response_sha256: resp.clone(),
                    bundle_sha256: b.clone(),
                };
                (model_id, Some(inv))
            }
            Instrument::Tool => {
                tool_used = true;
                (TOOL_ID.to_owned(), None)
            }
        };
        actions.push(ActionEntity {
            id: spec.id.clone(),
            name: spec.name.clone(),
            instrument: Some(instrument),
            object: spec.object.clone(),
            result: spec.result.clone(),
            invocation,
        });
    }
    if tool_used {
        contextual.push(tool_node());
    }

    let root = RootDataset {
        name: payload.name.clone(),
        description: payload.description.clone(),
        identifier: payload.run_id.to_string(),
        redaction_tier: Some(policy.tier),
        has_part: files.keys().map(|p| p.to_string()).collect(),
    };
    let mut graph = vec![manifest::descriptor_node(), manifest::root_node(&root, &actions)];
    for (path, f) in &files {
        let entity = FileEntity {
            id: path.to_string(),
            types: match f.role {
                Role::Code => vec!["File".into(), "SoftwareSourceCode".into()],
                _ => vec!["File".into()],
            },
            role: f.role,
            sha256: Some(Digest::of(&f.bytes)),
            produced_by: produced_by.get(path).map(|a| a.to_string()),
            description: f.description.clone(),
        };
        graph.push(manifest::file_node(&entity, f.bytes.len(), &f.encoding_format));
    }
    graph.extend(actions.iter().map(manifest::action_node));
    graph.extend(contextual);

    let doc = json!({ "@context": manifest::context(), "@graph": graph });
    let mut manifest_bytes =
        serde_json::to_vec_pretty(&doc).expect("manifest is always encodable");
    manifest_bytes.push(b'\n');

    let mut archive = CrateArchive::new();
    for (path, f) in files {
        archive
            .insert(path, f.bytes.clone())
            .map_err(|e| PackError::InvalidPayload(e.to_string()))?;
    }
    archive
        .insert(MANIFEST_PATH, manifest_bytes)
        .map_err(|e| PackError::InvalidPayload(e.to_string()))?;
    Ok(archive)
}

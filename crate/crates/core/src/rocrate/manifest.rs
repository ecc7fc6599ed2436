use std::collections::{BTreeMap, BTreeSet};

use serde_json::{json, Map, Value};
use thiserror::Error;

use super::archive::{is_safe_member_path, CrateArchive};
use super::{Role, MANIFEST_PATH};
use crate::provenance::Digest;
use crate::redact::Tier;
use crate::template::Stage;

pub const RO_CRATE_CONTEXT: &str = "https://w3id.org/ro/crate/1.1/context";
pub const RO_CRATE_SPEC: &str = "https://w3id.org/ro/crate/1.1";
pub const ROOT_ID: &str = "./";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ManifestError {
    #[error("crate has no {MANIFEST_PATH}")]
    ManifestMissing,
    #[error("malformed manifest: {0}")]
    ManifestMalformed(String),
    #[error("manifest describes {0:?}, which is not in the crate")]
    DanglingEntity(String),
    #[error("crate member {0:?} has no manifest entity")]
    UndescribedMember(String),
}

fn malformed(msg: impl Into<String>) -> ManifestError {
    ManifestError::ManifestMalformed(msg.into())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileEntity {
    pub id: String,
    pub types: Vec<String>,
    pub role: Role,
    pub sha256: Option<Digest>,
    pub produced_by: Option<String>,
    pub description: String,
}

/// Pointer from an action to the log record of the model call behind it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvocationRef {
    pub log: String,
    pub record: usize,
    pub stage: Stage,
    pub prompt_sha256: Digest,
    pub response_sha256: Digest,
    pub bundle_sha256: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionEntity {
    pub id: String,
    pub name: String,
    pub instrument: Option<String>,
    pub object: Vec<String>,
    pub result: Vec<String>,
    pub invocation: Option<InvocationRef>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RootDataset {
    pub name: String,
    pub description: String,
    pub identifier: String,
    pub redaction_tier: Option<Tier>,
    pub has_part: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrateManifest {
    pub context: Value,
    pub root: RootDataset,
    pub entities: Vec<FileEntity>,
    pub actions: Vec<ActionEntity>,
}

impl CrateManifest {
    pub fn entity(&self, id: &str) -> Option<&FileEntity> {
        self.entities.iter().find(|e| e.id == id)
    }

    pub fn action(&self, id: &str) -> Option<&ActionEntity> {
        self.actions.iter().find(|a| a.id == id)
    }

    /// Entities whose recorded digest disagrees with the member bytes.
    pub fn digest_mismatches(&self, archive: &CrateArchive) -> Vec<String> {
        self.entities
            .iter()
            .filter_map(|e| {
                let expected = e.sha256.as_ref()?;
                let actual = Digest::of(archive.get(&e.id)?);
                (actual != *expected).then(|| {
                    format!("{}: manifest sha256 {} but file hashes to {}", e.id, expected, actual)
                })
            })
            .collect()
    }
}

pub(crate) fn context() -> Value {
    json!([
        RO_CRATE_CONTEXT,
        {
            "airo": "urn:airo:terms:",
            "role": "airo:role",
            "producedBy": {"@id": "http://www.w3.org/ns/prov#wasGeneratedBy", "@type": "@id"},
            "redactionTier": "airo:redactionTier",
            "invocationRecord": "airo:invocationRecord",
            "recordIndex": "airo:recordIndex",
            "stage": "airo:stage",
            "promptSha256": "airo:promptSha256",
            "responseSha256": "airo:responseSha256",
            "bundleSha256": "airo:bundleSha256",
            "modelInterface": "airo:modelInterface",
            "temperature": "airo:temperature",
            "topP": "airo:topP",
            "maxTokens": "airo:maxTokens",
            "endpoint": "airo:endpoint"
        }
    ])
}

pub(crate) fn id_ref(id: &str) -> Value {
    json!({ "@id": id })
}

pub(crate) fn file_node(e: &FileEntity, size: usize, encoding: &str) -> Value {
    let mut node = Map::new();
    node.insert("@id".into(), json!(e.id));
    node.insert("@type".into(), json!(e.types));
    node.insert("name".into(), json!(e.id.rsplit('/').next().unwrap_or(&e.id)));
    node.insert("description".into(), json!(e.description));
    node.insert("role".into(), json!(e.role.as_str()));
    node.insert("encodingFormat".into(), json!(encoding));
    node.insert("contentSize".into(), json!(size.to_string()));
    if let Some(d) = &e.sha256 {
        node.insert("sha256".into(), json!(d.hex()));
    }
    if let Some(a) = &e.produced_by {
        node.insert("producedBy".into(), id_ref(a));
    }
    Value::Object(node)
}

pub(crate) fn action_node(a: &ActionEntity) -> Value {
    let mut node = Map::new();
    node.insert("@id".into(), json!(a.id));
    node.insert("@type".into(), json!("CreateAction"));
    node.insert("name".into(), json!(a.name));
    if let Some(i) = &a.instrument {
        node.insert("instrument".into(), id_ref(i));
    }
    node.insert("object".into(), Value::Array(a.object.iter().map(|o| id_ref(o)).collect()));
    node.insert("result".into(), Value::Array(a.result.iter().map(|r| id_ref(r)).collect()));
    if let Some(inv) = &a.invocation {
        node.insert(
            "invocationRecord".into(),
            json!({
                "@id": format!("{}#/records/{}", inv.log, inv.record),
                "recordIndex": inv.record,
                "stage": inv.stage.as_str(),
                "promptSha256": inv.prompt_sha256.hex(),
                "responseSha256": inv.response_sha256.hex(),
                "bundleSha256": inv.bundle_sha256.hex(),
            }),
        );
    }
    Value::Object(node)
}

pub(crate) fn descriptor_node() -> Value {
    json!({
        "@id": MANIFEST_PATH,
        "@type": "CreativeWork",
        "conformsTo": id_ref(RO_CRATE_SPEC),
        "about": id_ref(ROOT_ID),
    })
}

pub(crate) fn root_node(root: &RootDataset, actions: &[ActionEntity]) -> Value {
    let mut node = Map::new();
    node.insert("@id".into(), json!(ROOT_ID));
    node.insert("@type".into(), json!("Dataset"));
    node.insert("name".into(), json!(root.name));
    node.insert("description".into(), json!(root.description));
    node.insert("identifier".into(), json!(root.identifier));
    if let Some(t) = root.redaction_tier {
        node.insert("redactionTier".into(), json!(t.as_str()));
    }
    node.insert(
        "hasPart".into(),
        Value::Array(root.has_part.iter().map(|p| id_ref(p)).collect()),
    );
    node.insert(
        "mentions".into(),
        Value::Array(actions.iter().map(|a| id_ref(&a.id)).collect()),
    );
    Value::Object(node)
}

fn types_of(node: &Value) -> Vec<String> {
    match node.get("@type") {
        Some(Value::String(s)) => vec![s.clone()],
        Some(Value::Array(items)) => items
            .iter()
            .filter_map(|v| v.as_str().map(String::from))
            .collect(),
        _ => vec![],
    }
}

fn str_field(node: &Value, key: &str) -> Option<String> {
    node.get(key).and_then(Value::as_str).map(String::from)
}

/// `{"@id": x}`, a bare string, or a list of either.
fn refs(node: &Value, key: &str) -> Result<Vec<String>, ManifestError> {
    let one = |v: &Value| -> Result<String, ManifestError> {
        match v {
            Value::String(s) => Ok(s.clone()),
            Value::Object(m) => m
                .get("@id")
                .and_then(Value::as_str)
                .map(String::from)
                .ok_or_else(|| malformed(format!("{key} reference without @id"))),
            _ => Err(malformed(format!("{key} is not a reference"))),
        }
    };
    match node.get(key) {
        None | Some(Value::Null) => Ok(vec![]),
        Some(Value::Array(items)) => items.iter().map(one).collect(),
        Some(v) => Ok(vec![one(v)?]),
    }
}

fn digest_field(node: &Value, key: &str, owner: &str) -> Result<Option<Digest>, ManifestError> {
    match node.get(key) {
        None => Ok(None),
        Some(Value::String(s)) => Digest::parse(s)
            .map(Some)
            .ok_or_else(|| malformed(format!("{owner}: {key} is not a sha256 hex digest"))),
        Some(_) => Err(malformed(format!("{owner}: {key} is not a string"))),
    }
}

fn parse_invocation(node: &Value, owner: &str) -> Result<Option<InvocationRef>, ManifestError> {
    let Some(inv) = node.get("invocationRecord") else {
        return Ok(None);
    };
    let id = str_field(inv, "@id")
        .ok_or_else(|| malformed(format!("{owner}: invocationRecord without @id")))?;
    let (log, pointer) = id
        .split_once("#/records/")
        .ok_or_else(|| malformed(format!("{owner}: invocationRecord @id {id:?}")))?;
    let record: usize = pointer
        .parse()
        .map_err(|_| malformed(format!("{owner}: invocationRecord @id {id:?}")))?;
    if inv.get("recordIndex").and_then(Value::as_u64) != Some(record as u64) {
        return Err(malformed(format!("{owner}: recordIndex disagrees with @id")));
    }
    let stage = match inv.get("stage").and_then(Value::as_str) {
        Some("taxonomy") => Stage::Taxonomy,
        Some("synthesis") => Stage::Synthesis,
        other => return Err(malformed(format!("{owner}: unknown stage {other:?}"))),
    };
    let need = |key: &str| {
        digest_field(inv, key, owner)?.ok_or_else(|| malformed(format!("{owner}: missing {key}")))
    };
    Ok(Some(InvocationRef {
        log: log.to_owned(),
        record,
        stage,
        prompt_sha256: need("promptSha256")?,
        response_sha256: need("responseSha256")?,
        bundle_sha256: need("bundleSha256")?,
    }))
}

/// Parse `ro-crate-metadata.json` and check it against the archive members.
pub fn read_manifest(archive: &CrateArchive) -> Result<CrateManifest, ManifestError> {
    let raw = archive.get(MANIFEST_PATH).ok_or(ManifestError::ManifestMissing)?;
    let doc: Value = serde_json::from_slice(raw).map_err(|e| malformed(e.to_string()))?;

    let context = doc.get("@context").cloned().ok_or_else(|| malformed("no @context"))?;
    let names_ro_crate = match &context {
        Value::String(s) => s == RO_CRATE_CONTEXT,
        Value::Array(items) => items.iter().any(|v| v.as_str() == Some(RO_CRATE_CONTEXT)),
        _ => false,
    };
    if !names_ro_crate {
        return Err(malformed(format!("@context does not reference {RO_CRATE_CONTEXT}")));
    }
    let graph = doc
        .get("@graph")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed("no @graph array"))?;

    let mut seen = BTreeSet::new();
    let mut descriptor = None;
    let mut root_node = None;
    let mut entities = Vec::new();
    let mut actions = Vec::new();
    let mut contextual = BTreeSet::new();

    for node in graph {
        let id = str_field(node, "@id").ok_or_else(|| malformed("graph node without @id"))?;
        if !seen.insert(id.clone()) {
            return Err(malformed(format!("duplicate @id {id:?}")));
        }
        let types = types_of(node);
        if id == MANIFEST_PATH {
            descriptor = Some(node);
        } else if id == ROOT_ID {
            if !types.iter().any(|t| t == "Dataset") {
                return Err(malformed("root entity is not a Dataset"));
            }
            root_node = Some(node);
        } else if types.iter().any(|t| t == "File") {
            if !is_safe_member_path(&id) {
                return Err(malformed(format!("file entity id {id:?} is not a relative path")));
            }
            let role = match node.get("role").and_then(Value::as_str) {
                Some(r) => Role::parse(r)
                    .ok_or_else(|| malformed(format!("{id}: role {r:?} is not code, data or provenance")))?,
                None => return Err(malformed(format!("{id}: no role"))),
            };
            let sha256 = digest_field(node, "sha256", &id)?;
            if sha256.is_none() && role != Role::Code {
                return Err(malformed(format!("{id}: {} entity without sha256", role.as_str())));
            }
            let produced_by = refs(node, "producedBy")?;
            if produced_by.len() > 1 {
                return Err(malformed(format!("{id}: more than one producedBy")));
            }
            entities.push(FileEntity {
                id,
                types,
                role,
                sha256,
                produced_by: produced_by.into_iter().next(),
                description: str_field(node, "description").unwrap_or_default(),
            });
        } else if types.iter().any(|t| t == "CreateAction") {
            let instrument = refs(node, "instrument")?.into_iter().next();
            actions.push(ActionEntity {
                name: str_field(node, "name").unwrap_or_default(),
                instrument,
                object: refs(node, "object")?,
                result: refs(node, "result")?,
                invocation: parse_invocation(node, &id)?,
                id,
            });
        } else {
            contextual.insert(id);
        }
    }

    let descriptor = descriptor.ok_or_else(|| malformed(format!("no {MANIFEST_PATH} descriptor")))?;
    if refs(descriptor, "about")? != [ROOT_ID] {
        return Err(malformed("descriptor is not about the root dataset"));
    }
    let root_node = root_node.ok_or_else(|| malformed("no root dataset"))?;
    let redaction_tier = match str_field(root_node, "redactionTier") {
        Some(t) => Some(t.parse::<Tier>().map_err(|_| malformed(format!("unknown tier {t:?}")))?),
        None => None,
    };
    let root = RootDataset {
        name: str_field(root_node, "name").unwrap_or_default(),
        description: str_field(root_node, "description").unwrap_or_default(),
        identifier: str_field(root_node, "identifier").unwrap_or_default(),
        redaction_tier,
        has_part: refs(root_node, "hasPart")?,
    };

    // Entity set and member set must match one to one.
    let described: BTreeSet<&str> = entities.iter().map(|e| e.id.as_str()).collect();
    for e in &entities {
        if !archive.contains(&e.id) {
            return Err(ManifestError::DanglingEntity(e.id.clone()));
        }
    }
    for path in archive.paths().filter(|p| *p != MANIFEST_PATH) {
        if !described.contains(path) {
            return Err(ManifestError::UndescribedMember(path.to_owned()));
        }
    }
    let parts: BTreeSet<&str> = root.has_part.iter().map(String::as_str).collect();
    if parts.len() != root.has_part.len() {
        return Err(malformed("hasPart lists a file twice"));
    }
    if let Some(missing) = described.difference(&parts).next() {
        return Err(malformed(format!("root hasPart omits {missing}")));
    }
    if let Some(extra) = parts.difference(&described).next() {
        return Err(ManifestError::DanglingEntity((*extra).to_owned()));
    }

    // Every reference must land somewhere.
    let action_ids: BTreeMap<&str, &ActionEntity> =
        actions.iter().map(|a| (a.id.as_str(), a)).collect();
    for e in &entities {
        if let Some(a) = &e.produced_by {
            let action = action_ids
                .get(a.as_str())
                .ok_or_else(|| ManifestError::DanglingEntity(a.clone()))?;
            if !action.result.contains(&e.id) {
                return Err(malformed(format!("{}: {a} does not list it as a result", e.id)));
            }
        }
    }
    for a in &actions {
        for r in a.object.iter().chain(&a.result) {
            if !described.contains(r.as_str()) {
                return Err(ManifestError::DanglingEntity(r.clone()));
            }
        }
        if let Some(i) = &a.instrument {
            if !contextual.contains(i) {
                return Err(ManifestError::DanglingEntity(i.clone()));
            }
        }
        if let Some(inv) = &a.invocation {
            if !described.contains(inv.log.as_str()) {
                return Err(ManifestError::DanglingEntity(inv.log.clone()));
            }
        }
    }

    Ok(CrateManifest {
        context,
        root,
        entities,
        actions,
    })
}

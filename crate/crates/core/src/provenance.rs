//! SHA-256 digests and the run-scoped interaction log.
//!
//! Text is hashed as its exact UTF-8 bytes (no newline normalization); the
//! bundle is hashed through its canonical encoding.

use std::fmt;

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::bundle::InputBundle;
use crate::canonical;
use crate::invoke::{Invocation, ModelConfig, Outcome};
use crate::template::Stage;

pub const DIGEST_ALGORITHM: &str = "sha256";

/// Lowercase hex SHA-256.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Digest(String);

impl Digest {
    pub fn of(data: &[u8]) -> Self {
        Digest(hex::encode(Sha256::digest(data)))
    }

    pub fn parse(hex: &str) -> Option<Self> {
        let ok = hex.len() == 64 && hex.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'));
        ok.then(|| Digest(hex.to_owned()))
    }

    pub fn hex(&self) -> &str {
        &self.0
    }

    pub fn algorithm(&self) -> &'static str {
        DIGEST_ALGORITHM
    }
}

pub fn sha256_hex(data: &[u8]) -> Digest {
    Digest::of(data)
}

impl TryFrom<String> for Digest {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Digest::parse(&value).ok_or_else(|| format!("not a sha256 hex digest: {value:?}"))
    }
}

impl From<Digest> for String {
    fn from(d: Digest) -> Self {
        d.0
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.0)
    }
}

pub fn bundle_digest(bundle: &InputBundle) -> Digest {
    Digest::of(&bundle.canonical_bytes())
}

/// Current UTC time at second precision.
pub fn now() -> DateTime<Utc> {
    Utc::now().trunc_subsecs(0)
}

/// RFC 3339 UTC, whole seconds, `Z` suffix.
pub mod rfc3339_secs {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::Secs, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&raw)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(t: &Option<DateTime<Utc>>, s: S) -> Result<S::Ok, S::Error> {
            match t {
                Some(t) => super::serialize(t, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(
            d: D,
        ) -> Result<Option<DateTime<Utc>>, D::Error> {
            Option::<String>::deserialize(d)?
                .map(|raw| {
                    DateTime::parse_from_rfc3339(&raw)
                        .map(|t| t.with_timezone(&Utc))
                        .map_err(serde::de::Error::custom)
                })
                .transpose()
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProvenanceError {
    #[error("invalid run label {0:?}: use letters, digits, spaces or hyphens")]
    InvalidLabel(String),
    #[error("invalid run id {0:?}")]
    InvalidRunId(String),
    #[error("record started at {new} precedes the last record ({last})")]
    OutOfOrder { last: String, new: String },
    #[error("malformed interaction log: {0}")]
    Malformed(String),
}

/// `ro-` followed by lowercase letters, digits and hyphens.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RunId(String);

impl RunId {
    pub fn parse(raw: &str) -> Result<Self, ProvenanceError> {
        let valid = raw
            .strip_prefix("ro-")
            .is_some_and(|rest| {
                !rest.is_empty()
                    && rest
                        .chars()
                        .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-')
            });
        if valid {
            Ok(RunId(raw.to_owned()))
        } else {
            Err(ProvenanceError::InvalidRunId(raw.to_owned()))
        }
    }

    /// Lowercase the label and join whitespace-separated words with hyphens.
    pub fn from_label(label: &str) -> Result<Self, ProvenanceError> {
        let words: Vec<String> = label
            .split_whitespace()
            .map(|w| w.to_ascii_lowercase())
            .collect();
        let normalized = words.join("-");
        let ok = !normalized.is_empty()
            && normalized
                .chars()
                .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-');
        if !ok {
            return Err(ProvenanceError::InvalidLabel(label.to_owned()));
        }
        RunId::parse(&format!("ro-{normalized}"))
            .map_err(|_| ProvenanceError::InvalidLabel(label.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

pub fn new_run(label: &str) -> Result<RunId, ProvenanceError> {
    RunId::from_label(label)
}

impl TryFrom<String> for RunId {
    type Error = ProvenanceError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        RunId::parse(&value)
    }
}

impl From<RunId> for String {
    fn from(id: RunId) -> Self {
        id.0
    }
}

impl fmt::Display for RunId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvocationRecord {
    pub stage: Stage,
    pub config: ModelConfig,
    pub outcome: Outcome,
    pub attempt: u32,
    pub prompt_sha256: Digest,
    pub response_sha256: Digest,
    pub bundle_sha256: Digest,
    #[serde(with = "rfc3339_secs")]
    pub started_at: DateTime<Utc>,
    #[serde(with = "rfc3339_secs")]
    pub ended_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_paths: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub host_id: Option<String>,
}

impl InvocationRecord {
    /// Names of retained texts that no longer hash to their recorded digest.
    pub fn linkage_mismatches(&self) -> Vec<&'static str> {
        let mut bad = Vec::new();
        if let Some(p) = &self.prompt_text {
            if Digest::of(p.as_bytes()) != self.prompt_sha256 {
                bad.push("prompt");
            }
        }
        if let Some(r) = &self.response_text {
            if Digest::of(r.as_bytes()) != self.response_sha256 {
                bad.push("response");
            }
        }
        bad
    }

    pub fn digest_triple(&self) -> (&Digest, &Digest, &Digest) {
        (&self.prompt_sha256, &self.response_sha256, &self.bundle_sha256)
    }
}

/// Hash an invocation against its bundle, keeping raw texts and local context.
pub fn record_invocation(
    inv: &Invocation,
    bundle: &InputBundle,
    source_paths: &[String],
    host_id: &str,
) -> InvocationRecord {
    InvocationRecord {
        stage: inv.stage,
        config: inv.config.clone(),
        outcome: inv.outcome.clone(),
        attempt: inv.attempt,
        prompt_sha256: Digest::of(inv.prompt.text.as_bytes()),
        response_sha256: Digest::of(inv.response_text.as_bytes()),
        bundle_sha256: bundle_digest(bundle),
        started_at: inv.started_at,
        ended_at: inv.ended_at,
        prompt_text: Some(inv.prompt.text.clone()),
        response_text: Some(inv.response_text.clone()),
        source_paths: Some(source_paths.to_vec()),
        host_id: Some(host_id.to_owned()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionLog {
    pub run_id: RunId,
    #[serde(with = "rfc3339_secs")]
    pub created_at: DateTime<Utc>,
    pub records: Vec<InvocationRecord>,
}

impl InteractionLog {
    pub fn new(run_id: RunId) -> Self {
        InteractionLog {
            run_id,
            created_at: now(),
            records: Vec::new(),
        }
    }

    /// Append keeping `started_at` nondecreasing. Existing records are never touched.
    pub fn append(&mut self, record: InvocationRecord) -> Result<(), ProvenanceError> {
        if let Some(last) = self.records.last() {
            if record.started_at < last.started_at {
                return Err(ProvenanceError::OutOfOrder {
                    last: last.started_at.to_rfc3339(),
                    new: record.started_at.to_rfc3339(),
                });
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical::to_canonical_bytes(self).expect("log is always encodable")
    }

    pub fn digest(&self) -> Digest {
        Digest::of(&self.canonical_bytes())
    }

    pub fn to_pretty_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("log is always encodable");
        s.push('\n');
        s
    }

    pub fn from_json(raw: &[u8]) -> Result<Self, ProvenanceError> {
        let log: InteractionLog =
            serde_json::from_slice(raw).map_err(|e| ProvenanceError::Malformed(e.to_string()))?;
        if log
            .records
            .windows(2)
            .any(|w| w[1].started_at < w[0].started_at)
        {
            return Err(ProvenanceError::Malformed(
                "records are not ordered by started_at".into(),
            ));
        }
        Ok(log)
    }

    /// Records for a stage, oldest first.
    pub fn stage_records(&self, stage: Stage) -> impl Iterator<Item = &InvocationRecord> {
        self.records.iter().filter(move |r| r.stage == stage)
    }
}

/// `user@host` for the local machine, best effort.
pub fn local_host_id() -> String {
    let user = std::env::var("USER")
        .or_else(|_| std::env::var("USERNAME"))
        .unwrap_or_else(|_| "unknown".into());
    let host = std::env::var("HOSTNAME")
        .ok()
        .or_else(|| std::fs::read_to_string("/etc/hostname").ok())
        .map(|h| h.trim().to_owned())
        .filter(|h| !h.is_empty())
        .unwrap_or_else(|| "localhost".into());
    format!("{user}@{host}")
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use crate::invoke::Interface;
    use crate::template::RenderedPrompt;
    use chrono::TimeZone;
    use std::collections::BTreeMap;

    pub fn config() -> ModelConfig {
        ModelConfig {
            interface: Interface::OpenAiCompatible,
            model_name: "llama-3.1-8b-instruct".into(),
            temperature: 0.2,
            top_p: 1.0,
            max_tokens: 1200,
            endpoint: "https://inference.internal.lab:8443/v1".into(),
            seed: None,
            fixture: None,
        }
    }

    pub fn invocation(stage: Stage, prompt: &str, response: &str, second: u32) -> Invocation {
        let t = Utc.with_ymd_and_hms(2025, 1, 2, 3, 4, second).unwrap();
        Invocation {
            stage,
            prompt: RenderedPrompt {
                stage,
                text: prompt.into(),
                placeholder_bindings: BTreeMap::new(),
                segments: vec![],
            },
            response_text: response.into(),
            config: config(),
            started_at: t,
            ended_at: t,
            attempt: 1,
            outcome: Outcome::Completed,
        }
    }
}

//! Tiered redaction of interaction logs.
//!
//! Digests, stage, attempt and generation parameters always survive. What
//! else survives depends on the tier:
//!
//! | tier     | raw text | timestamps | paths/host | endpoint             |
//! |----------|----------|------------|------------|----------------------|
//! | public   | dropped  | dropped    | dropped    | `generalized-endpoint` |
//! | reviewer | dropped  | dropped    | dropped    | scheme + domain      |
//! | auditor  | kept     | dropped    | dropped    | scheme + domain      |

use std::fmt;
use std::net::IpAddr;
use std::str::FromStr;
use std::sync::OnceLock;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use url::{Host, Url};

use crate::invoke::{ModelConfig, Outcome};
use crate::provenance::{rfc3339_secs, Digest, InteractionLog, InvocationRecord, RunId};
use crate::template::Stage;

pub const GENERALIZED_ENDPOINT: &str = "generalized-endpoint";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Public,
    Reviewer,
    Auditor,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Public, Tier::Reviewer, Tier::Auditor];

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Public => "public",
            Tier::Reviewer => "reviewer",
            Tier::Auditor => "auditor",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Tier::ALL
            .into_iter()
            .find(|t| t.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| format!("unknown tier {s:?} (expected public, reviewer or auditor)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawPolicy")]
pub struct RedactionPolicy {
    pub tier: Tier,
    pub drop_timestamps: bool,
    pub drop_raw_text: bool,
    pub drop_paths_and_host: bool,
    pub generalize_endpoint: bool,
}

#[derive(Deserialize)]
struct RawPolicy {
    tier: Tier,
    drop_timestamps: bool,
    drop_raw_text: bool,
    drop_paths_and_host: bool,
    generalize_endpoint: bool,
}

impl TryFrom<RawPolicy> for RedactionPolicy {
    type Error = String;

    fn try_from(raw: RawPolicy) -> Result<Self, Self::Error> {
        let policy = RedactionPolicy {
            tier: raw.tier,
            drop_timestamps: raw.drop_timestamps,
            drop_raw_text: raw.drop_raw_text,
            drop_paths_and_host: raw.drop_paths_and_host,
            generalize_endpoint: raw.generalize_endpoint,
        };
        policy.validate()?;
        Ok(policy)
    }
}

impl RedactionPolicy {
    pub fn for_tier(tier: Tier) -> Self {
        RedactionPolicy {
            tier,
            drop_timestamps: true,
            drop_raw_text: tier != Tier::Auditor,
            drop_paths_and_host: true,
            generalize_endpoint: true,
        }
    }

    /// Auditors may see the exact endpoint; the other tiers may not.
    pub fn auditor_with_exact_endpoint() -> Self {
        RedactionPolicy {
            generalize_endpoint: false,
            ..Self::for_tier(Tier::Auditor)
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let forced_all = matches!(self.tier, Tier::Public | Tier::Reviewer);
        let all = self.drop_timestamps
            && self.drop_raw_text
            && self.drop_paths_and_host
            && self.generalize_endpoint;
        if forced_all && !all {
            return Err(format!("{} tier must drop everything", self.tier));
        }
        if self.tier == Tier::Auditor
            && !(self.drop_timestamps && self.drop_paths_and_host && !self.drop_raw_text)
        {
            return Err("auditor tier drops timestamps, paths and host, and keeps raw text".into());
        }
        Ok(())
    }
}

/// A log record after redaction; optional fields are absent when dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedactedRecord {
    pub stage: Stage,
    pub config: ModelConfig,
    pub outcome: Outcome,
    pub attempt: u32,
    pub prompt_sha256: Digest,
    pub response_sha256: Digest,
    pub bundle_sha256: Digest,
    #[serde(
        default,
        with = "rfc3339_secs::option",
        skip_serializing_if = "Option::is_none"
    )]
    pub started_at: Option<DateTime<Utc>>,
    #[serde(
        default,
        with = "rfc3339_secs::option",
        skip_serializing_if = "Option::is_none"
    )]
    pub ended_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_paths: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub host_id: Option<String>,
}

impl From<&InvocationRecord> for RedactedRecord {
    fn from(r: &InvocationRecord) -> Self {
        RedactedRecord {
            stage: r.stage,
            config: r.config.clone(),
            outcome: r.outcome.clone(),
            attempt: r.attempt,
            prompt_sha256: r.prompt_sha256.clone(),
            response_sha256: r.response_sha256.clone(),
            bundle_sha256: r.bundle_sha256.clone(),
            started_at: Some(r.started_at),
            ended_at: Some(r.ended_at),
            prompt_text: r.prompt_text.clone(),
            response_text: r.response_text.clone(),
            source_paths: r.source_paths.clone(),
            host_id: r.host_id.clone(),
        }
    }
}

impl RedactedRecord {
    pub fn digest_triple(&self) -> (&Digest, &Digest, &Digest) {
        (&self.prompt_sha256, &self.response_sha256, &self.bundle_sha256)
    }

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

    fn apply(mut self, policy: &RedactionPolicy) -> Self {
        if policy.drop_timestamps {
            self.started_at = None;
            self.ended_at = None;
        }
        if policy.drop_raw_text {
            self.prompt_text = None;
            self.response_text = None;
        }
        if policy.drop_paths_and_host {
            self.source_paths = None;
            self.host_id = None;
        }
        if policy.generalize_endpoint && !self.config.endpoint.is_empty() {
            self.config.endpoint = match policy.tier {
                Tier::Public => GENERALIZED_ENDPOINT.to_owned(),
                Tier::Reviewer | Tier::Auditor => generalize_endpoint(&self.config.endpoint),
            };
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedactedLog {
    pub run_id: RunId,
    pub policy: RedactionPolicy,
    /// Digest of the source log's canonical bytes.
    pub redacted_from_sha256: Digest,
    pub records: Vec<RedactedRecord>,
}

impl RedactedLog {
    /// Apply a policy again, keeping the link to the original source.
    pub fn reapply(&self, policy: &RedactionPolicy) -> RedactedLog {
        RedactedLog {
            run_id: self.run_id.clone(),
            policy: *policy,
            redacted_from_sha256: self.redacted_from_sha256.clone(),
            records: self.records.iter().cloned().map(|r| r.apply(policy)).collect(),
        }
    }

    pub fn to_pretty_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("redacted log is always encodable");
        s.push('\n');
        s
    }

    pub fn from_json(raw: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(raw)
    }
}

pub fn redact(log: &InteractionLog, policy: &RedactionPolicy) -> RedactedLog {
    RedactedLog {
        run_id: log.run_id.clone(),
        policy: *policy,
        redacted_from_sha256: log.digest(),
        records: log
            .records
            .iter()
            .map(|r| RedactedRecord::from(r).apply(policy))
            .collect(),
    }
}

/// `scheme://registrable-domain`, or the generic marker when the host is an
/// address or a bare machine name.
pub fn generalize_endpoint(endpoint: &str) -> String {
    if endpoint == GENERALIZED_ENDPOINT {
        return endpoint.to_owned();
    }
    let Ok(url) = Url::parse(endpoint) else {
        return GENERALIZED_ENDPOINT.to_owned();
    };
    let domain = match url.host() {
        Some(Host::Domain(d)) if d.parse::<IpAddr>().is_err() => d.to_ascii_lowercase(),
        _ => return GENERALIZED_ENDPOINT.to_owned(),
    };
    let labels: Vec<&str> = domain.trim_end_matches('.').split('.').collect();
    if labels.len() < 2 {
        return GENERALIZED_ENDPOINT.to_owned();
    }
    format!("{}://{}", url.scheme(), registrable_domain(&labels))
}

/// Second-level suffixes under country codes (`co.uk`, `ac.jp`, ...). Not a
/// full public-suffix list.
const SECOND_LEVEL: [&str; 8] = ["ac", "co", "com", "edu", "gov", "net", "org", "or"];

fn registrable_domain(labels: &[&str]) -> String {
    let n = labels.len();
    let keep = if n >= 3 && labels[n - 1].len() == 2 && SECOND_LEVEL.contains(&labels[n - 2]) {
        3
    } else {
        2
    };
    labels[n - keep..].join(".")
}

#[derive(Debug, Clone)]
pub struct ForbiddenPattern {
    pub name: String,
    regex: Regex,
}

impl ForbiddenPattern {
    pub fn regex(name: impl Into<String>, pattern: &str) -> Result<Self, regex::Error> {
        Ok(ForbiddenPattern {
            name: name.into(),
            regex: Regex::new(pattern)?,
        })
    }

    pub fn literal(name: impl Into<String>, text: &str) -> Self {
        ForbiddenPattern {
            name: name.into(),
            regex: Regex::new(&regex::escape(text)).expect("escaped literal"),
        }
    }
}

pub const TIMESTAMP_PATTERN: &str =
    r"\d{4}-\d{2}-\d{2}[T ]\d{2}:\d{2}:\d{2}(?:\.\d+)?(?:Z|[+-]\d{2}:?\d{2})?";

/// Shapes that must not survive any tier that drops local context.
pub fn default_patterns() -> Vec<ForbiddenPattern> {
    static PATTERNS: OnceLock<Vec<ForbiddenPattern>> = OnceLock::new();
    PATTERNS
        .get_or_init(|| {
            [
                ("home-directory", r"(?:/home/|/Users/|[A-Za-z]:\\Users\\)[^/\\\s]+"),
                ("absolute-path", r#"(?:^|[\s"'(=])/(?:[\w.-]+/)+[\w.-]*"#),
                ("windows-path", r"\b[A-Za-z]:\\[\w.\\-]+"),
                ("timestamp", TIMESTAMP_PATTERN),
                ("ipv4-address", r"\b(?:\d{1,3}\.){3}\d{1,3}\b"),
            ]
            .into_iter()
            .map(|(name, p)| ForbiddenPattern::regex(name, p).expect("built-in pattern"))
            .collect()
        })
        .clone()
}

/// Literal host ids and file paths taken from the unredacted source.
pub fn source_patterns(log: &InteractionLog) -> Vec<ForbiddenPattern> {
    let mut literals = std::collections::BTreeSet::new();
    for r in &log.records {
        if let Some(host) = r.host_id.as_deref().filter(|h| !h.is_empty()) {
            literals.insert(("host-id", host));
            if let Some((_, machine)) = host.split_once('@') {
                if machine.len() >= 3 {
                    literals.insert(("host-name", machine));
                }
            }
        }
        for p in r.source_paths.iter().flatten().filter(|p| !p.is_empty()) {
            literals.insert(("source-path", p.as_str()));
        }
    }
    literals
        .into_iter()
        .map(|(name, text)| ForbiddenPattern::literal(name, text))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RedactionFinding {
    /// JSON path of the offending field, e.g. `records[1].config.endpoint`.
    pub field: String,
    pub pattern: String,
    pub matched: String,
}

impl fmt::Display for RedactionFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} {:?}", self.field, self.pattern, self.matched)
    }
}

/// Scan every retained string in the redacted log. Empty result means clean.
pub fn check_redaction(
    redacted: &RedactedLog,
    forbidden: &[ForbiddenPattern],
) -> Vec<RedactionFinding> {
    let value = serde_json::to_value(redacted).expect("redacted log is always encodable");
    let mut findings = Vec::new();
    scan(&value, String::new(), forbidden, &mut findings);
    findings
}

fn scan(value: &Value, path: String, forbidden: &[ForbiddenPattern], out: &mut Vec<RedactionFinding>) {
    match value {
        Value::String(s) => {
            for p in forbidden {
                if let Some(m) = p.regex.find(s) {
                    out.push(RedactionFinding {
                        field: path.clone(),
                        pattern: p.name.clone(),
                        matched: m.as_str().trim().to_owned(),
                    });
                }
            }
        }
        Value::Array(items) => {
            for (i, item) in items.iter().enumerate() {
                scan(item, format!("{path}[{i}]"), forbidden, out);
            }
        }
        Value::Object(map) => {
            for (k, v) in map {
                let child = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                scan(v, child, forbidden, out);
            }
        }
        _ => {}
    }
}

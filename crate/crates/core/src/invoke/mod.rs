//! Two-stage model invocation.
//!
//! Backends are selected by name from a [`BackendRegistry`]; the name comes
//! from the `interface` field of the recorded [`ModelConfig`], so the config
//! hashed into provenance is also what picked the transport.

mod backend;
mod openai;
mod stub;

use std::thread;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::{parse_taxonomy, InputBundle, Taxonomy, TaxonomyError};
use crate::provenance::{now, rfc3339_secs};
use crate::template::{
    render_synthesis_prompt, render_taxonomy_prompt, PromptTemplate, RenderedPrompt, Stage,
    TemplateError,
};

pub use backend::{
    BackendContext, BackendFactory, BackendFailure, BackendRegistry, BackendReply, ChatMessage,
    ChatRequest, ModelBackend,
};
pub use openai::OpenAiBackend;
pub use stub::StubBackend;

pub const ENV_API_KEY: &str = "AIRO_API_KEY";
pub const ENV_ENDPOINT: &str = "AIRO_ENDPOINT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Interface {
    #[serde(rename = "openai-compatible")]
    OpenAiCompatible,
    #[serde(rename = "offline-stub")]
    OfflineStub,
}

impl Interface {
    /// Registry key of the backend serving this interface.
    pub fn backend_name(self) -> &'static str {
        match self {
            Interface::OpenAiCompatible => "openai-compatible",
            Interface::OfflineStub => "offline-stub",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Interface::OpenAiCompatible => "OpenAI-compatible API",
            Interface::OfflineStub => "Offline stub (fixture replay)",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub interface: Interface,
    pub model_name: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub endpoint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<i64>,
    /// Fixture replayed by the offline stub.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<String>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid model config: {0}")]
pub struct ConfigError(pub String);

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.model_name.trim().is_empty() {
            return Err(ConfigError("model_name must not be empty".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(ConfigError(format!(
                "temperature {} must be >= 0",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ConfigError(format!("top_p {} must be in (0, 1]", self.top_p)));
        }
        if self.max_tokens == 0 {
            return Err(ConfigError("max_tokens must be positive".into()));
        }
        if self.interface == Interface::OpenAiCompatible && self.endpoint.trim().is_empty() {
            return Err(ConfigError(
                "endpoint is required for the openai-compatible interface".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json(raw: &[u8]) -> Result<Self, ConfigError> {
        let config: ModelConfig =
            serde_json::from_slice(raw).map_err(|e| ConfigError(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// `AIRO_ENDPOINT`, when set, replaces the configured endpoint.
    pub fn with_env_endpoint(mut self) -> Self {
        if let Ok(endpoint) = std::env::var(ENV_ENDPOINT) {
            if !endpoint.trim().is_empty() {
                self.endpoint = endpoint;
            }
        }
        self
    }

    /// Switch to fixture replay, keeping the generation parameters.
    pub fn stubbed(mut self, fixture: impl Into<String>) -> Self {
        self.interface = Interface::OfflineStub;
        self.fixture = Some(fixture.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    /// Generation stopped at `max_tokens`.
    BudgetExceeded,
    Empty,
    HttpError { status: u16 },
    MalformedReply,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Invocation {
    pub stage: Stage,
    pub prompt: RenderedPrompt,
    pub response_text: String,
    pub config: ModelConfig,
    #[serde(with = "rfc3339_secs")]
    pub started_at: DateTime<Utc>,
    #[serde(with = "rfc3339_secs")]
    pub ended_at: DateTime<Utc>,
    pub attempt: u32,
    pub outcome: Outcome,
}

impl Invocation {
    pub fn budget_exceeded(&self) -> bool {
        self.outcome == Outcome::BudgetExceeded
    }
}

/// Every attempt made for one call, the last of which succeeded.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub attempts: Vec<Invocation>,
}

impl Completion {
    pub fn invocation(&self) -> &Invocation {
        self.attempts.last().expect("a completion has at least one attempt")
    }

    pub fn response_text(&self) -> &str {
        &self.invocation().response_text
    }
}

#[derive(Debug, Error)]
pub enum InvokeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no backend registered for interface {0:?}")]
    UnknownBackend(String),
    #[error("backend setup failed: {0}")]
    Setup(String),
    #[error("transport failure after {} attempt(s){}: {message}",
        .attempts_made, .status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Transport {
        status: Option<u16>,
        message: String,
        attempts_made: u32,
        /// Attempts that received a reply; these are logged like successes.
        attempts: Vec<Invocation>,
    },
    #[error("model returned an empty response")]
    EmptyResponse { attempts: Vec<Invocation> },
}

impl InvokeError {
    /// Attempts that produced a reply and must reach the provenance log.
    pub fn recorded_attempts(&self) -> &[Invocation] {
        match self {
            InvokeError::Transport { attempts, .. } | InvokeError::EmptyResponse { attempts } => {
                attempts
            }
            _ => &[],
        }
    }

    pub fn is_transport(&self) -> bool {
        matches!(self, InvokeError::Transport { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 2,
            backoff: Duration::from_millis(500),
        }
    }
}

pub struct ModelClient {
    registry: BackendRegistry,
    context: BackendContext,
    retry: RetryPolicy,
}

impl ModelClient {
    pub fn new(registry: BackendRegistry, context: BackendContext) -> Self {
        ModelClient {
            registry,
            context,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn registry(&self) -> &BackendRegistry {
        &self.registry
    }

    pub fn complete(
        &self,
        prompt: &RenderedPrompt,
        config: &ModelConfig,
    ) -> Result<Completion, InvokeError> {
        config.validate()?;
        let backend = self
            .registry
            .create(config.interface.backend_name(), &self.context)?;
        let request = ChatRequest::new(&prompt.text, config);

        let record = |attempt: u32, started_at, text: String, outcome| Invocation {
            stage: prompt.stage,
            prompt: prompt.clone(),
            response_text: text,
            config: config.clone(),
            started_at,
            ended_at: now().max(started_at),
            attempt,
            outcome,
        };

        let mut attempts = Vec::new();
        let mut last_status = None;
        let mut last_message = String::new();
        let total = self.retry.max_retries + 1;
        for attempt in 1..=total {
            if attempt > 1 && !self.retry.backoff.is_zero() {
                thread::sleep(self.retry.backoff);
            }
            let started_at = now();
            match backend.send(&request, config) {
                Ok(reply) => {
                    if reply.text.trim().is_empty() {
                        attempts.push(record(attempt, started_at, reply.text, Outcome::Empty));
                        return Err(InvokeError::EmptyResponse { attempts });
                    }
                    let outcome = if reply.finish_reason.as_deref() == Some("length") {
                        Outcome::BudgetExceeded
                    } else {
                        Outcome::Completed
                    };
                    attempts.push(record(attempt, started_at, reply.text, outcome));
                    return Ok(Completion { attempts });
                }
                Err(BackendFailure::Http { status, body }) => {
                    last_status = Some(status);
                    last_message = format!("HTTP status {status}");
                    attempts.push(record(
                        attempt,
                        started_at,
                        body,
                        Outcome::HttpError { status },
                    ));
                }
                Err(BackendFailure::Malformed { body, message }) => {
                    last_status = None;
                    last_message = message;
                    attempts.push(record(attempt, started_at, body, Outcome::MalformedReply));
                }
                Err(BackendFailure::Network(message)) => {
                    last_status = None;
                    last_message = message;
                }
                Err(BackendFailure::Fatal(message)) => {
                    return Err(InvokeError::Transport {
                        status: None,
                        message,
                        attempts_made: attempt,
                        attempts,
                    })
                }
            }
        }
        Err(InvokeError::Transport {
            status: last_status,
            message: last_message,
            attempts_made: total,
            attempts,
        })
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Invoke(#[from] InvokeError),
    #[error("stage output invalid: {source}")]
    StageOutputInvalid {
        source: TaxonomyError,
        completion: Completion,
    },
}

impl StageError {
    pub fn recorded_attempts(&self) -> &[Invocation] {
        match self {
            StageError::Invoke(e) => e.recorded_attempts(),
            StageError::StageOutputInvalid { completion, .. } => &completion.attempts,
            StageError::Template(_) => &[],
        }
    }
}

/// Pull the JSON object out of a reply that may wrap it in a code fence or
/// surrounding prose.
pub fn extract_json_payload(text: &str) -> &str {
    if let Some(start) = text.find("```") {
        let after = &text[start + 3..];
        let after = after.strip_prefix("json").unwrap_or(after);
        if let Some(end) = after.find("```") {
            return after[..end].trim();
        }
    }
    match (text.find('{'), text.rfind('}')) {
        (Some(s), Some(e)) if s < e => &text[s..=e],
        _ => text.trim(),
    }
}

pub fn run_taxonomy_stage(
    client: &ModelClient,
    template: &PromptTemplate,
    bundle: &InputBundle,
    config: &ModelConfig,
) -> Result<(Taxonomy, Completion), StageError> {
    let prompt = render_taxonomy_prompt(template, bundle)?;
    let completion = client.complete(&prompt, config)?;
    match parse_taxonomy(
        extract_json_payload(completion.response_text()).as_bytes(),
        bundle,
    ) {
        Ok(taxonomy) => Ok((taxonomy, completion)),
        Err(source) => Err(StageError::StageOutputInvalid { source, completion }),
    }
}

/// Returns the raw reply; interpreting it is the audit's job.
pub fn run_synthesis_stage(
    client: &ModelClient,
    template: &PromptTemplate,
    bundle: &InputBundle,
    taxonomy: &Taxonomy,
    config: &ModelConfig,
) -> Result<(String, Completion), StageError> {
    let prompt = render_synthesis_prompt(template, bundle, taxonomy)?;
    let completion = client.complete(&prompt, config)?;
    Ok((completion.response_text().to_owned(), completion))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::fixtures::bundle;
    use std::collections::BTreeMap;
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Arc;

    fn stub_config(fixture: &str) -> ModelConfig {
        ModelConfig {
            interface: Interface::OfflineStub,
            model_name: "llama-3.1-8b".into(),
            temperature: 0.2,
            top_p: 1.0,
            max_tokens: 1200,
            endpoint: String::new(),
            seed: None,
            fixture: Some(fixture.into()),
        }
    }

    fn client_with(fixtures: &[(&str, &str)]) -> ModelClient {
        let map: BTreeMap<String, String> = fixtures
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let mut registry = BackendRegistry::with_defaults();
        registry.register("offline-stub", move |_ctx: &BackendContext| {
            Ok(Box::new(StubBackend::from_map(map.clone())) as Box<dyn ModelBackend>)
        });
        ModelClient::new(registry, BackendContext::default())
    }

    const TAX_OK: &str = r#"```json
{"clusters":[{"name":"A","rationale":"x","member_ids":["P1","P2"]},
             {"name":"B","rationale":"y","member_ids":["P3","P4"]}]}
```"#;

    #[test]
    fn config_validation() {
        let mut c = stub_config("f");
        assert!(c.validate().is_ok());
        c.top_p = 0.0;
        assert!(c.validate().is_err());
        c.top_p = 1.0;
        c.temperature = -0.1;
        assert!(c.validate().is_err());
        c.temperature = 0.2;
        c.max_tokens = 0;
        assert!(c.validate().is_err());
        c.max_tokens = 10;
        c.interface = Interface::OpenAiCompatible;
        assert!(c.validate().is_err());
        c.endpoint = "http://localhost:8000/v1".into();
        assert!(c.validate().is_ok());
    }

    #[test]
    fn config_json_uses_wire_names() {
        let c = ModelConfig::from_json(
            br#"{"interface":"openai-compatible","model_name":"m","temperature":0.2,
                "top_p":1.0,"max_tokens":1200,"endpoint":"https://api.example.org/v1"}"#,
        )
        .unwrap();
        assert_eq!(c.interface, Interface::OpenAiCompatible);
        assert!(ModelConfig::from_json(br#"{"interface":"grpc"}"#).is_err());
    }

    #[test]
    fn stub_replays_fixture() {
        let client = client_with(&[("taxonomy_2notes", "fixture text")]);
        let b = bundle(&["P1", "P2"]);
        let prompt =
            render_taxonomy_prompt(&PromptTemplate::default_for(Stage::Taxonomy), &b).unwrap();
        let cfg = stub_config("taxonomy_2notes");
        let c = client.complete(&prompt, &cfg).unwrap();
        let inv = c.invocation();
        assert_eq!(inv.response_text, "fixture text");
        assert!(inv.ended_at >= inv.started_at);
        assert_eq!(inv.attempt, 1);
        assert_eq!(inv.config, cfg);
        let again = client.complete(&prompt, &cfg).unwrap();
        let mut a = again.invocation().clone();
        a.started_at = inv.started_at;
        a.ended_at = inv.ended_at;
        assert_eq!(&a, inv);
    }

    #[test]
    fn taxonomy_stage_parses_fenced_json() {
        let client = client_with(&[("tax", TAX_OK)]);
        let b = bundle(&["P1", "P2", "P3", "P4"]);
        let (t, c) = run_taxonomy_stage(
            &client,
            &PromptTemplate::default_for(Stage::Taxonomy),
            &b,
            &stub_config("tax"),
        )
        .unwrap();
        assert_eq!(t.clusters.len(), 2);
        assert_eq!(c.attempts.len(), 1);
    }

    #[test]
    fn taxonomy_stage_keeps_invocation_on_invalid_output() {
        let invented = r#"{"clusters":[{"name":"A","rationale":"","member_ids":["P1","P2","P99"]}]}"#;
        let client = client_with(&[("bad", invented), ("prose", "I grouped them nicely.")]);
        let b = bundle(&["P1", "P2"]);
        let tmpl = PromptTemplate::default_for(Stage::Taxonomy);
        match run_taxonomy_stage(&client, &tmpl, &b, &stub_config("bad")) {
            Err(StageError::StageOutputInvalid { source, completion }) => {
                assert_eq!(source, TaxonomyError::UnknownMember("P99".into()));
                assert_eq!(completion.response_text(), invented);
            }
            other => panic!("{other:?}"),
        }
        let err = run_taxonomy_stage(&client, &tmpl, &b, &stub_config("prose")).unwrap_err();
        assert!(matches!(
            err,
            StageError::StageOutputInvalid {
                source: TaxonomyError::MalformedSyntax { .. },
                ..
            }
        ));
        assert_eq!(err.recorded_attempts().len(), 1);
    }

    #[test]
    fn synthesis_stage_returns_text_untouched() {
        let client = client_with(&[("no_checklist", "RELATED WORK (DRAFT)\n\nBody only.")]);
        let b = bundle(&["P1"]);
        let t = Taxonomy {
            clusters: vec![crate::bundle::Cluster {
                name: "A".into(),
                rationale: String::new(),
                member_ids: vec!["P1".into()],
            }],
        };
        let (text, _) = run_synthesis_stage(
            &client,
            &PromptTemplate::default_for(Stage::Synthesis),
            &b,
            &t,
            &stub_config("no_checklist"),
        )
        .unwrap();
        assert_eq!(text, "RELATED WORK (DRAFT)\n\nBody only.");
    }

    #[test]
    fn stub_truncates_at_budget() {
        let client = client_with(&[("long", "one two three four")]);
        let b = bundle(&["P1"]);
        let prompt =
            render_taxonomy_prompt(&PromptTemplate::default_for(Stage::Taxonomy), &b).unwrap();
        let mut cfg = stub_config("long");
        cfg.max_tokens = 1;
        let c = client.complete(&prompt, &cfg).unwrap();
        assert!(c.invocation().budget_exceeded());
        assert_eq!(c.response_text(), "one");
    }

    #[test]
    fn empty_reply_is_an_error_with_the_attempt() {
        let client = client_with(&[("empty", "   ")]);
        let b = bundle(&["P1"]);
        let prompt =
            render_taxonomy_prompt(&PromptTemplate::default_for(Stage::Taxonomy), &b).unwrap();
        let err = client.complete(&prompt, &stub_config("empty")).unwrap_err();
        assert!(matches!(err, InvokeError::EmptyResponse { .. }));
        assert_eq!(err.recorded_attempts()[0].outcome, Outcome::Empty);
    }

    struct Flaky {
        calls: Arc<AtomicU32>,
        fail_first: u32,
    }

    impl ModelBackend for Flaky {
        fn name(&self) -> &str {
            "flaky"
        }
        fn send(&self, _: &ChatRequest, _: &ModelConfig) -> Result<BackendReply, BackendFailure> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fail_first {
                Err(BackendFailure::Http {
                    status: 500,
                    body: "boom".into(),
                })
            } else {
                Ok(BackendReply {
                    text: "ok".into(),
                    finish_reason: Some("stop".into()),
                })
            }
        }
    }

    fn flaky_client(fail_first: u32) -> (ModelClient, Arc<AtomicU32>) {
        let calls = Arc::new(AtomicU32::new(0));
        let shared = calls.clone();
        let mut registry = BackendRegistry::new();
        registry.register("openai-compatible", move |_ctx: &BackendContext| {
            Ok(Box::new(Flaky {
                calls: shared.clone(),
                fail_first,
            }) as Box<dyn ModelBackend>)
        });
        let client = ModelClient::new(registry, BackendContext::default()).with_retry(RetryPolicy {
            max_retries: 2,
            backoff: Duration::ZERO,
        });
        (client, calls)
    }

    fn live_config() -> ModelConfig {
        let mut c = stub_config("x");
        c.interface = Interface::OpenAiCompatible;
        c.fixture = None;
        c.endpoint = "http://localhost:1/v1".into();
        c
    }

    #[test]
    fn retries_are_bounded_and_every_reply_is_kept() {
        let b = bundle(&["P1"]);
        let prompt =
            render_taxonomy_prompt(&PromptTemplate::default_for(Stage::Taxonomy), &b).unwrap();

        let (client, calls) = flaky_client(u32::MAX);
        let err = client.complete(&prompt, &live_config()).unwrap_err();
        assert_eq!(calls.load(Ordering::SeqCst), 3);
        match &err {
            InvokeError::Transport {
                status, attempts, ..
            } => {
                assert_eq!(*status, Some(500));
                assert_eq!(attempts.len(), 3);
                assert_eq!(
                    attempts.iter().map(|a| a.attempt).collect::<Vec<_>>(),
                    vec![1, 2, 3]
                );
            }
            other => panic!("{other:?}"),
        }

        let (client, _) = flaky_client(2);
        let c = client.complete(&prompt, &live_config()).unwrap();
        assert_eq!(c.attempts.len(), 3);
        assert_eq!(c.invocation().attempt, 3);
        assert_eq!(c.response_text(), "ok");
    }

    #[test]
    fn unknown_backend_is_reported() {
        let client = ModelClient::new(BackendRegistry::new(), BackendContext::default());
        let b = bundle(&["P1"]);
        let prompt =
            render_taxonomy_prompt(&PromptTemplate::default_for(Stage::Taxonomy), &b).unwrap();
        assert!(matches!(
            client.complete(&prompt, &stub_config("x")),
            Err(InvokeError::UnknownBackend(_))
        ));
    }

    #[test]
    fn json_payload_extraction() {
        assert_eq!(extract_json_payload("```json\n{\"a\":1}\n```"), "{\"a\":1}");
        assert_eq!(extract_json_payload("Sure! {\"a\":1} done"), "{\"a\":1}");
        assert_eq!(extract_json_payload("no json"), "no json");
    }
}

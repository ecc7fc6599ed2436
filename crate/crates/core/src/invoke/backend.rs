use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{InvokeError, ModelConfig, OpenAiBackend, StubBackend, ENV_API_KEY};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Chat-completions request body. One user message carries the prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<i64>,
}

impl ChatRequest {
    pub fn new(prompt: &str, config: &ModelConfig) -> Self {
        ChatRequest {
            model: config.model_name.clone(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: prompt.to_owned(),
            }],
            temperature: config.temperature,
            top_p: config.top_p,
            max_tokens: config.max_tokens,
            seed: config.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendReply {
    pub text: String,
    pub finish_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendFailure {
    /// Non-success status; the body is kept for provenance.
    Http { status: u16, body: String },
    /// A reply arrived but could not be read as a chat completion.
    Malformed { body: String, message: String },
    /// Nothing came back (connect failure, timeout).
    Network(String),
    /// Not worth retrying (missing fixture, bad request construction).
    Fatal(String),
}

/// One way of turning a chat request into reply text.
pub trait ModelBackend: Send + Sync {
    fn name(&self) -> &str;
    fn send(&self, request: &ChatRequest, config: &ModelConfig)
        -> Result<BackendReply, BackendFailure>;
}

/// Environment shared by backend constructors.
#[derive(Clone, Default)]
pub struct BackendContext {
    pub api_key: Option<String>,
    pub fixtures_dir: Option<PathBuf>,
    pub timeout: Option<Duration>,
}

impl fmt::Debug for BackendContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BackendContext")
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("fixtures_dir", &self.fixtures_dir)
            .field("timeout", &self.timeout)
            .finish()
    }
}

impl BackendContext {
    pub fn from_env() -> Self {
        BackendContext {
            api_key: std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty()),
            ..Default::default()
        }
    }

    pub fn with_fixtures_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.fixtures_dir = Some(dir.into());
        self
    }
}

pub type BackendFactory =
    Arc<dyn Fn(&BackendContext) -> Result<Box<dyn ModelBackend>, InvokeError> + Send + Sync>;

/// Backends by name. Registering an existing name replaces it.
#[derive(Clone, Default)]
pub struct BackendRegistry {
    factories: BTreeMap<String, BackendFactory>,
}

impl BackendRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The OpenAI-compatible HTTP client and the fixture-replay stub.
    pub fn with_defaults() -> Self {
        let mut registry = Self::new();
        registry.register("openai-compatible", |ctx: &BackendContext| {
            Ok(Box::new(OpenAiBackend::new(ctx)?) as Box<dyn ModelBackend>)
        });
        registry.register("offline-stub", |ctx: &BackendContext| {
            let dir = ctx.fixtures_dir.clone().ok_or_else(|| {
                InvokeError::Setup("offline stub needs a fixtures directory".into())
            })?;
            Ok(Box::new(StubBackend::from_dir(dir)) as Box<dyn ModelBackend>)
        });
        registry
    }

    pub fn register<F>(&mut self, name: impl Into<String>, factory: F)
    where
        F: Fn(&BackendContext) -> Result<Box<dyn ModelBackend>, InvokeError> + Send + Sync + 'static,
    {
        self.factories.insert(name.into(), Arc::new(factory));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn create(
        &self,
        name: &str,
        ctx: &BackendContext,
    ) -> Result<Box<dyn ModelBackend>, InvokeError> {
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| InvokeError::UnknownBackend(name.to_owned()))?;
        factory(ctx)
    }
}

impl fmt::Debug for BackendRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

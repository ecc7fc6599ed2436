use std::time::Duration;

use reqwest::blocking::Client;
use serde::Deserialize;

use super::backend::{BackendContext, BackendFailure, BackendReply, ChatRequest, ModelBackend};
use super::{InvokeError, ModelConfig};

const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

/// `POST <endpoint>/chat/completions`, reading the first choice's content.
pub struct OpenAiBackend {
    http: Client,
    api_key: Option<String>,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

impl OpenAiBackend {
    pub fn new(ctx: &BackendContext) -> Result<Self, InvokeError> {
        let http = Client::builder()
            .timeout(ctx.timeout.unwrap_or(DEFAULT_TIMEOUT))
            .build()
            .map_err(|e| InvokeError::Setup(e.to_string()))?;
        Ok(OpenAiBackend {
            http,
            api_key: ctx.api_key.clone(),
        })
    }

    pub fn completions_url(endpoint: &str) -> String {
        format!("{}/chat/completions", endpoint.trim_end_matches('/'))
    }
}

impl ModelBackend for OpenAiBackend {
    fn name(&self) -> &str {
        "openai-compatible"
    }

    fn send(
        &self,
        request: &ChatRequest,
        config: &ModelConfig,
    ) -> Result<BackendReply, BackendFailure> {
        let mut builder = self
            .http
            .post(Self::completions_url(&config.endpoint))
            .json(request);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| BackendFailure::Network(e.to_string()))?;
        let status = response.status();
        let body = response
            .text()
            .map_err(|e| BackendFailure::Network(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendFailure::Http {
                status: status.as_u16(),
                body,
            });
        }
        let parsed: CompletionResponse =
            serde_json::from_str(&body).map_err(|e| BackendFailure::Malformed {
                body: body.clone(),
                message: format!("unreadable completion: {e}"),
            })?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendFailure::Malformed {
                body: body.clone(),
                message: "completion has no choices".into(),
            })?;
        Ok(BackendReply {
            text: choice.message.content.unwrap_or_default(),
            finish_reason: choice.finish_reason,
        })
    }
}

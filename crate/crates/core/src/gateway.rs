//! Unified model layer: a registry of provider adapters behind one
//! `generate(model_name, prompt)` entry point, and concurrent fan-out.
//!
//! Adapters only report *what happened*; the gateway owns deadlines, latency
//! measurement and the normalization of failures into [`ModelOutput`]s.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use futures::future::join_all;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    GenerationParams, ModelError, ModelOutput, OutputId, OutputStatus, ProviderConfig,
    ProviderKind, SessionId,
};
use crate::prompt::RenderedPrompt;

#[derive(Debug, Error, PartialEq)]
pub enum GatewayError {
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("no models requested")]
    EmptyModelList,
    #[error(transparent)]
    InvalidConfig(#[from] ModelError),
}

/// Provider-side failure, normalized to `provider_error` by the gateway.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ProviderFault {
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("{0}")]
    Other(String),
}

/// Request handed to an adapter. Field names are the outbound JSON body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

/// Expected JSON body of a successful `http_chat` response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
}

/// A wrapper conforming one model service to the unified interface.
#[async_trait]
pub trait Provider: Send + Sync {
    async fn complete(
        &self,
        request: &ChatRequest,
        prompt: &RenderedPrompt,
    ) -> Result<String, ProviderFault>;
}

/// Deterministic offline criteria for `(model_name, prompt_hash)`.
pub fn mock_criteria(model_name: &str, prompt_hash: &str) -> String {
    let seed = &prompt_hash[..prompt_hash.len().min(8)];
    format!(
        "1. Given the story [{seed}], when the primary action succeeds, then the user sees a confirmation ({model_name}).\n\
         2. Given the story [{seed}], when required input is missing, then a validation message names the missing field ({model_name}).\n\
         3. Given the story [{seed}], when the action completes, then the change is recorded for audit ({model_name})."
    )
}

/// Offline provider. Text comes from [`mock_criteria`]; an optional delay and
/// forced failure make it usable as a fault-injection harness.
#[derive(Debug, Default)]
pub struct MockProvider {
    delay: Option<Duration>,
    fail_with: Option<String>,
    calls: Arc<AtomicUsize>,
}

impl MockProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = Some(delay);
        self
    }

    pub fn failing(mut self, detail: impl Into<String>) -> Self {
        self.fail_with = Some(detail.into());
        self
    }

    /// Shared counter of `complete` invocations.
    pub fn call_counter(&self) -> Arc<AtomicUsize> {
        Arc::clone(&self.calls)
    }
}

#[async_trait]
impl Provider for MockProvider {
    async fn complete(
        &self,
        request: &ChatRequest,
        prompt: &RenderedPrompt,
    ) -> Result<String, ProviderFault> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(delay) = self.delay {
            tokio::time::sleep(delay).await;
        }
        if let Some(detail) = &self.fail_with {
            return Err(ProviderFault::Other(detail.clone()));
        }
        Ok(mock_criteria(&request.model, &prompt.prompt_hash))
    }
}

const MAX_ERROR_BODY: usize = 256;

/// Generic JSON chat endpoint: `POST {model, prompt, temperature, max_tokens}`
/// answered by `{text}`, authenticated with a bearer token read from the
/// environment on every call.
#[derive(Debug, Clone)]
pub struct HttpChatProvider {
    client: reqwest::Client,
    endpoint_url: String,
    credential_env_var: String,
}

impl HttpChatProvider {
    pub fn new(endpoint_url: impl Into<String>, credential_env_var: impl Into<String>) -> Self {
        Self {
            client: reqwest::Client::new(),
            endpoint_url: endpoint_url.into(),
            credential_env_var: credential_env_var.into(),
        }
    }

    async fn send_once(
        &self,
        request: &ChatRequest,
        secret: &str,
    ) -> Result<reqwest::Response, reqwest::Error> {
        self.client
            .post(&self.endpoint_url)
            .bearer_auth(secret)
            .json(request)
            .send()
            .await
    }
}

#[async_trait]
impl Provider for HttpChatProvider {
    async fn complete(
        &self,
        request: &ChatRequest,
        _prompt: &RenderedPrompt,
    ) -> Result<String, ProviderFault> {
        let secret = std::env::var(&self.credential_env_var).map_err(|_| {
            ProviderFault::Other(format!(
                "credential environment variable {} is not set",
                self.credential_env_var
            ))
        })?;

        // One retry, and only when the connection itself could not be made.
        let response = match self.send_once(request, &secret).await {
            Err(e) if e.is_connect() => {
                tracing::debug!(endpoint = %self.endpoint_url, "connect failed, retrying once");
                self.send_once(request, &secret).await
            }
            other => other,
        }
        .map_err(|e| ProviderFault::Transport(e.to_string()))?;

        let status = response.status();
        if !status.is_success() {
            let mut body = response.text().await.unwrap_or_default();
            if body.len() > MAX_ERROR_BODY {
                let mut cut = MAX_ERROR_BODY;
                while !body.is_char_boundary(cut) {
                    cut -= 1;
                }
                body.truncate(cut);
            }
            return Err(ProviderFault::Status {
                status: status.as_u16(),
                body,
            });
        }
        let parsed: ChatResponse = response
            .json()
            .await
            .map_err(|e| ProviderFault::InvalidResponse(e.to_string()))?;
        if parsed.text.is_empty() {
            return Err(ProviderFault::InvalidResponse("empty `text`".into()));
        }
        Ok(parsed.text)
    }
}

struct Registered {
    config: ProviderConfig,
    adapter: Arc<dyn Provider>,
}

/// All outputs of one fan-out, in request order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FanOutResult {
    pub outputs: Vec<ModelOutput>,
    pub wall_ms: u64,
}

/// Registered providers keyed by model name, in registration order.
#[derive(Default)]
pub struct ProviderRegistry {
    providers: IndexMap<String, Registered>,
}

impl std::fmt::Debug for ProviderRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list()
            .entries(self.providers.values().map(|r| &r.config))
            .finish()
    }
}

impl ProviderRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_configs(
        configs: impl IntoIterator<Item = ProviderConfig>,
    ) -> Result<Self, GatewayError> {
        let mut registry = Self::new();
        for config in configs {
            registry.register_provider(config)?;
        }
        Ok(registry)
    }

    /// Register a provider with the adapter implied by its kind. An existing
    /// entry with the same model name is replaced in place.
    pub fn register_provider(&mut self, config: ProviderConfig) -> Result<(), GatewayError> {
        config.validate()?;
        let adapter: Arc<dyn Provider> = match config.kind {
            ProviderKind::Mock => Arc::new(MockProvider::new()),
            ProviderKind::HttpChat => Arc::new(HttpChatProvider::new(
                config.endpoint_url.clone().unwrap_or_default(),
                config.credential_env_var.clone().unwrap_or_default(),
            )),
        };
        self.register_adapter(config, adapter)
    }

    /// Register a provider backed by a caller-supplied adapter.
    pub fn register_adapter(
        &mut self,
        config: ProviderConfig,
        adapter: Arc<dyn Provider>,
    ) -> Result<(), GatewayError> {
        config.validate()?;
        self.providers
            .insert(config.model_name.clone(), Registered { config, adapter });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.providers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.providers.is_empty()
    }

    pub fn contains(&self, model_name: &str) -> bool {
        self.providers.contains_key(model_name)
    }

    pub fn get(&self, model_name: &str) -> Option<&ProviderConfig> {
        self.providers.get(model_name).map(|r| &r.config)
    }

    /// Configs in registration order.
    pub fn configs(&self) -> impl Iterator<Item = &ProviderConfig> {
        self.providers.values().map(|r| &r.config)
    }

    pub fn model_names(&self) -> Vec<String> {
        self.providers.keys().cloned().collect()
    }

    /// Call one provider. Provider failures and deadline overruns come back as
    /// non-ok outputs; only an unregistered name is an error.
    pub async fn generate(
        &self,
        session_id: SessionId,
        model_name: &str,
        prompt: &RenderedPrompt,
        params: &GenerationParams,
    ) -> Result<ModelOutput, GatewayError> {
        let registered = self
            .providers
            .get(model_name)
            .ok_or_else(|| GatewayError::UnknownModel(model_name.to_owned()))?;
        Ok(invoke(registered, session_id, model_name, prompt, params).await)
    }

    /// Call every named provider concurrently. Names are checked before any
    /// request is issued.
    pub async fn fan_out(
        &self,
        session_id: SessionId,
        model_names: &[String],
        prompt: &RenderedPrompt,
        params: &GenerationParams,
    ) -> Result<FanOutResult, GatewayError> {
        if model_names.is_empty() {
            return Err(GatewayError::EmptyModelList);
        }
        let targets = model_names
            .iter()
            .map(|name| {
                self.providers
                    .get(name)
                    .map(|r| (name.as_str(), r))
                    .ok_or_else(|| GatewayError::UnknownModel(name.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;

        let started = Instant::now();
        let outputs = join_all(
            targets
                .into_iter()
                .map(|(name, registered)| invoke(registered, session_id, name, prompt, params)),
        )
        .await;
        Ok(FanOutResult {
            outputs,
            wall_ms: elapsed_ms(started),
        })
    }
}

async fn invoke(
    registered: &Registered,
    session_id: SessionId,
    model_name: &str,
    prompt: &RenderedPrompt,
    params: &GenerationParams,
) -> ModelOutput {
    let request = ChatRequest {
        model: model_name.to_owned(),
        prompt: prompt.text.clone(),
        temperature: params.temperature,
        max_tokens: params.max_tokens,
    };
    let deadline = Duration::from_millis(params.timeout_ms);
    let started = Instant::now();
    let result =
        tokio::time::timeout(deadline, registered.adapter.complete(&request, prompt)).await;
    let latency_ms = elapsed_ms(started);

    let (status, text, error_detail) = match result {
        Ok(Ok(text)) if !text.is_empty() => (OutputStatus::Ok, text, String::new()),
        Ok(Ok(_)) => (
            OutputStatus::ProviderError,
            String::new(),
            "provider returned empty text".to_owned(),
        ),
        Ok(Err(fault)) => (
            OutputStatus::ProviderError,
            String::new(),
            fault.to_string(),
        ),
        Err(_) => (
            OutputStatus::Timeout,
            String::new(),
            format!("no response within {} ms", params.timeout_ms),
        ),
    };
    if status != OutputStatus::Ok {
        tracing::warn!(model = model_name, %status, detail = %error_detail, "provider call failed");
    }
    ModelOutput {
        output_id: OutputId::random(),
        session_id,
        model_name: model_name.to_owned(),
        prompt_hash: prompt.prompt_hash.clone(),
        text,
        latency_ms,
        status,
        error_detail,
        supersedes: None,
    }
}

fn elapsed_ms(since: Instant) -> u64 {
    u64::try_from(since.elapsed().as_millis()).unwrap_or(u64::MAX)
}

//! HTTP/JSON endpoints.
//!
//! Bodies are parsed by hand from raw bytes so that every malformed body maps
//! to 400, whatever the reason (syntax, types, unknown enum value).

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use criteria_core::{
    compute_metrics, export_csv, render_prompt, validate_story, CsvError, DeviceType, ExportScope,
    FeedbackAction, GatewayError, GenerationParams, LedgerError, ModelError, OutputId,
    PromptTechnique, ProviderKind, ProviderRegistry, RenderedPrompt, SessionId, SharedLedger,
    DEFAULT_MAX_TOKENS, DEFAULT_TEMPERATURE,
};
use criteria_core::{EventPayload, ModelOutput};
use parking_lot::RwLock;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

/// Shared handler state.
#[derive(Clone)]
pub struct AppState {
    registry: Arc<ProviderRegistry>,
    ledger: SharedLedger,
    // Rendered prompts by hash, so regeneration resends the exact prompt.
    prompts: Arc<RwLock<HashMap<String, RenderedPrompt>>>,
    default_timeout_ms: u64,
}

impl AppState {
    pub fn new(registry: ProviderRegistry, ledger: SharedLedger, default_timeout_ms: u64) -> Self {
        Self {
            registry: Arc::new(registry),
            ledger,
            prompts: Arc::default(),
            default_timeout_ms,
        }
    }

    pub fn ledger(&self) -> &SharedLedger {
        &self.ledger
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/sessions", post(open_session))
        .route("/api/models", get(list_models))
        .route("/api/generate", post(generate))
        .route("/api/feedback", post(feedback))
        .route("/api/export", get(export))
        .route("/api/metrics", get(metrics))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            kind,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(json!({"error": self.kind, "message": self.message})),
        )
            .into_response()
    }
}

impl From<LedgerError> for ApiError {
    fn from(e: LedgerError) -> Self {
        let (status, kind) = match &e {
            LedgerError::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
            LedgerError::UnknownOutput(_) => (StatusCode::NOT_FOUND, "unknown_output"),
            LedgerError::FeedbackOnFailedOutput(_) => {
                (StatusCode::CONFLICT, "feedback_on_failed_output")
            }
            LedgerError::InvalidEvent(_)
            | LedgerError::DuplicateSession(_)
            | LedgerError::DuplicateOutput(_) => (StatusCode::CONFLICT, "invalid_event"),
            LedgerError::Journal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "journal"),
        };
        Self::new(status, kind, e.to_string())
    }
}

impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> Self {
        let kind = match e {
            GatewayError::UnknownModel(_) => "unknown_model",
            GatewayError::EmptyModelList => "empty_model_list",
            GatewayError::InvalidConfig(_) => "invalid_config",
        };
        Self::new(StatusCode::BAD_REQUEST, kind, e.to_string())
    }
}

impl From<ModelError> for ApiError {
    fn from(e: ModelError) -> Self {
        let kind = match e {
            ModelError::EmptyStory => "empty_story",
            ModelError::DuplicateContextKey(_) => "duplicate_context_key",
            _ => "bad_request",
        };
        Self::new(StatusCode::BAD_REQUEST, kind, e.to_string())
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let malformed = |e: serde_json::Error| ApiError::bad_request(format!("malformed body: {e}"));
    let value: serde_json::Value = serde_json::from_slice(body).map_err(malformed)?;
    if !value.is_object() {
        return Err(ApiError::bad_request(
            "malformed body: expected a JSON object",
        ));
    }
    serde_json::from_value(value).map_err(malformed)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OpenSessionRequest {
    #[serde(default)]
    device_type: Option<DeviceType>,
}

async fn open_session(
    State(state): State<AppState>,
    body: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    let request: OpenSessionRequest = if body.iter().all(u8::is_ascii_whitespace) {
        OpenSessionRequest { device_type: None }
    } else {
        parse_body(&body)?
    };
    let session = state
        .ledger
        .open_session(request.device_type.unwrap_or_default())?;
    Ok((
        StatusCode::CREATED,
        Json(json!({
            "session_id": session.session_id,
            "device_type": session.device_type,
        })),
    ))
}

#[derive(Serialize)]
struct ModelEntry<'a> {
    model_name: &'a str,
    display_name: &'a str,
    kind: ProviderKind,
}

async fn list_models(State(state): State<AppState>) -> impl IntoResponse {
    let models: Vec<ModelEntry<'_>> = state
        .registry
        .configs()
        .map(|c| ModelEntry {
            model_name: &c.model_name,
            display_name: &c.display_name,
            kind: c.kind,
        })
        .collect();
    Json(json!({ "models": models }))
}

#[derive(Debug, Deserialize)]
struct ContextEntry {
    key: String,
    value: String,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsInput {
    temperature: Option<f64>,
    max_tokens: Option<u32>,
    timeout_ms: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateRequest {
    session_id: SessionId,
    #[serde(default)]
    story_text: String,
    #[serde(default)]
    context: Vec<ContextEntry>,
    model_names: Vec<String>,
    #[serde(default)]
    technique: PromptTechnique,
    #[serde(default)]
    params: ParamsInput,
    #[serde(default)]
    regenerate_of: Option<OutputId>,
}

#[derive(Serialize)]
struct GenerateResponse {
    outputs: Vec<ModelOutput>,
    wall_ms: u64,
}

async fn generate(
    State(state): State<AppState>,
    body: Bytes,
) -> Result<Json<GenerateResponse>, ApiError> {
    let request: GenerateRequest = parse_body(&body)?;
    let session_id = request.session_id;
    state
        .ledger
        .read(|l| l.session(session_id).is_some())
        .then_some(())
        .ok_or(LedgerError::UnknownSession(session_id))?;

    let params = GenerationParams::new(
        request.params.temperature.unwrap_or(DEFAULT_TEMPERATURE),
        request.params.max_tokens.unwrap_or(DEFAULT_MAX_TOKENS),
        request
            .params
            .timeout_ms
            .unwrap_or(state.default_timeout_ms),
    )?;
    let render = || -> Result<RenderedPrompt, ApiError> {
        let story = validate_story(
            request.story_text.clone(),
            request
                .context
                .iter()
                .map(|c| (c.key.clone(), c.value.clone()))
                .collect(),
        )?;
        Ok(render_prompt(&story, &request.technique, &params))
    };

    let Some(old_id) = request.regenerate_of else {
        let prompt = render()?;
        state
            .prompts
            .write()
            .insert(prompt.prompt_hash.clone(), prompt.clone());
        let result = state
            .registry
            .fan_out(session_id, &request.model_names, &prompt, &params)
            .await?;
        let events = state
            .ledger
            .record_generations(session_id, result.outputs)?;
        return Ok(Json(GenerateResponse {
            outputs: events.into_iter().filter_map(into_output).collect(),
            wall_ms: result.wall_ms,
        }));
    };

    let old = state
        .ledger
        .read(|l| l.output(session_id, old_id).cloned())?;
    if !old.is_ok() {
        return Err(LedgerError::FeedbackOnFailedOutput(old_id).into());
    }
    if request.model_names.as_slice() != [old.model_name.clone()] {
        return Err(ApiError::bad_request(format!(
            "regenerate_of requires model_names = [\"{}\"]",
            old.model_name
        )));
    }
    let cached = state.prompts.read().get(&old.prompt_hash).cloned();
    let prompt = match cached {
        Some(p) => p,
        None => render()?,
    };
    let result = state
        .registry
        .fan_out(session_id, &request.model_names, &prompt, &params)
        .await?;
    let replacement = result
        .outputs
        .into_iter()
        .next()
        .expect("one output per requested model");
    let (_, generation) = state
        .ledger
        .record_regeneration(session_id, old_id, replacement)?;
    Ok(Json(GenerateResponse {
        outputs: into_output(generation).into_iter().collect(),
        wall_ms: result.wall_ms,
    }))
}

fn into_output(event: criteria_core::EventRecord) -> Option<ModelOutput> {
    match event.payload {
        EventPayload::Generation(o) => Some(o),
        _ => None,
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedbackRequest {
    session_id: SessionId,
    output_id: OutputId,
    action: FeedbackAction,
    #[serde(default)]
    final_text: Option<String>,
}

async fn feedback(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let request: FeedbackRequest = parse_body(&body)?;
    let final_text = match (request.action, request.final_text) {
        (FeedbackAction::Edit, None) => {
            return Err(ApiError::bad_request("edit requires final_text"));
        }
        (_, text) => text.unwrap_or_default(),
    };
    let event = state.ledger.record_feedback(
        request.session_id,
        request.output_id,
        request.action,
        &final_text,
    )?;
    match event.payload {
        EventPayload::Feedback(record) => Ok(Json(record).into_response()),
        _ => unreachable!("record_feedback appends feedback events"),
    }
}

#[derive(Deserialize)]
struct ExportQuery {
    scope: Option<String>,
}

async fn export(
    State(state): State<AppState>,
    Query(query): Query<ExportQuery>,
) -> Result<Response, ApiError> {
    let scope_name = query.scope.unwrap_or_else(|| "all".to_owned());
    let scope = if scope_name == "all" {
        ExportScope::All
    } else {
        let id = scope_name.parse::<SessionId>().map_err(|_| {
            ApiError::new(
                StatusCode::NOT_FOUND,
                "unknown_session",
                format!("unknown session {scope_name}"),
            )
        })?;
        ExportScope::Session(id)
    };
    let bytes = state
        .ledger
        .read(|l| export_csv(l, scope))
        .map_err(|e| match e {
            CsvError::UnknownSession(_) => {
                ApiError::new(StatusCode::NOT_FOUND, "unknown_session", e.to_string())
            }
            other => ApiError::new(
                StatusCode::INTERNAL_SERVER_ERROR,
                "export",
                other.to_string(),
            ),
        })?;
    Ok((
        [
            (header::CONTENT_TYPE, "text/csv; charset=utf-8".to_owned()),
            (
                header::CONTENT_DISPOSITION,
                format!("attachment; filename=\"feedback-log-{scope_name}.csv\""),
            ),
        ],
        bytes,
    )
        .into_response())
}

async fn metrics(State(state): State<AppState>) -> Response {
    let report = state.ledger.read(compute_metrics);
    (
        [(header::CONTENT_TYPE, "application/json")],
        report.to_json(),
    )
        .into_response()
}

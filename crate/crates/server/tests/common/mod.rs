#![allow(dead_code)]

use std::path::PathBuf;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chrono::{DateTime, Utc};
use criteria_core::gateway::mock_criteria;
use criteria_core::{
    render_prompt, validate_story, DeviceType, FeedbackAction, GenerationParams, Ledger,
    ModelOutput, OutputId, OutputStatus, PromptTechnique, ProviderConfig, SessionId,
};
use criteria_server::config::ServiceConfig;
use http_body_util::BodyExt;
use tower::ServiceExt;

pub const MOCKS: [&str; 3] = ["mock-a", "mock-b", "mock-c"];

pub fn mock_config() -> ServiceConfig {
    ServiceConfig {
        listen_address: "127.0.0.1:0".into(),
        default_timeout_ms: 30_000,
        journal_path: None,
        providers: MOCKS
            .iter()
            .map(|m| ProviderConfig::mock(*m).with_display_name(m.to_uppercase()))
            .collect(),
    }
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("fixtures")
        .join(name)
}

pub async fn call(
    app: &Router,
    method: &str,
    uri: &str,
    body: Option<&str>,
) -> (StatusCode, Vec<u8>, Option<String>) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    let req = req
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_owned())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let content_type = resp
        .headers()
        .get("content-type")
        .and_then(|v| v.to_str().ok())
        .map(str::to_owned);
    let bytes = resp
        .into_body()
        .collect()
        .await
        .unwrap()
        .to_bytes()
        .to_vec();
    (status, bytes, content_type)
}

pub async fn call_json(
    app: &Router,
    method: &str,
    uri: &str,
    body: Option<serde_json::Value>,
) -> (StatusCode, serde_json::Value) {
    let body = body.map(|b| b.to_string());
    let (status, bytes, _) = call(app, method, uri, body.as_deref()).await;
    let value = if bytes.is_empty() {
        serde_json::Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or(serde_json::Value::Null)
    };
    (status, value)
}

pub fn csv_rows(bytes: &[u8]) -> Vec<csv::StringRecord> {
    csv::Reader::from_reader(bytes)
        .records()
        .map(|r| r.unwrap())
        .collect()
}

fn at(s: &str) -> DateTime<Utc> {
    DateTime::parse_from_rfc3339(s).unwrap().with_timezone(&Utc)
}

pub const GOLDEN_STORY: &str = "As a user, I want to reset my password so that I can regain access";

pub const SESSION_ONE: SessionId = SessionId::from_u128(0x0f1e2d3c_4b5a_4978_8695_a4b3c2d1e0f1);
pub const SESSION_TWO: SessionId = SessionId::from_u128(0x1a2b3c4d_5e6f_4a0b_9c1d_2e3f4a5b6c7d);

pub const EXTRA_LINE: &str =
    "\n4. Given the reset link has expired, when it is opened, then the user can request a new one.";

fn output(
    session_id: SessionId,
    id: u128,
    model: &str,
    prompt_hash: &str,
    latency_ms: u64,
    status: OutputStatus,
    error_detail: &str,
) -> ModelOutput {
    ModelOutput {
        output_id: OutputId::from_u128(id),
        session_id,
        model_name: model.to_owned(),
        prompt_hash: prompt_hash.to_owned(),
        text: if status == OutputStatus::Ok {
            mock_criteria(model, prompt_hash)
        } else {
            String::new()
        },
        latency_ms,
        status,
        error_detail: error_detail.to_owned(),
        supersedes: None,
    }
}

/// Fixed two-session script behind the golden CSV and metrics fixtures.
///
/// Session one: mock-a accepted, mock-b edited (one line appended), mock-c
/// regenerated and the replacement accepted. Session two: mock-a edited
/// twice (last edit drops the final character), mock-b times out, mock-c
/// fails with HTTP 500.
pub fn scripted_ledger() -> Ledger {
    let story = validate_story(GOLDEN_STORY, vec![("domain".into(), "auth".into())]).unwrap();
    let prompt = render_prompt(
        &story,
        &PromptTechnique::zero_shot(),
        &GenerationParams::default(),
    );
    let h = prompt.prompt_hash.as_str();
    let ok = OutputStatus::Ok;
    let mut l = Ledger::new();

    let s1 = SESSION_ONE;
    l.open_session_at(s1, DeviceType::Desktop, at("2026-01-15T09:00:00.000Z"))
        .unwrap();
    let a = output(s1, 0xa1, "mock-a", h, 120, ok, "");
    let b = output(s1, 0xb1, "mock-b", h, 340, ok, "");
    let c = output(s1, 0xc1, "mock-c", h, 95, ok, "");
    let b_text = b.text.clone();
    let gen_at = at("2026-01-15T09:00:02.345Z");
    l.record_generation_at(s1, a, gen_at).unwrap();
    l.record_generation_at(s1, b, gen_at).unwrap();
    l.record_generation_at(s1, c, gen_at).unwrap();
    l.record_feedback_at(
        s1,
        OutputId::from_u128(0xa1),
        FeedbackAction::Accept,
        "",
        at("2026-01-15T09:01:10.000Z"),
    )
    .unwrap();
    l.record_feedback_at(
        s1,
        OutputId::from_u128(0xb1),
        FeedbackAction::Edit,
        &format!("{b_text}{EXTRA_LINE}"),
        at("2026-01-15T09:02:30.250Z"),
    )
    .unwrap();
    let c2 = output(s1, 0xc2, "mock-c", h, 101, ok, "");
    l.record_regeneration_at(
        s1,
        OutputId::from_u128(0xc1),
        c2,
        at("2026-01-15T09:03:00.500Z"),
    )
    .unwrap();
    l.record_feedback_at(
        s1,
        OutputId::from_u128(0xc2),
        FeedbackAction::Accept,
        "",
        at("2026-01-15T09:03:40.000Z"),
    )
    .unwrap();

    let s2 = SESSION_TWO;
    l.open_session_at(s2, DeviceType::Mobile, at("2026-01-15T09:30:00.000Z"))
        .unwrap();
    let e = output(s2, 0xe1, "mock-a", h, 150, ok, "");
    let e_text = e.text.clone();
    let gen_at = at("2026-01-15T09:30:01.001Z");
    l.record_generation_at(s2, e, gen_at).unwrap();
    l.record_generation_at(
        s2,
        output(
            s2,
            0xf1,
            "mock-b",
            h,
            1000,
            OutputStatus::Timeout,
            "no response within 1000 ms",
        ),
        gen_at,
    )
    .unwrap();
    l.record_generation_at(
        s2,
        output(
            s2,
            0x91,
            "mock-c",
            h,
            12,
            OutputStatus::ProviderError,
            "HTTP 500: upstream unavailable",
        ),
        gen_at,
    )
    .unwrap();
    l.record_feedback_at(
        s2,
        OutputId::from_u128(0xe1),
        FeedbackAction::Edit,
        "1. Rewritten entirely.",
        at("2026-01-15T09:31:00.000Z"),
    )
    .unwrap();
    l.record_feedback_at(
        s2,
        OutputId::from_u128(0xe1),
        FeedbackAction::Edit,
        &e_text[..e_text.len() - 1],
        at("2026-01-15T09:31:30.000Z"),
    )
    .unwrap();
    l
}

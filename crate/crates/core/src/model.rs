//! Shared domain types and input validation.
//!
//! Everything in here is a plain immutable value: no I/O, no clocks beyond
//! [`now_millis`], and every enum has a stable lowercase string form used by
//! the JSON API, the CSV export and the journal.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

/// Validation failures for user-supplied domain values.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("user story text is empty")]
    EmptyStory,
    #[error("duplicate context key `{0}`")]
    DuplicateContextKey(String),
    #[error("context keys must be non-empty")]
    EmptyContextKey,
    #[error("few_shot requires at least one exemplar")]
    MissingExemplars,
    #[error("zero_shot does not take exemplars")]
    UnexpectedExemplars,
    #[error("temperature {0} outside [0.0, 2.0]")]
    TemperatureOutOfRange(f64),
    #[error("max_tokens must be at least 1")]
    ZeroMaxTokens,
    #[error("timeout_ms must be at least 1")]
    ZeroTimeout,
    #[error("invalid provider config `{model_name}`: {reason}")]
    InvalidProvider { model_name: String, reason: String },
    #[error("unrecognized {kind} `{value}`")]
    UnknownVariant { kind: &'static str, value: String },
}

/// Current UTC instant truncated to whole milliseconds, the precision the
/// ledger persists.
pub fn now_millis() -> DateTime<Utc> {
    let now = Utc::now();
    DateTime::from_timestamp_millis(now.timestamp_millis()).unwrap_or(now)
}

macro_rules! id_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(Uuid);

        impl $name {
            pub fn random() -> Self {
                Self(Uuid::new_v4())
            }

            pub const fn from_u128(v: u128) -> Self {
                Self(Uuid::from_u128(v))
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.hyphenated().fmt(f)
            }
        }

        impl FromStr for $name {
            type Err = uuid::Error;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Uuid::parse_str(s).map(Self)
            }
        }
    };
}

id_newtype!(
    /// Identifier of a validated user story.
    StoryId
);
id_newtype!(
    /// Identifier of one provider output.
    OutputId
);
id_newtype!(
    /// Identifier of a logging session.
    SessionId
);

/// Implements `as_str`, `Display`, `FromStr` and string serde for a fieldless
/// enum from a single variant/name table.
macro_rules! string_enum {
    ($(#[$meta:meta])* $name:ident, $kind:literal { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = ModelError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(ModelError::UnknownVariant { kind: $kind, value: other.to_owned() }),
                }
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_enum!(
    /// Prompting strategy name.
    TechniqueName, "technique" { ZeroShot => "zero_shot", FewShot => "few_shot" }
);
string_enum!(
    /// Adapter family a provider is served by.
    ProviderKind, "provider kind" { Mock => "mock", HttpChat => "http_chat" }
);
string_enum!(
    /// Outcome of a single provider call.
    OutputStatus, "output status" { Ok => "ok", Timeout => "timeout", ProviderError => "provider_error" }
);
string_enum!(
    /// Human decision on a model output.
    FeedbackAction, "feedback action" { Accept => "accept", Edit => "edit", Regenerate => "regenerate" }
);
string_enum!(
    /// Derived fate of a model output.
    Disposition, "disposition" { Accepted => "accepted", Edited => "edited", Superseded => "superseded", Pending => "pending" }
);
string_enum!(
    /// Client device class recorded at session open.
    DeviceType, "device type" { Desktop => "desktop", Mobile => "mobile", Tablet => "tablet", Unknown => "unknown" }
);
string_enum!(
    /// Ledger event discriminator.
    EventType, "event type" { SessionOpened => "session_opened", Generation => "generation", Feedback => "feedback" }
);

#[allow(clippy::derivable_impls)]
impl Default for DeviceType {
    fn default() -> Self {
        DeviceType::Unknown
    }
}

/// A validated user story plus its contextual metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserStory {
    pub story_id: StoryId,
    pub text: String,
    pub context: Vec<(String, String)>,
}

/// Validate raw story input and assign it a fresh id.
pub fn validate_story(
    text: impl Into<String>,
    context: Vec<(String, String)>,
) -> Result<UserStory, ModelError> {
    let text = text.into();
    if text.trim().is_empty() {
        return Err(ModelError::EmptyStory);
    }
    let mut seen = HashSet::with_capacity(context.len());
    for (key, _) in &context {
        if key.is_empty() {
            return Err(ModelError::EmptyContextKey);
        }
        if !seen.insert(key.as_str()) {
            return Err(ModelError::DuplicateContextKey(key.clone()));
        }
    }
    Ok(UserStory {
        story_id: StoryId::random(),
        text,
        context,
    })
}

string_enum!(
    /// Structural warning raised by [`lint_story`].
    StoryLint, "lint" {
        MissingRole => "missing_role",
        MissingGoal => "missing_goal",
        MissingBenefit => "missing_benefit",
    }
);

/// Check a story for the canonical "As a ..., I want ... so that ..." clauses.
///
/// Never fails; an empty result means all three clauses were found.
pub fn lint_story(story: &UserStory) -> Vec<StoryLint> {
    lint_text(&story.text)
}

/// [`lint_story`] over raw text.
pub fn lint_text(text: &str) -> Vec<StoryLint> {
    let lower = text.to_lowercase();
    let mut warnings = Vec::new();
    if !has_phrase(&lower, "as a") {
        warnings.push(StoryLint::MissingRole);
    }
    if !has_phrase(&lower, "i want") && !has_phrase(&lower, "i need") {
        warnings.push(StoryLint::MissingGoal);
    }
    if !has_phrase(&lower, "so that") {
        warnings.push(StoryLint::MissingBenefit);
    }
    warnings
}

// Match must start on a word boundary; "as a" still matches "as an".
fn has_phrase(haystack: &str, phrase: &str) -> bool {
    haystack.match_indices(phrase).any(|(at, _)| {
        haystack[..at]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric())
    })
}

/// One worked example shown to the model before the target story.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub story: String,
    pub criteria: String,
}

/// Prompting strategy. Construct through [`PromptTechnique::new`] or the
/// helpers so the exemplar invariant holds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTechnique", into = "RawTechnique")]
pub struct PromptTechnique {
    name: TechniqueName,
    exemplars: Vec<Exemplar>,
}

#[derive(Serialize, Deserialize)]
struct RawTechnique {
    name: TechniqueName,
    #[serde(default)]
    exemplars: Vec<Exemplar>,
}

impl TryFrom<RawTechnique> for PromptTechnique {
    type Error = ModelError;

    fn try_from(raw: RawTechnique) -> Result<Self, Self::Error> {
        PromptTechnique::new(raw.name, raw.exemplars)
    }
}

impl From<PromptTechnique> for RawTechnique {
    fn from(t: PromptTechnique) -> Self {
        RawTechnique {
            name: t.name,
            exemplars: t.exemplars,
        }
    }
}

impl PromptTechnique {
    pub fn new(name: TechniqueName, exemplars: Vec<Exemplar>) -> Result<Self, ModelError> {
        match (name, exemplars.is_empty()) {
            (TechniqueName::ZeroShot, false) => Err(ModelError::UnexpectedExemplars),
            (TechniqueName::FewShot, true) => Err(ModelError::MissingExemplars),
            _ => Ok(Self { name, exemplars }),
        }
    }

    pub fn zero_shot() -> Self {
        Self {
            name: TechniqueName::ZeroShot,
            exemplars: Vec::new(),
        }
    }

    pub fn few_shot(exemplars: Vec<Exemplar>) -> Result<Self, ModelError> {
        Self::new(TechniqueName::FewShot, exemplars)
    }

    pub fn name(&self) -> TechniqueName {
        self.name
    }

    pub fn exemplars(&self) -> &[Exemplar] {
        &self.exemplars
    }
}

impl Default for PromptTechnique {
    fn default() -> Self {
        Self::zero_shot()
    }
}

pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;
pub const DEFAULT_TEMPERATURE: f64 = 0.2;
pub const DEFAULT_MAX_TOKENS: u32 = 512;

/// Sampling parameters and the per-provider deadline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_ms: u64,
}

impl GenerationParams {
    pub fn new(temperature: f64, max_tokens: u32, timeout_ms: u64) -> Result<Self, ModelError> {
        let params = Self {
            temperature,
            max_tokens,
            timeout_ms,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ModelError::TemperatureOutOfRange(self.temperature));
        }
        if self.max_tokens == 0 {
            return Err(ModelError::ZeroMaxTokens);
        }
        if self.timeout_ms == 0 {
            return Err(ModelError::ZeroTimeout);
        }
        Ok(())
    }
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            timeout_ms: DEFAULT_TIMEOUT_MS,
        }
    }
}

/// Registration entry for one model behind the gateway.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub model_name: String,
    pub kind: ProviderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential_env_var: Option<String>,
    #[serde(default)]
    pub display_name: String,
}

impl ProviderConfig {
    pub fn mock(model_name: impl Into<String>) -> Self {
        let model_name = model_name.into();
        Self {
            display_name: model_name.clone(),
            model_name,
            kind: ProviderKind::Mock,
            endpoint_url: None,
            credential_env_var: None,
        }
    }

    pub fn http_chat(
        model_name: impl Into<String>,
        endpoint_url: impl Into<String>,
        credential_env_var: impl Into<String>,
    ) -> Self {
        let model_name = model_name.into();
        Self {
            display_name: model_name.clone(),
            model_name,
            kind: ProviderKind::HttpChat,
            endpoint_url: Some(endpoint_url.into()),
            credential_env_var: Some(credential_env_var.into()),
        }
    }

    pub fn with_display_name(mut self, display_name: impl Into<String>) -> Self {
        self.display_name = display_name.into();
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let invalid = |reason: &str| ModelError::InvalidProvider {
            model_name: self.model_name.clone(),
            reason: reason.to_owned(),
        };
        if self.model_name.trim().is_empty() {
            return Err(invalid("model_name is empty"));
        }
        match self.kind {
            ProviderKind::Mock => {
                if self.endpoint_url.is_some() || self.credential_env_var.is_some() {
                    return Err(invalid("mock providers take no endpoint or credential"));
                }
            }
            ProviderKind::HttpChat => {
                let url = self
                    .endpoint_url
                    .as_deref()
                    .ok_or_else(|| invalid("http_chat requires endpoint_url"))?;
                match reqwest::Url::parse(url) {
                    Ok(u) if matches!(u.scheme(), "http" | "https") => {}
                    _ => return Err(invalid("endpoint_url must be an absolute http(s) URL")),
                }
                match self.credential_env_var.as_deref() {
                    Some(var) if !var.is_empty() => {}
                    _ => return Err(invalid("http_chat requires credential_env_var")),
                }
            }
        }
        Ok(())
    }
}

/// One provider's answer (or failure) for one rendered prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub output_id: OutputId,
    pub session_id: SessionId,
    pub model_name: String,
    pub prompt_hash: String,
    pub text: String,
    pub latency_ms: u64,
    pub status: OutputStatus,
    pub error_detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supersedes: Option<OutputId>,
}

impl ModelOutput {
    pub fn is_ok(&self) -> bool {
        self.status == OutputStatus::Ok
    }

    /// Status/text/error_detail consistency.
    pub fn check_shape(&self) -> Result<(), String> {
        match self.status {
            OutputStatus::Ok if self.text.is_empty() => Err("ok output with empty text".into()),
            OutputStatus::Ok if !self.error_detail.is_empty() => {
                Err("ok output with error_detail".into())
            }
            OutputStatus::Timeout | OutputStatus::ProviderError if !self.text.is_empty() => {
                Err(format!("{} output with text", self.status))
            }
            OutputStatus::Timeout | OutputStatus::ProviderError if self.error_detail.is_empty() => {
                Err(format!("{} output without error_detail", self.status))
            }
            _ => Ok(()),
        }
    }
}

/// A human decision bound to one output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub output_id: OutputId,
    pub action: FeedbackAction,
    pub final_text: String,
    pub edit_distance_norm: f64,
    pub timestamp: DateTime<Utc>,
}

/// Session metadata captured when the session opens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: SessionId,
    pub device_type: DeviceType,
    pub opened_at: DateTime<Utc>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_story_passes_through() {
        let text = "As a user, I want to reset my password so that I can regain access";
        let story = validate_story(text, vec![]).unwrap();
        assert_eq!(story.text, text);
        assert!(story.context.is_empty());
    }

    #[test]
    fn blank_story_rejected() {
        assert_eq!(validate_story("   ", vec![]), Err(ModelError::EmptyStory));
        assert_eq!(validate_story("\n\t", vec![]), Err(ModelError::EmptyStory));
    }

    #[test]
    fn duplicate_context_key_rejected() {
        let ctx = vec![
            ("domain".to_owned(), "auth".to_owned()),
            ("domain".to_owned(), "web".to_owned()),
        ];
        assert_eq!(
            validate_story("Fix login", ctx),
            Err(ModelError::DuplicateContextKey("domain".into()))
        );
    }

    #[test]
    fn empty_context_key_rejected() {
        let ctx = vec![(String::new(), "x".to_owned())];
        assert_eq!(
            validate_story("Fix login", ctx),
            Err(ModelError::EmptyContextKey)
        );
    }

    #[test]
    fn validate_story_is_idempotent() {
        let first = validate_story("As a dev", vec![("k".into(), "v".into())]).unwrap();
        let second = validate_story(first.text.clone(), first.context.clone()).unwrap();
        assert_eq!(first.text, second.text);
        assert_eq!(first.context, second.context);
        assert_ne!(first.story_id, second.story_id);
    }

    #[test]
    fn lint_examples() {
        assert!(lint_text("As a user, I want X so that Y").is_empty());
        assert_eq!(
            lint_text("Fix login bug"),
            vec![
                StoryLint::MissingRole,
                StoryLint::MissingGoal,
                StoryLint::MissingBenefit
            ]
        );
        assert_eq!(
            lint_text("As an admin, I want audit logs"),
            vec![StoryLint::MissingBenefit]
        );
        assert!(lint_text("AS A tester I NEED logs SO THAT bugs surface").is_empty());
    }

    #[test]
    fn lint_needs_word_boundary() {
        // "has a" must not count as the role clause.
        assert_eq!(
            lint_text("The page has a button, I want it so that it works"),
            vec![StoryLint::MissingRole]
        );
    }

    #[test]
    fn enums_round_trip_through_strings() {
        fn check<T>(all: &[T])
        where
            T: Copy + PartialEq + fmt::Debug + fmt::Display + FromStr,
            <T as FromStr>::Err: fmt::Debug,
        {
            for v in all {
                assert_eq!(v.to_string().parse::<T>().unwrap(), *v);
            }
        }
        check(TechniqueName::ALL);
        check(ProviderKind::ALL);
        check(OutputStatus::ALL);
        check(FeedbackAction::ALL);
        check(Disposition::ALL);
        check(DeviceType::ALL);
        check(EventType::ALL);
        check(StoryLint::ALL);
        assert!("approve".parse::<FeedbackAction>().is_err());
    }

    #[test]
    fn enums_serialize_as_strings() {
        assert_eq!(
            serde_json::to_string(&OutputStatus::ProviderError).unwrap(),
            "\"provider_error\""
        );
        let d: DeviceType = serde_json::from_str("\"tablet\"").unwrap();
        assert_eq!(d, DeviceType::Tablet);
    }

    #[test]
    fn technique_exemplar_invariant() {
        let ex = Exemplar {
            story: "s".into(),
            criteria: "c".into(),
        };
        assert_eq!(
            PromptTechnique::new(TechniqueName::ZeroShot, vec![ex.clone()]),
            Err(ModelError::UnexpectedExemplars)
        );
        assert_eq!(
            PromptTechnique::few_shot(vec![]),
            Err(ModelError::MissingExemplars)
        );
        assert!(PromptTechnique::few_shot(vec![ex]).is_ok());

        let bad: Result<PromptTechnique, _> = serde_json::from_str(r#"{"name":"few_shot"}"#);
        assert!(bad.is_err());
        let ok: PromptTechnique = serde_json::from_str(r#"{"name":"zero_shot"}"#).unwrap();
        assert_eq!(ok, PromptTechnique::zero_shot());
    }

    #[test]
    fn params_bounds() {
        assert!(GenerationParams::new(0.0, 1, 1).is_ok());
        assert!(GenerationParams::new(2.0, 1, 1).is_ok());
        assert!(GenerationParams::new(2.01, 1, 1).is_err());
        assert!(GenerationParams::new(-0.1, 1, 1).is_err());
        assert!(GenerationParams::new(f64::NAN, 1, 1).is_err());
        assert_eq!(
            GenerationParams::new(1.0, 0, 1),
            Err(ModelError::ZeroMaxTokens)
        );
        assert_eq!(
            GenerationParams::new(1.0, 1, 0),
            Err(ModelError::ZeroTimeout)
        );
        assert_eq!(GenerationParams::default().timeout_ms, 30_000);
    }

    #[test]
    fn provider_config_shapes() {
        assert!(ProviderConfig::mock("mock-a").validate().is_ok());
        assert!(
            ProviderConfig::http_chat("g", "https://api.example.com/v1/chat", "G_KEY")
                .validate()
                .is_ok()
        );
        assert!(ProviderConfig::http_chat("g", "not a url", "G_KEY")
            .validate()
            .is_err());
        assert!(ProviderConfig::http_chat("g", "http://x", "")
            .validate()
            .is_err());
        let mut mock = ProviderConfig::mock("m");
        mock.endpoint_url = Some("http://x".into());
        assert!(mock.validate().is_err());
        assert!(ProviderConfig::mock(" ").validate().is_err());
    }

    #[test]
    fn ids_render_lowercase_hyphenated() {
        let id = OutputId::random();
        let s = id.to_string();
        assert_eq!(s.len(), 36);
        assert_eq!(s, s.to_lowercase());
        assert_eq!(s.parse::<OutputId>().unwrap(), id);
    }

    #[test]
    fn output_shape_rules() {
        let mut out = ModelOutput {
            output_id: OutputId::random(),
            session_id: SessionId::random(),
            model_name: "m".into(),
            prompt_hash: "h".into(),
            text: "1. x".into(),
            latency_ms: 3,
            status: OutputStatus::Ok,
            error_detail: String::new(),
            supersedes: None,
        };
        assert!(out.check_shape().is_ok());
        out.status = OutputStatus::Timeout;
        assert!(out.check_shape().is_err());
        out.text.clear();
        out.error_detail = "deadline".into();
        assert!(out.check_shape().is_ok());
    }
}

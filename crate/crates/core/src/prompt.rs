//! Deterministic prompt rendering and hashing.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{GenerationParams, PromptTechnique, UserStory};

pub const INSTRUCTION_HEADER: &str = "Generate acceptance criteria for the following user story.";

/// The exact text sent to every provider, with its digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub prompt_hash: String,
    pub technique_name: String,
}

impl RenderedPrompt {
    /// Wrap already-rendered text, computing its hash.
    pub fn from_text(text: impl Into<String>, technique_name: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            prompt_hash: hash_prompt(&text),
            text,
            technique_name: technique_name.into(),
        }
    }
}

/// Render the canonical template. Lines are joined with `\n`:
///
/// ```text
/// Generate acceptance criteria for the following user story.
/// Story: <exemplar story>        (few_shot only, repeated per exemplar)
/// Criteria: <exemplar criteria>
/// Story: <story text>
/// Context <key>: <value>         (one per metadata pair, input order)
/// Criteria:
/// ```
///
/// Sampling parameters travel in the request body, not the prompt text.
pub fn render_prompt(
    story: &UserStory,
    technique: &PromptTechnique,
    _params: &GenerationParams,
) -> RenderedPrompt {
    let mut lines: Vec<String> = Vec::with_capacity(3 + 2 * technique.exemplars().len());
    lines.push(INSTRUCTION_HEADER.to_owned());
    for ex in technique.exemplars() {
        lines.push(format!("Story: {}", ex.story));
        lines.push(format!("Criteria: {}", ex.criteria));
    }
    lines.push(format!("Story: {}", story.text));
    for (key, value) in &story.context {
        lines.push(format!("Context {key}: {value}"));
    }
    lines.push("Criteria:".to_owned());
    RenderedPrompt::from_text(lines.join("\n"), technique.name().as_str())
}

/// SHA-256 of the UTF-8 bytes, as 64 lowercase hex characters.
pub fn hash_prompt(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

//! Versioned prompt templates for the caption parser.

use super::BackendError;

pub const DEFAULT_PROMPT_ID: &str = "parse-v1";

const PLACEHOLDER: &str = "{caption}";

const TEMPLATES: &[(&str, &str)] = &[("parse-v1", include_str!("../../assets/prompts/parse-v1.txt"))];

pub fn prompt_ids() -> impl Iterator<Item = &'static str> {
    TEMPLATES.iter().map(|(id, _)| *id)
}

pub fn template(prompt_id: &str) -> Option<&'static str> {
    TEMPLATES.iter().find(|(id, _)| *id == prompt_id).map(|(_, t)| *t)
}

/// Substitutes the caption into the template addressed by `prompt_id`.
pub fn render(prompt_id: &str, caption: &str) -> Result<String, BackendError> {
    let t = template(prompt_id)
        .ok_or_else(|| BackendError::Precondition(format!("unknown prompt id {prompt_id:?}")))?;
    Ok(t.replace(PLACEHOLDER, caption.trim()))
}

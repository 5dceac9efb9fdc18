//! In-context prompts: the prediction prompt, the rationale question, the
//! feedback revision turn and the format-repair turn.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::registry::TaskSpec;
use crate::sel::ParseIssue;

const TEMPLATES: &str = include_str!("../data/prompts.toml");

pub const DEFAULT_LANGUAGE: &str = "English";
pub const DEFAULT_DOMAIN: &str = "general";
pub const DEFAULT_MAX_INPUT_CHARS: usize = 8000;
/// Issue messages quoted in one repair turn.
pub const MAX_REPAIR_ISSUES: usize = 3;

#[derive(Debug, Deserialize)]
struct Templates {
    prediction: Vec<String>,
    demonstration: String,
    label_separator: String,
    rationale: String,
    feedback: String,
    repair: String,
    repair_issue: String,
}

fn templates() -> &'static Templates {
    static T: OnceLock<Templates> = OnceLock::new();
    T.get_or_init(|| toml::from_str(TEMPLATES).expect("bundled prompt templates parse"))
}

/// Substitutes `{Name}` placeholders in one pass. Values are inserted
/// verbatim and never re-scanned; unknown braces are left alone.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let name = &after[..close];
            values
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: ChatRole::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: ChatRole::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: ChatRole::Assistant,
            content: content.into(),
        }
    }
}

/// An ordered chat conversation ready to send to a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub turns: Vec<ChatMessage>,
    pub task_id: String,
    pub language: String,
    pub domain: String,
}

impl PromptBundle {
    /// All turn texts joined by blank lines, as matched by scripted backends.
    pub fn rendered(&self) -> String {
        self.turns
            .iter()
            .map(|t| t.content.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    pub fn last_user_text(&self) -> Option<&str> {
        self.turns
            .iter()
            .rev()
            .find(|t| t.role == ChatRole::User)
            .map(|t| t.content.as_str())
    }

    fn has_answer(&self) -> bool {
        self.turns.iter().any(|t| t.role == ChatRole::Assistant)
    }

    fn with_user_turn(&self, text: String) -> PromptBundle {
        let mut next = self.clone();
        next.turns.push(ChatMessage::user(text));
        next
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRequest {
    pub task_id: String,
    pub input_text: String,
    #[serde(default)]
    pub language: Option<String>,
    #[serde(default)]
    pub domain: Option<String>,
}

impl UserRequest {
    pub fn new(task_id: impl Into<String>, input_text: impl Into<String>) -> Self {
        UserRequest {
            task_id: task_id.into(),
            input_text: input_text.into(),
            language: None,
            domain: None,
        }
    }

    pub fn language(&self) -> &str {
        non_blank(self.language.as_deref()).unwrap_or(DEFAULT_LANGUAGE)
    }

    pub fn domain(&self) -> &str {
        non_blank(self.domain.as_deref()).unwrap_or(DEFAULT_DOMAIN)
    }

    pub fn validate(&self, max_chars: usize) -> Result<(), PromptError> {
        if self.input_text.trim().is_empty() {
            return Err(PromptError::EmptyInput);
        }
        let len = self.input_text.chars().count();
        if len > max_chars {
            return Err(PromptError::InputTooLong { len, max: max_chars });
        }
        Ok(())
    }
}

fn non_blank(s: Option<&str>) -> Option<&str> {
    s.map(str::trim).filter(|s| !s.is_empty())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptOptions {
    /// Send the closing instruction as a system turn instead of the last
    /// segment of the user turn, for endpoints that need a system message.
    pub final_instruction_as_system: bool,
    pub max_input_chars: usize,
}

impl Default for PromptOptions {
    fn default() -> Self {
        PromptOptions {
            final_instruction_as_system: false,
            max_input_chars: DEFAULT_MAX_INPUT_CHARS,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("request is for task `{request}` but the spec is `{spec}`")]
    TaskMismatch { request: String, spec: String },
    #[error("input text is empty")]
    EmptyInput,
    #[error("input text has {len} characters, the maximum is {max}")]
    InputTooLong { len: usize, max: usize },
    #[error("no completed prediction in the conversation")]
    NoPrediction,
    #[error("feedback is empty")]
    EmptyFeedback,
}

/// Renders the one-shot prediction prompt for `req`.
pub fn build_prediction_prompt(
    spec: &TaskSpec,
    req: &UserRequest,
    opts: &PromptOptions,
) -> Result<PromptBundle, PromptError> {
    if req.task_id != spec.id {
        return Err(PromptError::TaskMismatch {
            request: req.task_id.clone(),
            spec: spec.id.clone(),
        });
    }
    req.validate(opts.max_input_chars)?;
    let t = templates();
    let demo = fill(
        &t.demonstration,
        &[
            ("Demo-input", &spec.demonstration.input),
            ("Demo-output", &spec.demonstration.output),
        ],
    );
    let labels = spec.label_set.join(&t.label_separator);
    let values = [
        ("Task-desc", spec.description.as_str()),
        ("Task-demo", demo.as_str()),
        ("Exe-format", spec.executing_format.as_str()),
        ("Task-label", labels.as_str()),
        ("Input-text", req.input_text.as_str()),
        ("Task-name", spec.name.as_str()),
        ("Language", req.language()),
        ("Domain", req.domain()),
    ];
    let mut segments: Vec<String> = t
        .prediction
        .iter()
        .filter(|seg| !(spec.label_set.is_empty() && seg.contains("{Task-label}")))
        .map(|seg| fill(seg, &values))
        .collect();

    let mut turns = Vec::with_capacity(2);
    if opts.final_instruction_as_system {
        let last = segments.pop().expect("template has segments");
        turns.push(ChatMessage::system(last));
    }
    turns.push(ChatMessage::user(segments.join("\n\n")));
    Ok(PromptBundle {
        turns,
        task_id: spec.id.clone(),
        language: req.language().to_string(),
        domain: req.domain().to_string(),
    })
}

/// Appends the rationale question to a conversation that holds at least
/// one answered prediction.
pub fn build_rationale_prompt(history: &PromptBundle) -> Result<PromptBundle, PromptError> {
    if !history.has_answer() {
        return Err(PromptError::NoPrediction);
    }
    Ok(history.with_user_turn(templates().rationale.clone()))
}

/// Appends a feedback revision turn.
pub fn build_feedback_prompt(
    history: &PromptBundle,
    feedback: &str,
) -> Result<PromptBundle, PromptError> {
    // a trailing period would double up with the one in the template
    let feedback = feedback.trim().trim_end_matches('.').trim_end();
    if feedback.is_empty() {
        return Err(PromptError::EmptyFeedback);
    }
    if !history.has_answer() {
        return Err(PromptError::NoPrediction);
    }
    let text = fill(&templates().feedback, &[("Feedback", feedback)]);
    Ok(history.with_user_turn(text))
}

/// Appends a repair turn quoting the first few parse issues and restating
/// the task's executing format.
pub fn build_repair_prompt(
    history: &PromptBundle,
    spec: &TaskSpec,
    issues: &[ParseIssue],
) -> PromptBundle {
    let t = templates();
    let quoted: Vec<String> = issues
        .iter()
        .take(MAX_REPAIR_ISSUES)
        .map(|i| fill(&t.repair_issue, &[("Issue", &i.to_string())]))
        .collect();
    let text = fill(
        &t.repair,
        &[
            ("Issues", &quoted.join("\n")),
            ("Exe-format", &spec.executing_format),
        ],
    );
    history.with_user_turn(text)
}

/// The verbatim rationale question.
pub fn rationale_question() -> &'static str {
    &templates().rationale
}

//! One prediction round: ask, parse, repair if content was lost, align.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::align::align;
use crate::export::{build_doc, AnnotationDoc};
use crate::gateway::{Gateway, GatewayError};
use crate::prompt::{build_repair_prompt, ChatMessage, PromptBundle, PromptOptions};
use crate::registry::TaskSpec;
use crate::sel::{parse, StructuredOutput, Tier};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TurnKind {
    Predict,
    Rationale,
    Feedback,
    Repair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionStatus {
    Ok,
    ParseDegraded,
    Failed,
}

impl SessionStatus {
    pub fn of(out: &StructuredOutput) -> Self {
        if out.entries.is_empty() {
            SessionStatus::Failed
        } else if out.is_clean() {
            SessionStatus::Ok
        } else {
            SessionStatus::ParseDegraded
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SessionStatus::Ok => "ok",
            SessionStatus::ParseDegraded => "parse-degraded",
            SessionStatus::Failed => "failed",
        }
    }
}

/// One exchange with the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub kind: TurnKind,
    /// The conversation as sent.
    pub bundle: PromptBundle,
    /// The model's reply; absent when the call failed.
    pub raw: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Parse of `raw` at the task tier (prediction turns only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structure: Option<StructuredOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc: Option<AnnotationDoc>,
    pub timestamp: DateTime<Utc>,
}

impl Turn {
    pub fn new(kind: TurnKind, bundle: PromptBundle) -> Self {
        Turn {
            kind,
            bundle,
            raw: None,
            error: None,
            structure: None,
            doc: None,
            timestamp: Utc::now(),
        }
    }

    /// The sent conversation followed by the reply.
    pub fn conversation(&self) -> Option<PromptBundle> {
        let raw = self.raw.as_ref()?;
        let mut b = self.bundle.clone();
        b.turns.push(ChatMessage::assistant(raw.clone()));
        Some(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineConfig {
    pub max_repairs: usize,
    /// Messages kept when resending history; the first prediction exchange
    /// always survives.
    pub history_cap: usize,
    pub prompt: PromptOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            max_repairs: 1,
            history_cap: 12,
            prompt: PromptOptions::default(),
        }
    }
}

/// Parse, align and build the document for one reply.
pub fn derive(raw: &str, tier: Tier, text: &str) -> (StructuredOutput, AnnotationDoc) {
    let out = parse(raw, tier);
    let anchored = align(&out, text);
    let doc = build_doc(&out, &anchored, text).expect("alignment covers every span");
    (out, doc)
}

/// Turns produced by one prediction round.
#[derive(Debug, Clone)]
pub struct Round {
    pub turns: Vec<Turn>,
    /// Index into `turns` of the attempt with the most entries; later
    /// attempts win ties.
    pub best: Option<usize>,
    /// Set when the opening call failed.
    pub error: Option<GatewayError>,
}

impl Round {
    pub fn best_turn(&self) -> Option<&Turn> {
        self.best.map(|i| &self.turns[i])
    }

    pub fn status(&self) -> SessionStatus {
        match self.best_turn().and_then(|t| t.structure.as_ref()) {
            Some(s) => SessionStatus::of(s),
            None => SessionStatus::Failed,
        }
    }
}

/// Keeps at most `cap` messages, always retaining everything up to and
/// including the first assistant reply.
pub fn truncate_history(bundle: &PromptBundle, cap: usize) -> PromptBundle {
    let n = bundle.turns.len();
    if n <= cap {
        return bundle.clone();
    }
    let head = bundle
        .turns
        .iter()
        .position(|t| t.role == crate::prompt::ChatRole::Assistant)
        .map_or(n, |i| i + 1);
    let tail = cap.saturating_sub(head);
    let mut out = bundle.clone();
    out.turns = bundle.turns[..head]
        .iter()
        .chain(&bundle.turns[n - tail.min(n - head)..])
        .cloned()
        .collect();
    out
}

/// Sends `bundle` and repairs while the best attempt has lost content.
pub async fn run_round(
    gateway: &Gateway,
    spec: &TaskSpec,
    text: &str,
    kind: TurnKind,
    bundle: PromptBundle,
    cfg: &PipelineConfig,
) -> Round {
    let mut round = Round {
        turns: Vec::new(),
        best: None,
        error: None,
    };
    let mut next = Some((kind, bundle));
    let mut repairs = 0;
    while let Some((kind, bundle)) = next.take() {
        let mut turn = Turn::new(kind, bundle);
        match gateway.complete(&turn.bundle).await {
            Ok(raw) => {
                let (out, doc) = derive(&raw, spec.tier, text);
                debug!(entries = out.entries.len(), issues = out.issues.len(), "parsed reply");
                turn.raw = Some(raw);
                turn.structure = Some(out);
                turn.doc = Some(doc);
            }
            Err(e) => {
                turn.error = Some(e.to_string());
                if round.turns.is_empty() {
                    round.error = Some(e);
                }
                round.turns.push(turn);
                break;
            }
        }
        round.turns.push(turn);
        let i = round.turns.len() - 1;
        let entries = |t: &Turn| t.structure.as_ref().map_or(0, |s| s.entries.len());
        if round.best.is_none_or(|b| entries(&round.turns[i]) >= entries(&round.turns[b])) {
            round.best = Some(i);
        }
        let best = round.turns[round.best.expect("set above")].structure.as_ref();
        if best.is_some_and(StructuredOutput::lost_content) && repairs < cfg.max_repairs {
            repairs += 1;
            let last = &round.turns[i];
            let history = truncate_history(&last.conversation().expect("answered"), cfg.history_cap);
            let issues = &last.structure.as_ref().expect("parsed").issues;
            let issues = if issues.is_empty() {
                &best.expect("checked").issues
            } else {
                issues
            };
            next = Some((TurnKind::Repair, build_repair_prompt(&history, spec, issues)));
        }
    }
    round
}

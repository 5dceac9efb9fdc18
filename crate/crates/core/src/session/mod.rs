//! Multi-turn prediction sessions: predict, rationale and feedback
//! revision over stored state.

mod pipeline;
mod store;

use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::export::{to_render_json, AnnotationDoc, RenderDoc};
use crate::gateway::{Gateway, GatewayError};
use crate::prompt::{
    build_feedback_prompt, build_prediction_prompt, build_rationale_prompt, PromptBundle,
    PromptError, UserRequest,
};
use crate::registry::{TaskRegistry, TaskSpec};
use crate::sel::{ParseIssue, StructuredOutput, Tier};

pub use pipeline::{
    derive, run_round, truncate_history, PipelineConfig, Round, SessionStatus, Turn, TurnKind,
};
pub use store::{SessionHandle, SessionStore, DEFAULT_TTL};

pub const SESSION_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub task_id: String,
    pub tier: Tier,
    pub input_text: String,
    pub language: String,
    pub domain: String,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub turns: Vec<Turn>,
    /// Index of the turn that produced `current`.
    pub current_turn: Option<usize>,
    pub current: Option<AnnotationDoc>,
    pub current_structure: Option<StructuredOutput>,
    pub rationale: Option<String>,
    pub status: SessionStatus,
    /// Backend error from the latest prediction round, if it failed.
    pub error: Option<String>,
}

impl Session {
    /// The conversation so far, ending with the newest answered turn.
    pub fn history(&self) -> Option<PromptBundle> {
        self.turns.iter().rev().find_map(Turn::conversation)
    }

    pub fn has_prediction(&self) -> bool {
        self.turns.iter().any(|t| {
            matches!(t.kind, TurnKind::Predict | TurnKind::Feedback | TurnKind::Repair)
                && t.raw.is_some()
        })
    }

    pub fn issues(&self) -> &[ParseIssue] {
        self.current_structure
            .as_ref()
            .map_or(&[], |s| s.issues.as_slice())
    }

    /// Docs of every answered prediction turn, oldest first.
    pub fn doc_history(&self) -> impl Iterator<Item = (usize, &AnnotationDoc)> {
        self.turns
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.doc.as_ref().map(|d| (i, d)))
    }

    /// Re-derives the current document from the raw reply that produced it.
    pub fn replay(&self) -> Option<AnnotationDoc> {
        let turn = &self.turns[self.current_turn?];
        Some(derive(turn.raw.as_ref()?, self.tier, &self.input_text).1)
    }

    fn apply_round(&mut self, round: Round) {
        let base = self.turns.len();
        let status = round.status();
        let best = round.best;
        self.error = round.error.as_ref().map(ToString::to_string);
        self.turns.extend(round.turns);
        match best.map(|b| base + b) {
            Some(i) if status != SessionStatus::Failed => {
                self.current_turn = Some(i);
                self.current = self.turns[i].doc.clone();
                self.current_structure = self.turns[i].structure.clone();
            }
            _ => {
                self.current_turn = None;
                self.current = None;
                self.current_structure = best
                    .and_then(|b| self.turns[base + b].structure.clone());
            }
        }
        self.status = status;
        self.touch();
    }

    fn touch(&mut self) {
        self.updated_at = Utc::now();
    }
}

/// The session as served over the API and written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionResource {
    pub schema: u32,
    #[serde(flatten)]
    pub session: Session,
    pub issues: Vec<ParseIssue>,
    pub render: Option<RenderDoc>,
}

impl From<&Session> for SessionResource {
    fn from(s: &Session) -> Self {
        SessionResource {
            schema: SESSION_SCHEMA_VERSION,
            session: s.clone(),
            issues: s.issues().to_vec(),
            render: s.current.as_ref().map(to_render_json),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("task `{0}` not found")]
    TaskNotFound(String),
    #[error("session `{0}` not found")]
    SessionNotFound(String),
    #[error(transparent)]
    Request(#[from] PromptError),
    #[error("backend unavailable for session {session_id}: {error}")]
    Backend {
        session_id: String,
        error: GatewayError,
    },
    #[error("session store: {0}")]
    Store(String),
}

#[derive(Debug, Clone)]
pub struct Orchestrator {
    registry: TaskRegistry,
    gateway: Gateway,
    store: Arc<SessionStore>,
    cfg: PipelineConfig,
}

impl Orchestrator {
    pub fn new(registry: TaskRegistry, gateway: Gateway, store: SessionStore, cfg: PipelineConfig) -> Self {
        Orchestrator {
            registry,
            gateway,
            store: Arc::new(store),
            cfg,
        }
    }

    pub fn registry(&self) -> &TaskRegistry {
        &self.registry
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn store(&self) -> &SessionStore {
        &self.store
    }

    fn task(&self, id: &str) -> Result<TaskSpec, SessionError> {
        self.registry
            .get(id)
            .ok_or_else(|| SessionError::TaskNotFound(id.into()))
    }

    /// Creates a session and runs its first prediction. A backend failure
    /// still stores the session, with status failed.
    pub async fn start_session(&self, req: UserRequest) -> Result<Session, SessionError> {
        let spec = self.task(&req.task_id)?;
        let bundle = build_prediction_prompt(&spec, &req, &self.cfg.prompt)?;
        let now = Utc::now();
        let mut session = Session {
            id: uuid::Uuid::new_v4().to_string(),
            task_id: spec.id.clone(),
            tier: spec.tier,
            input_text: req.input_text.clone(),
            language: req.language().to_string(),
            domain: req.domain().to_string(),
            created_at: now,
            updated_at: now,
            turns: Vec::new(),
            current_turn: None,
            current: None,
            current_structure: None,
            rationale: None,
            status: SessionStatus::Failed,
            error: None,
        };
        let round = run_round(
            &self.gateway,
            &spec,
            &session.input_text,
            TurnKind::Predict,
            bundle,
            &self.cfg,
        )
        .await;
        let failure = round.error.clone();
        session.apply_round(round);
        info!(session = %session.id, task = %spec.id, status = session.status.as_str(), "session started");
        self.store.insert(session.clone()).await?;
        match failure {
            Some(error) => Err(SessionError::Backend {
                session_id: session.id,
                error,
            }),
            None => Ok(session),
        }
    }

    pub async fn get_session(&self, id: &str) -> Result<Session, SessionError> {
        self.store.get(id).await
    }

    /// Asks the model to explain its latest prediction. On backend failure
    /// the session is left as it was.
    pub async fn request_rationale(&self, id: &str) -> Result<Session, SessionError> {
        let handle = self.store.handle(id).await?;
        let mut session = handle.lock().await;
        if !session.has_prediction() {
            return Err(PromptError::NoPrediction.into());
        }
        let history = session.history().ok_or(PromptError::NoPrediction)?;
        let history = truncate_history(&history, self.cfg.history_cap);
        let mut turn = Turn::new(TurnKind::Rationale, build_rationale_prompt(&history)?);
        match self.gateway.complete(&turn.bundle).await {
            Ok(raw) => {
                session.rationale = Some(raw.clone());
                turn.raw = Some(raw);
                session.turns.push(turn);
                session.touch();
                self.store.persist(&session)?;
                Ok(session.clone())
            }
            Err(error) => Err(SessionError::Backend {
                session_id: session.id.clone(),
                error,
            }),
        }
    }

    /// Re-predicts with the user's criticism appended to the conversation.
    pub async fn apply_feedback(&self, id: &str, feedback: &str) -> Result<Session, SessionError> {
        let handle = self.store.handle(id).await?;
        let mut session = handle.lock().await;
        if feedback.trim().trim_end_matches('.').trim().is_empty() {
            return Err(PromptError::EmptyFeedback.into());
        }
        if !session.has_prediction() {
            return Err(PromptError::NoPrediction.into());
        }
        let spec = self.task(&session.task_id)?;
        let history = session.history().ok_or(PromptError::NoPrediction)?;
        let history = truncate_history(&history, self.cfg.history_cap);
        let bundle = build_feedback_prompt(&history, feedback)?;
        let round = run_round(
            &self.gateway,
            &spec,
            &session.input_text,
            TurnKind::Feedback,
            bundle,
            &self.cfg,
        )
        .await;
        let failure = round.error.clone();
        session.apply_round(round);
        self.store.persist(&session)?;
        match failure {
            Some(error) => Err(SessionError::Backend {
                session_id: session.id.clone(),
                error,
            }),
            None => Ok(session.clone()),
        }
    }
}

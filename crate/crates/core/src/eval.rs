//! Strict-match accuracy over a set of instances, run through the full
//! prediction pipeline.
//!
//! Data files are JSON Lines, one instance per line:
//!
//! ```text
//! {"text": "John lives in Paris.", "gold": "(PER: \"John\") ; (LOC: \"Paris\")"}
//! ```
//!
//! An instance is correct when the canonicalized prediction equals the
//! canonicalized gold structure.

use std::fmt::Write as _;
use std::path::Path;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, MockRule, MockScript};
use crate::prompt::{build_prediction_prompt, UserRequest};
use crate::registry::TaskSpec;
use crate::session::{run_round, PipelineConfig, SessionStatus, TurnKind};
use crate::sel::{canonicalize, parse, render_entry, StructuredOutput, Tier};

pub const METRIC: &str = "exact-structure-match";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalInstance {
    pub text: String,
    pub gold: String,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("line {line}: {message}")]
    BadRecord { line: usize, message: String },
    #[error("no instances")]
    Empty,
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

/// Reads JSONL instances and checks each gold parses cleanly at `tier`.
pub fn parse_instances(src: &str, tier: Tier) -> Result<Vec<EvalInstance>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in src.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let inst: EvalInstance = serde_json::from_str(line).map_err(|e| EvalError::BadRecord {
            line: line_no,
            message: e.to_string(),
        })?;
        if inst.text.trim().is_empty() {
            return Err(EvalError::BadRecord {
                line: line_no,
                message: "empty text".into(),
            });
        }
        let gold = parse(&inst.gold, tier);
        if let Some(issue) = gold.issues.first() {
            return Err(EvalError::BadRecord {
                line: line_no,
                message: format!("gold does not parse at {tier} tier: {issue}"),
            });
        }
        out.push(inst);
    }
    if out.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(out)
}

pub fn load_instances(path: &Path, tier: Tier) -> Result<Vec<EvalInstance>, EvalError> {
    let src = std::fs::read_to_string(path).map_err(|e| EvalError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_instances(&src, tier)
}

/// A mock script answering every instance with its own gold output.
pub fn echo_gold_script(instances: &[EvalInstance]) -> MockScript {
    let rules = instances
        .iter()
        .map(|inst| MockRule {
            // the input slot of the prediction prompt
            pattern: format!("``{}''", inst.text),
            response: inst.gold.clone(),
        })
        .collect();
    MockScript::new(rules, "no scripted answer")
}

fn canonical_text(out: &StructuredOutput) -> String {
    canonicalize(out)
        .entries
        .iter()
        .map(render_entry)
        .collect::<Vec<_>>()
        .join(" ; ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub task_id: String,
    pub index: usize,
    pub text: String,
    pub gold: String,
    /// Canonical prediction; absent when the backend failed.
    pub predicted: Option<String>,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<SessionStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
}

impl Score {
    fn of<'a>(verdicts: impl Iterator<Item = &'a Verdict>) -> Self {
        let (mut n, mut correct) = (0, 0);
        for v in verdicts {
            n += 1;
            correct += usize::from(v.correct);
        }
        let accuracy = if n == 0 { 0.0 } else { correct as f64 / n as f64 };
        Score { n, correct, accuracy }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub task_id: String,
    #[serde(flatten)]
    pub score: Score,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub tasks: Vec<TaskScore>,
    /// Micro-average over every instance.
    pub overall: Score,
    pub instances: Vec<Verdict>,
}

impl EvalReport {
    pub fn from_verdicts(instances: Vec<Verdict>) -> Self {
        let mut ids: Vec<&str> = Vec::new();
        for v in &instances {
            if !ids.contains(&v.task_id.as_str()) {
                ids.push(&v.task_id);
            }
        }
        let tasks = ids
            .iter()
            .map(|id| TaskScore {
                task_id: id.to_string(),
                score: Score::of(instances.iter().filter(|v| v.task_id == *id)),
            })
            .collect();
        EvalReport {
            metric: METRIC.into(),
            tasks,
            overall: Score::of(instances.iter()),
            instances,
        }
    }

    pub fn task(&self, id: &str) -> Option<&Score> {
        self.tasks.iter().find(|t| t.task_id == id).map(|t| &t.score)
    }

    pub fn to_table(&self) -> String {
        let width = self
            .tasks
            .iter()
            .map(|t| t.task_id.len())
            .chain(["overall".len(), "task".len()])
            .max()
            .unwrap_or(4);
        let mut s = format!(
            "accuracy = {METRIC}: an instance is correct iff its canonical predicted structure equals the canonical gold structure\n\n"
        );
        let _ = writeln!(s, "{:<width$}  {:>5}  {:>7}  {:>8}", "task", "n", "correct", "accuracy");
        let row = |s: &mut String, name: &str, sc: &Score| {
            let _ = writeln!(
                s,
                "{:<width$}  {:>5}  {:>7}  {:>8.3}",
                name, sc.n, sc.correct, sc.accuracy
            );
        };
        for t in &self.tasks {
            row(&mut s, &t.task_id, &t.score);
        }
        row(&mut s, "overall", &self.overall);
        s
    }
}

async fn judge(
    gateway: &Gateway,
    spec: &TaskSpec,
    index: usize,
    inst: &EvalInstance,
    cfg: &PipelineConfig,
) -> Verdict {
    let gold = canonical_text(&parse(&inst.gold, spec.tier));
    let mut verdict = Verdict {
        task_id: spec.id.clone(),
        index,
        text: inst.text.clone(),
        gold,
        predicted: None,
        correct: false,
        status: None,
        note: None,
    };
    let req = UserRequest::new(spec.id.clone(), inst.text.clone());
    let bundle = match build_prediction_prompt(spec, &req, &cfg.prompt) {
        Ok(b) => b,
        Err(e) => {
            verdict.note = Some(e.to_string());
            return verdict;
        }
    };
    let round = run_round(gateway, spec, &inst.text, TurnKind::Predict, bundle, cfg).await;
    if let Some(e) = &round.error {
        verdict.note = Some(e.to_string());
        return verdict;
    }
    verdict.status = Some(round.status());
    let predicted = round
        .best_turn()
        .and_then(|t| t.structure.as_ref())
        .map(canonical_text)
        .unwrap_or_default();
    verdict.correct = predicted == verdict.gold;
    verdict.predicted = Some(predicted);
    verdict
}

/// Scores one task. Instances run concurrently up to `concurrency`; the
/// verdicts keep instance order.
pub async fn evaluate(
    gateway: &Gateway,
    spec: &TaskSpec,
    instances: &[EvalInstance],
    cfg: &PipelineConfig,
    concurrency: usize,
) -> Vec<Verdict> {
    stream::iter(instances.iter().enumerate())
        .map(|(i, inst)| judge(gateway, spec, i, inst, cfg))
        .buffered(concurrency.max(1))
        .collect()
        .await
}

//! Scripted backend for tests and offline demos.
//!
//! Script format (UTF-8, line records):
//!
//! ```text
//! # comment
//! MATCH<TAB>substring to find
//! RESPONSE<<<
//! response text, any number of lines
//! >>>
//! FALLBACK<<<
//! reply when nothing matches
//! >>>
//! ```
//!
//! Rules are tried in order against the newest user turn, then against the
//! whole rendered conversation. The first hit wins in each pass.

use std::fmt;
use std::path::Path;

use async_trait::async_trait;

use super::{ChatBackend, GatewayError};
use crate::prompt::PromptBundle;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockRule {
    pub pattern: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockScript {
    pub rules: Vec<MockRule>,
    pub fallback: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MockScriptError {
    #[error("mock script line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("mock script is empty")]
    Empty,
    #[error("mock script has no FALLBACK record")]
    MissingFallback,
    #[error("cannot read mock script {path}: {message}")]
    Io { path: String, message: String },
}

const BUNDLED: &str = include_str!("../../data/mock_script.txt");

fn malformed(line: usize, message: impl Into<String>) -> MockScriptError {
    MockScriptError::Malformed {
        line,
        message: message.into(),
    }
}

/// Reads heredoc lines up to the `>>>` terminator. `start` is the 1-based
/// line number of the opening record.
fn heredoc<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    start: usize,
) -> Result<String, MockScriptError> {
    let mut body = Vec::new();
    for (_, line) in lines.by_ref() {
        if line == ">>>" {
            return Ok(body.join("\n"));
        }
        body.push(line);
    }
    Err(malformed(start, "heredoc not terminated by >>>"))
}

impl MockScript {
    pub fn new(rules: Vec<MockRule>, fallback: impl Into<String>) -> Self {
        MockScript {
            rules,
            fallback: fallback.into(),
        }
    }

    pub fn parse(src: &str) -> Result<Self, MockScriptError> {
        if src.trim().is_empty() {
            return Err(MockScriptError::Empty);
        }
        let mut lines = src
            .lines()
            .map(|l| l.strip_suffix('\r').unwrap_or(l))
            .enumerate()
            .map(|(i, l)| (i + 1, l));
        let mut rules = Vec::new();
        let mut fallback = None;
        while let Some((n, line)) = lines.next() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            if fallback.is_some() {
                return Err(malformed(n, "records after FALLBACK"));
            }
            if let Some(pattern) = line.strip_prefix("MATCH\t") {
                if pattern.is_empty() {
                    return Err(malformed(n, "empty MATCH substring"));
                }
                let resp = loop {
                    match lines.next() {
                        Some((_, l)) if l.trim().is_empty() => continue,
                        Some((m, l)) => break (m, l),
                        None => return Err(malformed(n, "MATCH without RESPONSE")),
                    }
                };
                if resp.1 != "RESPONSE<<<" {
                    return Err(malformed(resp.0, "expected RESPONSE<<<"));
                }
                let response = heredoc(&mut lines, resp.0)?;
                rules.push(MockRule {
                    pattern: pattern.to_string(),
                    response,
                });
            } else if line == "FALLBACK<<<" {
                fallback = Some(heredoc(&mut lines, n)?);
            } else {
                return Err(malformed(n, format!("unrecognised record `{}`", truncate(line))));
            }
        }
        let fallback = fallback.ok_or(MockScriptError::MissingFallback)?;
        Ok(MockScript { rules, fallback })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MockScriptError> {
        let path = path.as_ref();
        let src = std::fs::read_to_string(path).map_err(|e| MockScriptError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&src)
    }

    /// The script shipped with the crate; scripted answers for every
    /// showcase task.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED).expect("bundled mock script is valid")
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn respond(&self, bundle: &PromptBundle) -> &str {
        let last = bundle.last_user_text().unwrap_or("");
        let full = bundle.rendered();
        [last, full.as_str()]
            .iter()
            .find_map(|hay| self.rules.iter().find(|r| hay.contains(&r.pattern)))
            .map(|r| r.response.as_str())
            .unwrap_or(&self.fallback)
    }

    pub fn to_script_text(&self) -> String {
        let mut out = String::new();
        for r in &self.rules {
            out.push_str(&format!("MATCH\t{}\nRESPONSE<<<\n{}\n>>>\n", r.pattern, r.response));
        }
        out.push_str(&format!("FALLBACK<<<\n{}\n>>>\n", self.fallback));
        out
    }
}

fn truncate(s: &str) -> String {
    s.chars().take(40).collect()
}

pub struct MockBackend {
    script: MockScript,
}

impl fmt::Debug for MockBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MockBackend({} rules)", self.script.len())
    }
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        MockBackend { script }
    }
}

#[async_trait]
impl ChatBackend for MockBackend {
    async fn complete(&self, bundle: &PromptBundle) -> Result<String, GatewayError> {
        Ok(self.script.respond(bundle).to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::ChatMessage;

    fn bundle(turns: Vec<ChatMessage>) -> PromptBundle {
        PromptBundle {
            turns,
            task_id: "ner".into(),
            language: "English".into(),
            domain: "general".into(),
        }
    }

    #[test]
    fn two_rule_file() {
        let s = MockScript::parse(
            "# demo\nMATCH\tNamed Entity Recognition\nRESPONSE<<<\n(PER: \"John\") ; (LOC: \"Paris\")\n>>>\n\nMATCH\tx\nRESPONSE<<<\nline one\nline two\n>>>\nFALLBACK<<<\nnothing\n>>>\n",
        )
        .unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.rules[0].pattern, "Named Entity Recognition");
        assert_eq!(s.rules[1].response, "line one\nline two");
        assert_eq!(s.fallback, "nothing");
        assert_eq!(MockScript::parse(&s.to_script_text()).unwrap(), s);
    }

    #[test]
    fn load_errors() {
        assert_eq!(MockScript::parse(""), Err(MockScriptError::Empty));
        assert_eq!(
            MockScript::parse("MATCH\ta\nRESPONSE<<<\nb\n>>>\n"),
            Err(MockScriptError::MissingFallback)
        );
        match MockScript::parse("MATCH\ta\nRESPONSE<<<\nb\n>>>\nBOGUS\n") {
            Err(MockScriptError::Malformed { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
        match MockScript::parse("MATCH\ta\nRESPONSE<<<\nb\n") {
            Err(MockScriptError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match MockScript::parse("FALLBACK<<<\nx\n>>>\nMATCH\ta\n") {
            Err(MockScriptError::Malformed { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn first_match_wins_and_fallback() {
        let s = MockScript::new(
            vec![
                MockRule { pattern: "Recognition".into(), response: "A".into() },
                MockRule { pattern: "Named Entity".into(), response: "B".into() },
            ],
            "F",
        );
        let b = bundle(vec![ChatMessage::user("do Named Entity Recognition")]);
        assert_eq!(s.respond(&b), "A");
        assert_eq!(s.respond(&b), "A");
        let b = bundle(vec![ChatMessage::user("something else")]);
        assert_eq!(s.respond(&b), "F");
    }

    #[test]
    fn newest_turn_is_tried_first() {
        let s = MockScript::new(
            vec![
                MockRule { pattern: "John".into(), response: "prediction".into() },
                MockRule { pattern: "How and why".into(), response: "because".into() },
            ],
            "F",
        );
        let b = bundle(vec![
            ChatMessage::user("John"),
            ChatMessage::assistant("prediction"),
            ChatMessage::user("How and why do you make your decision?"),
        ]);
        assert_eq!(s.respond(&b), "because");
    }

    #[test]
    fn bundled_script_loads() {
        let s = MockScript::bundled();
        assert!(s.len() >= 13);
    }
}

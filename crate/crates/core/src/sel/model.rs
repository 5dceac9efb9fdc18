use std::fmt;

use serde::{Deserialize, Serialize};

/// Characters that may not appear in labels, relation names or role names.
pub const RESERVED_CHARS: [char; 8] = ['(', ')', '{', '}', ':', ';', ',', '"'];

/// The discontinuity operator joining the fragments of one span.
pub const FRAGMENT_JOIN: &str = "..";

/// The structural shape a task's output takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tier {
    Span,
    Pair,
    HyperPair,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Span, Tier::Pair, Tier::HyperPair];

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Span => "span",
            Tier::Pair => "pair",
            Tier::HyperPair => "hyper-pair",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Tier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "span" => Ok(Tier::Span),
            "pair" => Ok(Tier::Pair),
            "hyper-pair" | "hyperpair" | "hyper_pair" => Ok(Tier::HyperPair),
            other => Err(format!("unknown tier `{other}` (expected span, pair or hyper-pair)")),
        }
    }
}

/// A labeled text region. Two or more fragments make it discontinuous.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub label: String,
    pub fragments: Vec<String>,
}

impl Span {
    pub fn new(label: impl Into<String>, fragment: impl Into<String>) -> Self {
        Span {
            label: label.into(),
            fragments: vec![fragment.into()],
        }
    }

    pub fn discontinuous<I, S>(label: impl Into<String>, fragments: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Span {
            label: label.into(),
            fragments: fragments.into_iter().map(Into::into).collect(),
        }
    }

    pub fn is_discontinuous(&self) -> bool {
        self.fragments.len() > 1
    }

    pub(crate) fn check(&self) -> Result<(), String> {
        check_label(&self.label).map_err(|e| format!("span label: {e}"))?;
        if self.fragments.is_empty() {
            return Err("span has no fragments".into());
        }
        if let Some(i) = self.fragments.iter().position(|f| f.is_empty()) {
            return Err(format!("fragment {i} is empty"));
        }
        Ok(())
    }
}

/// A labeled binary relation between two spans. Head/tail order is significant.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pair {
    pub relation: String,
    pub head: Span,
    pub tail: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Role {
    pub role: String,
    pub argument: Span,
}

/// A predicate span with role-labeled arguments. Role labels may repeat.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HyperPair {
    pub predicate: Span,
    pub roles: Vec<Role>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Entry {
    Span(Span),
    Pair(Pair),
    HyperPair(HyperPair),
}

impl Entry {
    pub fn tier(&self) -> Tier {
        match self {
            Entry::Span(_) => Tier::Span,
            Entry::Pair(_) => Tier::Pair,
            Entry::HyperPair(_) => Tier::HyperPair,
        }
    }

    /// Spans in alignment order: the span itself, head then tail, or
    /// predicate then arguments.
    pub fn spans(&self) -> Vec<&Span> {
        match self {
            Entry::Span(s) => vec![s],
            Entry::Pair(p) => vec![&p.head, &p.tail],
            Entry::HyperPair(h) => std::iter::once(&h.predicate)
                .chain(h.roles.iter().map(|r| &r.argument))
                .collect(),
        }
    }

    pub(crate) fn check(&self) -> Result<(), String> {
        match self {
            Entry::Span(s) => s.check(),
            Entry::Pair(p) => {
                check_label(&p.relation).map_err(|e| format!("relation: {e}"))?;
                p.head.check().map_err(|e| format!("head: {e}"))?;
                p.tail.check().map_err(|e| format!("tail: {e}"))
            }
            Entry::HyperPair(h) => {
                h.predicate.check().map_err(|e| format!("predicate: {e}"))?;
                for (i, r) in h.roles.iter().enumerate() {
                    check_label(&r.role).map_err(|e| format!("role {i}: {e}"))?;
                    r.argument.check().map_err(|e| format!("role {i} argument: {e}"))?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Severity {
    Recovered,
    Fatal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IssueKind {
    /// Chatter outside any entry was skipped.
    SkippedText,
    /// Skipped text that contained quoted fragments, i.e. likely a damaged entry.
    SkippedStructure,
    /// Two entries were not separated by `;`.
    MissingSeparator,
    /// Input ended inside an open group; the group was closed.
    UnclosedGroup,
    /// A string literal ran to end of input.
    UnterminatedString,
    /// An entry failed to parse and was discarded.
    MalformedEntry,
    /// A closing delimiter with no matching opener.
    StrayClose,
    /// Non-blank input that produced no entries at all.
    NoStructure,
}

/// One problem found while parsing LLM output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseIssue {
    /// Byte offset into the source text.
    pub offset: usize,
    pub message: String,
    pub severity: Severity,
    pub kind: IssueKind,
}

impl ParseIssue {
    /// Whether the issue means structure content was probably lost, as
    /// opposed to chatter being skipped or a delimiter being repaired.
    pub fn lost_content(&self) -> bool {
        match self.kind {
            IssueKind::MalformedEntry
            | IssueKind::UnterminatedString
            | IssueKind::SkippedStructure
            | IssueKind::NoStructure => true,
            IssueKind::SkippedText
            | IssueKind::MissingSeparator
            | IssueKind::UnclosedGroup
            | IssueKind::StrayClose => false,
        }
    }
}

impl fmt::Display for ParseIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at byte {}", self.message, self.offset)
    }
}

/// A parsed prediction: entries of one tier plus whatever went wrong.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredOutput {
    pub tier: Tier,
    pub entries: Vec<Entry>,
    #[serde(default)]
    pub issues: Vec<ParseIssue>,
}

impl StructuredOutput {
    pub fn new(tier: Tier, entries: Vec<Entry>) -> Self {
        StructuredOutput {
            tier,
            entries,
            issues: Vec::new(),
        }
    }

    pub fn empty(tier: Tier) -> Self {
        Self::new(tier, Vec::new())
    }

    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn lost_content(&self) -> bool {
        self.issues.iter().any(ParseIssue::lost_content)
    }
}

/// Validates a label, relation name or role name.
pub fn check_label(label: &str) -> Result<(), String> {
    if label.trim().is_empty() {
        return Err("label is empty".into());
    }
    if label.trim() != label {
        return Err(format!("label `{label}` has surrounding whitespace"));
    }
    if let Some(c) = label.chars().find(|c| RESERVED_CHARS.contains(c)) {
        return Err(format!("label `{label}` contains reserved character `{c}`"));
    }
    if label.contains(FRAGMENT_JOIN) {
        return Err(format!("label `{label}` contains reserved token `..`"));
    }
    Ok(())
}

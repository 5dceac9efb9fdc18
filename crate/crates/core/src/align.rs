//! Anchors span fragments to byte offsets in the input text.
//!
//! Fragments of one span are matched left to right, each at or after the
//! end of the previous one. Across spans an occurrence already taken by an
//! earlier span is skipped when another occurrence exists. Each fragment
//! tries exact, then case-insensitive, then whitespace-normalized matching;
//! the first level with any occurrence wins.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::sel::{Span, StructuredOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchMode {
    Exact,
    CaseInsensitive,
    WhitespaceNormalized,
}

impl MatchMode {
    pub const CASCADE: [MatchMode; 3] = [
        MatchMode::Exact,
        MatchMode::CaseInsensitive,
        MatchMode::WhitespaceNormalized,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnchoredFragment {
    pub start: usize,
    pub end: usize,
    pub surface: String,
    pub mode: MatchMode,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum UnanchoredReason {
    /// Fragment `fragment` has no occurrence at or after the previous fragment.
    NoOccurrence { fragment: usize },
    EmptyFragment { fragment: usize },
}

impl std::fmt::Display for UnanchoredReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            UnanchoredReason::NoOccurrence { fragment } => {
                write!(f, "no-occurrence (fragment {fragment})")
            }
            UnanchoredReason::EmptyFragment { fragment } => {
                write!(f, "empty-fragment (fragment {fragment})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Anchoring {
    Anchored { fragments: Vec<AnchoredFragment> },
    Unanchored { cause: UnanchoredReason },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnchoredSpan {
    pub label: String,
    /// The fragment texts as predicted.
    pub predicted: Vec<String>,
    pub anchoring: Anchoring,
}

impl AnchoredSpan {
    pub fn fragments(&self) -> Option<&[AnchoredFragment]> {
        match &self.anchoring {
            Anchoring::Anchored { fragments } => Some(fragments),
            Anchoring::Unanchored { .. } => None,
        }
    }

    pub fn is_anchored(&self) -> bool {
        self.fragments().is_some()
    }
}

/// Every span of `out` in alignment order.
pub fn flatten_spans(out: &StructuredOutput) -> Vec<&Span> {
    out.entries.iter().flat_map(|e| e.spans()).collect()
}

/// Occurrence finder used by one alignment strategy.
trait Finder {
    /// Occurrences of `fragment` under `mode` starting at or after `from`,
    /// in increasing start order, as `(start, end)`.
    fn occurrences(&self, text: &str, fragment: &str, mode: MatchMode, from: usize)
        -> Vec<(usize, usize)>;
}

fn align_with(finder: &dyn Finder, out: &StructuredOutput, text: &str) -> Vec<AnchoredSpan> {
    let mut used: HashSet<(usize, usize)> = HashSet::new();
    flatten_spans(out)
        .into_iter()
        .map(|span| {
            let anchoring = anchor_span(finder, span, text, &used);
            if let Anchoring::Anchored { fragments } = &anchoring {
                used.extend(fragments.iter().map(|f| (f.start, f.end)));
            }
            AnchoredSpan {
                label: span.label.clone(),
                predicted: span.fragments.clone(),
                anchoring,
            }
        })
        .collect()
}

fn anchor_span(
    finder: &dyn Finder,
    span: &Span,
    text: &str,
    used: &HashSet<(usize, usize)>,
) -> Anchoring {
    let mut cursor = 0;
    let mut anchored = Vec::with_capacity(span.fragments.len());
    for (i, fragment) in span.fragments.iter().enumerate() {
        if fragment.is_empty() {
            return Anchoring::Unanchored {
                cause: UnanchoredReason::EmptyFragment { fragment: i },
            };
        }
        let hit = MatchMode::CASCADE.into_iter().find_map(|mode| {
            let occ = finder.occurrences(text, fragment, mode, cursor);
            let pick = occ
                .iter()
                .find(|o| !used.contains(o))
                .or_else(|| occ.first())
                .copied();
            pick.map(|(s, e)| (s, e, mode))
        });
        let Some((start, end, mode)) = hit else {
            return Anchoring::Unanchored {
                cause: UnanchoredReason::NoOccurrence { fragment: i },
            };
        };
        anchored.push(AnchoredFragment {
            start,
            end,
            surface: text[start..end].to_string(),
            mode,
        });
        cursor = end;
    }
    Anchoring::Anchored { fragments: anchored }
}

/// Anchors every span of `out` in `text`.
pub fn align(out: &StructuredOutput, text: &str) -> Vec<AnchoredSpan> {
    align_with(&ScanFinder, out, text)
}

/// Reference implementation of [`align`] that enumerates every substring.
/// Quadratic in the text length; meant for differential testing.
pub fn align_naive(out: &StructuredOutput, text: &str) -> Vec<AnchoredSpan> {
    align_with(&ExhaustiveFinder, out, text)
}

fn chars_eq_ignore_case(a: char, b: char) -> bool {
    a == b || a.to_lowercase().eq(b.to_lowercase())
}

/// Forward scanner: matches at each char boundary, stopping at the first
/// mismatch.
struct ScanFinder;

impl ScanFinder {
    fn match_at(text: &str, pos: usize, fragment: &str, mode: MatchMode) -> Option<usize> {
        let hay = &text[pos..];
        match mode {
            MatchMode::Exact => hay.starts_with(fragment).then_some(pos + fragment.len()),
            MatchMode::CaseInsensitive => {
                let mut it = hay.char_indices();
                for fc in fragment.chars() {
                    let (_, tc) = it.next()?;
                    if !chars_eq_ignore_case(fc, tc) {
                        return None;
                    }
                }
                Some(pos + it.next().map_or(hay.len(), |(i, _)| i))
            }
            MatchMode::WhitespaceNormalized => {
                let mut it = hay.char_indices().peekable();
                let mut words = fragment.split_whitespace().peekable();
                words.peek()?;
                let mut end = 0;
                while let Some(word) = words.next() {
                    for fc in word.chars() {
                        let (i, tc) = it.next()?;
                        if tc != fc {
                            return None;
                        }
                        end = i + tc.len_utf8();
                    }
                    if words.peek().is_some() {
                        let mut saw_space = false;
                        while let Some((_, c)) = it.peek() {
                            if !c.is_whitespace() {
                                break;
                            }
                            saw_space = true;
                            it.next();
                        }
                        if !saw_space {
                            return None;
                        }
                    }
                }
                Some(pos + end)
            }
        }
    }
}

impl Finder for ScanFinder {
    fn occurrences(
        &self,
        text: &str,
        fragment: &str,
        mode: MatchMode,
        from: usize,
    ) -> Vec<(usize, usize)> {
        if from > text.len() {
            return Vec::new();
        }
        if mode == MatchMode::Exact {
            // `match_indices` skips overlapping occurrences, so step one char at a time
            let mut found = Vec::new();
            let mut pos = from;
            while let Some(i) = text[pos..].find(fragment) {
                let start = pos + i;
                found.push((start, start + fragment.len()));
                let step = text[start..].chars().next().map_or(1, char::len_utf8);
                pos = start + step;
                if pos > text.len() {
                    break;
                }
            }
            return found;
        }
        text[from..]
            .char_indices()
            .filter_map(|(i, _)| {
                Self::match_at(text, from + i, fragment, mode).map(|end| (from + i, end))
            })
            .collect()
    }
}

/// Tests every `(start, end)` pair of char boundaries for equivalence.
struct ExhaustiveFinder;

/// A fragment with the per-mode forms the equivalence test compares against.
struct Target<'a> {
    raw: &'a str,
    chars: usize,
    normalized: String,
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl ExhaustiveFinder {
    fn equivalent(slice: &str, t: &Target<'_>, mode: MatchMode) -> bool {
        match mode {
            MatchMode::Exact => slice == t.raw,
            MatchMode::CaseInsensitive => {
                slice.chars().count() == t.chars
                    && slice
                        .chars()
                        .zip(t.raw.chars())
                        .all(|(a, b)| chars_eq_ignore_case(a, b))
            }
            MatchMode::WhitespaceNormalized => {
                let starts_ws = slice.chars().next().is_none_or(char::is_whitespace);
                let ends_ws = slice.chars().last().is_none_or(char::is_whitespace);
                !starts_ws
                    && !ends_ws
                    && !t.normalized.is_empty()
                    && slice.len() >= t.normalized.len()
                    && slice.chars().next() == t.normalized.chars().next()
                    && slice.chars().last() == t.normalized.chars().last()
                    && normalize_ws(slice) == t.normalized
            }
        }
    }
}

impl Finder for ExhaustiveFinder {
    fn occurrences(
        &self,
        text: &str,
        fragment: &str,
        mode: MatchMode,
        from: usize,
    ) -> Vec<(usize, usize)> {
        let target = Target {
            raw: fragment,
            chars: fragment.chars().count(),
            normalized: normalize_ws(fragment),
        };
        let bounds: Vec<usize> = (0..=text.len()).filter(|&i| text.is_char_boundary(i)).collect();
        let mut found = Vec::new();
        for &s in bounds.iter().filter(|&&s| s >= from) {
            for &e in bounds.iter().filter(|&&e| e > s) {
                if Self::equivalent(&text[s..e], &target, mode) {
                    found.push((s, e));
                }
            }
        }
        found
    }
}

//! The structure expression language (SEL): the textual form LLMs are asked
//! to emit for span, pair and hyper-pair outputs.
//!
//! ```text
//! document   ::= ws ( entry ( ws ';' ws entry )* )? ws
//! entry(span)       ::= span
//! entry(pair)       ::= '(' ws label ws ':' ws span ws ',' ws span ws ')'
//! entry(hyper-pair) ::= span ws '{' ws ( role ( ws ',' ws role )* )? ws '}'
//! span       ::= '(' ws label ws ':' ws fragments ws ')'
//! fragments  ::= quoted ( ws '..' ws quoted )*
//! role       ::= label ws ':' ws span
//! label      ::= 1+ characters excluding ( ) { } : ; , " and "..", trimmed
//! quoted     ::= '"' ( '\"' | '\\' | non-quote char )* '"'
//! ```

mod model;
mod parse;
mod write;

pub use model::{
    check_label, Entry, HyperPair, IssueKind, Pair, ParseIssue, Role, Severity, Span,
    StructuredOutput, Tier, FRAGMENT_JOIN, RESERVED_CHARS,
};
pub use parse::{parse, parse_with, ParseOptions};
pub use write::{canonicalize, render_entry, serialize};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SelError {
    #[error("entry {index} is invalid: {reason}")]
    InvalidEntry { index: usize, reason: String },
}

/// Checks an executing-format skeleton. Unquoted placeholder fragments
/// such as `(LABEL: span text)` are accepted.
pub fn skeleton_check(text: &str, tier: Tier) -> Result<(), Vec<String>> {
    if text.trim().is_empty() {
        return Err(vec!["empty format".into()]);
    }
    let opts = ParseOptions {
        allow_bare_fragments: true,
    };
    let out = parse_with(text, tier, opts);
    if out.is_clean() && !out.entries.is_empty() {
        return Ok(());
    }
    if let Some(other) = Tier::ALL.into_iter().filter(|t| *t != tier).find(|t| {
        let alt = parse_with(text, *t, opts);
        alt.is_clean() && !alt.entries.is_empty()
    }) {
        return Err(vec![format!(
            "tier mismatch: format is shaped as {other}, task declares {tier}"
        )]);
    }
    Err(out.issues.iter().map(ToString::to_string).collect())
}

/// True when the two outputs have the same canonical entry set.
pub fn canonical_eq(a: &StructuredOutput, b: &StructuredOutput) -> bool {
    a.tier == b.tier && canonicalize(a).entries == canonicalize(b).entries
}

use std::fmt::Write as _;

use super::model::{Entry, Span, StructuredOutput};
use super::SelError;

fn push_quoted(out: &mut String, fragment: &str) {
    out.push('"');
    for c in fragment.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
}

fn push_span(out: &mut String, span: &Span) {
    let _ = write!(out, "({}: ", span.label);
    for (i, f) in span.fragments.iter().enumerate() {
        if i > 0 {
            out.push_str(" .. ");
        }
        push_quoted(out, f);
    }
    out.push(')');
}

/// Canonical text of one entry. Does not validate.
pub fn render_entry(entry: &Entry) -> String {
    let mut out = String::new();
    match entry {
        Entry::Span(s) => push_span(&mut out, s),
        Entry::Pair(p) => {
            let _ = write!(out, "({}: ", p.relation);
            push_span(&mut out, &p.head);
            out.push_str(", ");
            push_span(&mut out, &p.tail);
            out.push(')');
        }
        Entry::HyperPair(h) => {
            push_span(&mut out, &h.predicate);
            if h.roles.is_empty() {
                out.push_str(" {}");
            } else {
                out.push_str(" { ");
                for (i, r) in h.roles.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    let _ = write!(out, "{}: ", r.role);
                    push_span(&mut out, &r.argument);
                }
                out.push_str(" }");
            }
        }
    }
    out
}

/// Serializes entries to canonical text; issues are not carried over.
pub fn serialize(out: &StructuredOutput) -> Result<String, SelError> {
    let mut parts = Vec::with_capacity(out.entries.len());
    for (index, entry) in out.entries.iter().enumerate() {
        if entry.tier() != out.tier {
            return Err(SelError::InvalidEntry {
                index,
                reason: format!("{} entry in {} output", entry.tier(), out.tier),
            });
        }
        entry
            .check()
            .map_err(|reason| SelError::InvalidEntry { index, reason })?;
        parts.push(render_entry(entry));
    }
    Ok(parts.join(" ; "))
}

/// Sorts entries by canonical text (stable on ties), removes exact
/// duplicates and drops issues.
pub fn canonicalize(out: &StructuredOutput) -> StructuredOutput {
    let mut keyed: Vec<(String, usize, &Entry)> = out
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| (render_entry(e), i, e))
        .collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.dedup_by(|a, b| a.2 == b.2);
    StructuredOutput::new(out.tier, keyed.into_iter().map(|(_, _, e)| e.clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sel::model::{HyperPair, Pair, Role, Tier};

    #[test]
    fn single_span() {
        let out = StructuredOutput::new(Tier::Span, vec![Entry::Span(Span::new("PER", "John"))]);
        assert_eq!(serialize(&out).unwrap(), r#"(PER: "John")"#);
    }

    #[test]
    fn escaping() {
        let out = StructuredOutput::new(
            Tier::Span,
            vec![Entry::Span(Span::new("QUOTE", r#"say "hi""#))],
        );
        assert_eq!(serialize(&out).unwrap(), r#"(QUOTE: "say \"hi\"")"#);
    }

    #[test]
    fn all_shapes() {
        let pair = Entry::Pair(Pair {
            relation: "born-in".into(),
            head: Span::new("PER", "John"),
            tail: Span::new("LOC", "Paris"),
        });
        assert_eq!(
            render_entry(&pair),
            r#"(born-in: (PER: "John"), (LOC: "Paris"))"#
        );
        let hyper = Entry::HyperPair(HyperPair {
            predicate: Span::new("Attack", "bombed"),
            roles: vec![
                Role {
                    role: "Agent".into(),
                    argument: Span::new("PER", "rebels"),
                },
                Role {
                    role: "Target".into(),
                    argument: Span::discontinuous("FAC", ["the", "base"]),
                },
            ],
        });
        assert_eq!(
            render_entry(&hyper),
            r#"(Attack: "bombed") { Agent: (PER: "rebels"), Target: (FAC: "the" .. "base") }"#
        );
    }

    #[test]
    fn invalid_entry_is_named_by_index() {
        let out = StructuredOutput::new(
            Tier::Span,
            vec![
                Entry::Span(Span::new("A", "x")),
                Entry::Span(Span::new("B:C", "y")),
            ],
        );
        match serialize(&out) {
            Err(SelError::InvalidEntry { index, .. }) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
        let mixed = StructuredOutput::new(Tier::Pair, vec![Entry::Span(Span::new("A", "x"))]);
        assert!(serialize(&mixed).is_err());
        let empty_frag = StructuredOutput::new(Tier::Span, vec![Entry::Span(Span::new("A", ""))]);
        assert!(serialize(&empty_frag).is_err());
    }

    #[test]
    fn canonicalize_sorts_and_dedupes() {
        let a = Entry::Span(Span::new("A", "x"));
        let b = Entry::Span(Span::new("B", "y"));
        let out = StructuredOutput::new(Tier::Span, vec![b.clone(), a.clone(), a.clone()]);
        let canon = canonicalize(&out);
        assert_eq!(canon.entries, vec![a, b]);
        assert_eq!(canonicalize(&canon), canon);
    }

    #[test]
    fn head_tail_order_is_semantic() {
        let p1 = Entry::Pair(Pair {
            relation: "r".into(),
            head: Span::new("A", "x"),
            tail: Span::new("B", "y"),
        });
        let p2 = Entry::Pair(Pair {
            relation: "r".into(),
            head: Span::new("B", "y"),
            tail: Span::new("A", "x"),
        });
        let canon = canonicalize(&StructuredOutput::new(Tier::Pair, vec![p1, p2]));
        assert_eq!(canon.entries.len(), 2);
    }
}

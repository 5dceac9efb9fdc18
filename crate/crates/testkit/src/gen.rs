use proptest::prelude::*;
use proptest::sample::select;

use xnlp_core::export::{AnnotationDoc, Entity, Event, EventRole, Offset, Relation};
use xnlp_core::sel::{
    check_label, Entry, HyperPair, Pair, Role, Span, StructuredOutput, Tier,
};

/// Labels accepted by the structure language: no reserved characters, no
/// `..`, no surrounding whitespace. Includes inner spaces, dots and
/// non-ASCII.
pub fn label() -> impl Strategy<Value = String> {
    "[A-Za-z0-9_\\-éßЖ漢][A-Za-z0-9_\\- .éßЖ漢]{0,7}"
        .prop_map(|s| s.trim_end().to_string())
        .prop_filter("valid label", |s| check_label(s).is_ok())
}

/// Fragment text: anything non-empty, weighted towards quotes, backslashes,
/// reserved characters and multi-byte text.
pub fn fragment() -> impl Strategy<Value = String> {
    prop_oneof![
        3 => "[a-z ]{1,12}",
        2 => "[\"\\\\(){}:;,. a-zé漢\n\t]{1,10}",
        1 => any::<String>().prop_filter("non-empty", |s| !s.is_empty()),
    ]
}

pub fn span() -> impl Strategy<Value = Span> {
    (label(), prop::collection::vec(fragment(), 1..4))
        .prop_map(|(label, fragments)| Span { label, fragments })
}

pub fn pair() -> impl Strategy<Value = Pair> {
    (label(), span(), span()).prop_map(|(relation, head, tail)| Pair {
        relation,
        head,
        tail,
    })
}

pub fn hyper_pair() -> impl Strategy<Value = HyperPair> {
    (span(), prop::collection::vec((label(), span()), 0..5)).prop_map(|(predicate, roles)| {
        HyperPair {
            predicate,
            roles: roles
                .into_iter()
                .map(|(role, argument)| Role { role, argument })
                .collect(),
        }
    })
}

pub fn entry(tier: Tier) -> BoxedStrategy<Entry> {
    match tier {
        Tier::Span => span().prop_map(Entry::Span).boxed(),
        Tier::Pair => pair().prop_map(Entry::Pair).boxed(),
        Tier::HyperPair => hyper_pair().prop_map(Entry::HyperPair).boxed(),
    }
}

/// 0 to 20 entries of one tier.
pub fn structured_output(tier: Tier) -> impl Strategy<Value = StructuredOutput> {
    prop::collection::vec(entry(tier), 0..=20).prop_map(move |entries| StructuredOutput {
        tier,
        entries,
        issues: Vec::new(),
    })
}

const VOCAB: &[&str] = &[
    "the", "cat", "sat", "on", "mat", "New", "York", "City", "severe", "headache", "and",
    "persistent", "a", "café", "naïve", "cat", "the", "Cat", "dog", "ran", "über", "Zoë",
];

const MISSING: &[&str] = &["Zurich", "platypus", "xylophone"];

/// A text of 5 to 60 tokens from a small vocabulary (so mentions repeat),
/// with random whitespace runs between tokens.
pub fn aligned_text() -> impl Strategy<Value = (String, Vec<String>)> {
    prop::collection::vec((select(VOCAB), select(vec![" ", " ", " ", "  ", "\n", " \t "])), 5..=60)
        .prop_map(|toks| {
            let mut text = String::new();
            let mut words = Vec::new();
            for (i, (w, sep)) in toks.iter().enumerate() {
                if i > 0 {
                    text.push_str(sep);
                }
                text.push_str(w);
                words.push(w.to_string());
            }
            (text, words)
        })
}

fn perturb_case(s: &str, mode: u8) -> String {
    match mode {
        1 => s.to_uppercase(),
        2 => s.to_lowercase(),
        _ => s.to_string(),
    }
}

/// A span sampled from `words`: 1 to 3 fragments of 1 to 3 consecutive
/// tokens each, in text order, sometimes case-perturbed, whitespace
/// collapsed or replaced by a word absent from the text.
fn sampled_span(words: Vec<String>) -> impl Strategy<Value = Span> {
    let n = words.len();
    (
        prop::collection::vec((0..n, 1usize..=3, 0u8..6), 1..=3),
        select(vec!["X", "PER", "LOC", "SYMPTOM"]),
        0u8..10,
        select(MISSING),
    )
        .prop_map(move |(mut frags, label, miss, missing)| {
            frags.sort_by_key(|f| f.0);
            let fragments = frags
                .into_iter()
                .map(|(start, len, mode)| {
                    let end = (start + len).min(n);
                    let sep = if mode == 5 { "\u{20}\u{20}" } else { " " };
                    perturb_case(&words[start..end].join(sep), mode % 3)
                })
                .collect::<Vec<_>>();
            let fragments = if miss == 0 {
                vec![missing.to_string()]
            } else {
                fragments
            };
            Span {
                label: label.to_string(),
                fragments,
            }
        })
}

/// An alignment case: a text and a span-tier structure sampled from it,
/// with repeated mentions, case changes, discontinuous spans and
/// hallucinated fragments.
pub fn alignment_case() -> impl Strategy<Value = (String, StructuredOutput)> {
    aligned_text().prop_flat_map(|(text, words)| {
        let spans = prop::collection::vec(sampled_span(words), 0..=12);
        (Just(text), spans).prop_flat_map(|(text, spans)| {
            // duplicate some spans to force leftmost-unused selection
            let n = spans.len();
            (Just(text), Just(spans), prop::collection::vec(0..n.max(1), 0..=4))
        })
        .prop_map(|(text, mut spans, dups)| {
            if !spans.is_empty() {
                for i in dups {
                    let s = spans[i % spans.len()].clone();
                    spans.push(s);
                }
            }
            (
                text,
                StructuredOutput::new(Tier::Span, spans.into_iter().map(Entry::Span).collect()),
            )
        })
    })
}

fn doc_text() -> impl Strategy<Value = String> {
    "[a-zA-Z éü漢\n\t.,;:]{1,80}"
}

/// Valid offset ranges on char boundaries of `text`, sorted and
/// non-overlapping.
fn offsets_in(text: &str) -> impl Strategy<Value = Vec<Offset>> {
    let bounds: Vec<usize> = text
        .char_indices()
        .map(|(i, _)| i)
        .chain([text.len()])
        .collect();
    prop::collection::btree_set(0..bounds.len(), 2..=6).prop_map(move |cuts| {
        let cuts: Vec<usize> = cuts.into_iter().map(|c| bounds[c]).collect();
        cuts.chunks_exact(2)
            .map(|c| Offset {
                start: c[0],
                end: c[1],
            })
            .collect()
    })
}

fn brat_label() -> impl Strategy<Value = String> {
    "[A-Za-z][A-Za-z0-9_\\-]{0,8}"
}

/// A valid annotation document with entities, relations and events.
pub fn annotation_doc() -> impl Strategy<Value = AnnotationDoc> {
    doc_text().prop_flat_map(|text| {
        let entities = prop::collection::vec((brat_label(), offsets_in(&text)), 0..8);
        (Just(text), entities)
            .prop_flat_map(|(text, ents)| {
                let n = ents.len();
                let rels = if n == 0 {
                    Just(Vec::new()).boxed()
                } else {
                    prop::collection::vec((brat_label(), 0..n, 0..n), 0..5).boxed()
                };
                let events = if n == 0 {
                    Just(Vec::new()).boxed()
                } else {
                    prop::collection::vec(
                        (0..n, prop::collection::vec((brat_label(), 0..n), 0..4)),
                        0..4,
                    )
                    .boxed()
                };
                (Just(text), Just(ents), rels, events)
            })
            .prop_map(|(text, ents, rels, events)| {
                let entities: Vec<Entity> = ents
                    .into_iter()
                    .enumerate()
                    .map(|(i, (label, offsets))| {
                        let surface = offsets
                            .iter()
                            .map(|o| &text[o.start..o.end])
                            .collect::<Vec<_>>()
                            .join(" ");
                        Entity {
                            id: format!("T{}", i + 1),
                            label,
                            offsets,
                            surface,
                        }
                    })
                    .collect();
                let relations = rels
                    .into_iter()
                    .enumerate()
                    .map(|(i, (label, h, t))| Relation {
                        id: format!("R{}", i + 1),
                        label,
                        head: format!("T{}", h + 1),
                        tail: format!("T{}", t + 1),
                    })
                    .collect();
                let events = events
                    .into_iter()
                    .enumerate()
                    .map(|(i, (trigger, roles))| Event {
                        id: format!("E{}", i + 1),
                        trigger: format!("T{}", trigger + 1),
                        roles: roles
                            .into_iter()
                            .map(|(role, t)| EventRole {
                                role,
                                target: format!("T{}", t + 1),
                            })
                            .collect(),
                    })
                    .collect();
                AnnotationDoc {
                    text,
                    entities,
                    relations,
                    events,
                    unanchored: Vec::new(),
                }
            })
    })
}

/// Deletes one structural character (a delimiter or one dot of `..`) that
/// lies inside entry `target` of a clean serialization whose entries are
/// `rendered`, joined by `" ; "`. Returns `None` when the entry has no such
/// character.
pub fn corrupt_entry(rendered: &[String], target: usize, pick: usize) -> Option<String> {
    let mut start = 0;
    for r in &rendered[..target] {
        start += r.len() + 3;
    }
    let entry = &rendered[target];
    let positions = structural_positions(entry);
    if positions.is_empty() {
        return None;
    }
    let at = start + positions[pick % positions.len()];
    let mut joined = rendered.join(" ; ");
    joined.remove(at);
    Some(joined)
}

/// Byte positions of delimiters outside string literals, string quotes and
/// the dots of `..`, in one canonical entry.
fn structural_positions(entry: &str) -> Vec<usize> {
    let mut out = Vec::new();
    let mut in_str = false;
    let mut escaped = false;
    let bytes = entry.as_bytes();
    for (i, c) in entry.char_indices() {
        if in_str {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_str = false;
                out.push(i);
            }
            continue;
        }
        match c {
            '"' => {
                in_str = true;
                out.push(i);
            }
            '(' | ')' | '{' | '}' | ':' | ',' => out.push(i),
            '.' if bytes.get(i + 1) == Some(&b'.') || (i > 0 && bytes[i - 1] == b'.') => out.push(i),
            _ => {}
        }
    }
    out
}

//! Offset-anchored annotation documents, brat standoff export and the
//! render document consumed by the web UI.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::align::{flatten_spans, AnchoredSpan, Anchoring};
use crate::sel::{render_entry, Entry, StructuredOutput};

pub const RENDER_SCHEMA_VERSION: u32 = 1;

/// Half-open byte range into the document text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Offset {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub label: String,
    pub offsets: Vec<Offset>,
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub id: String,
    pub label: String,
    pub head: String,
    pub tail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRole {
    pub role: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub id: String,
    pub trigger: String,
    pub roles: Vec<EventRole>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnanchoredKind {
    Span,
    Relation,
    Event,
}

/// A predicted item that could not be placed in the text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnanchoredItem {
    pub kind: UnanchoredKind,
    pub label: String,
    /// Fragments of the span that failed to anchor.
    pub fragments: Vec<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationDoc {
    pub text: String,
    pub entities: Vec<Entity>,
    pub relations: Vec<Relation>,
    pub events: Vec<Event>,
    pub unanchored: Vec<UnanchoredItem>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ExportError {
    #[error("structure has {expected} spans but {got} anchored spans were given")]
    SpanCountMismatch { expected: usize, got: usize },
    #[error("invalid annotation document: {0}")]
    InvalidDoc(String),
}

struct DocBuilder<'a> {
    text: &'a str,
    entities: Vec<Entity>,
    by_key: HashMap<(String, Vec<Offset>), String>,
}

impl DocBuilder<'_> {
    /// Entity id for an anchored span, creating the entity on first sight.
    fn entity(&mut self, span: &AnchoredSpan) -> Option<String> {
        let fragments = span.fragments()?;
        let offsets: Vec<Offset> = fragments
            .iter()
            .map(|f| Offset {
                start: f.start,
                end: f.end,
            })
            .collect();
        let key = (span.label.clone(), offsets);
        if let Some(id) = self.by_key.get(&key) {
            return Some(id.clone());
        }
        let id = format!("T{}", self.entities.len() + 1);
        let surface = key
            .1
            .iter()
            .map(|o| &self.text[o.start..o.end])
            .collect::<Vec<_>>()
            .join(" ");
        self.entities.push(Entity {
            id: id.clone(),
            label: key.0.clone(),
            offsets: key.1.clone(),
            surface,
        });
        self.by_key.insert(key, id.clone());
        Some(id)
    }
}

fn unanchored_cause(span: &AnchoredSpan) -> Option<String> {
    match &span.anchoring {
        Anchoring::Unanchored { cause } => Some(cause.to_string()),
        Anchoring::Anchored { .. } => None,
    }
}

/// Builds the annotation document for a structure and its alignment.
/// Relations and events whose participants did not anchor are listed as
/// unanchored rather than pointing at missing entities.
pub fn build_doc(
    out: &StructuredOutput,
    anchored: &[AnchoredSpan],
    text: &str,
) -> Result<AnnotationDoc, ExportError> {
    let expected = flatten_spans(out).len();
    if expected != anchored.len() {
        return Err(ExportError::SpanCountMismatch {
            expected,
            got: anchored.len(),
        });
    }
    let mut b = DocBuilder {
        text,
        entities: Vec::new(),
        by_key: HashMap::new(),
    };
    let mut relations = Vec::new();
    let mut events = Vec::new();
    let mut unanchored = Vec::new();
    let mut cursor = 0;

    for entry in &out.entries {
        let n = entry.spans().len();
        let spans = &anchored[cursor..cursor + n];
        cursor += n;
        let ids: Vec<Option<String>> = spans.iter().map(|s| b.entity(s)).collect();
        let first_missing = spans.iter().position(|s| !s.is_anchored());

        match entry {
            Entry::Span(_) => {
                if let Some(cause) = unanchored_cause(&spans[0]) {
                    unanchored.push(UnanchoredItem {
                        kind: UnanchoredKind::Span,
                        label: spans[0].label.clone(),
                        fragments: spans[0].predicted.clone(),
                        reason: cause,
                    });
                }
            }
            Entry::Pair(p) => match first_missing {
                None => relations.push(Relation {
                    id: format!("R{}", relations.len() + 1),
                    label: p.relation.clone(),
                    head: ids[0].clone().expect("anchored"),
                    tail: ids[1].clone().expect("anchored"),
                }),
                Some(i) => unanchored.push(UnanchoredItem {
                    kind: UnanchoredKind::Relation,
                    label: p.relation.clone(),
                    fragments: spans[i].predicted.clone(),
                    reason: format!(
                        "{} span {}: {}",
                        if i == 0 { "head" } else { "tail" },
                        render_entry(&Entry::Span(
                            [&p.head, &p.tail][i].clone()
                        )),
                        unanchored_cause(&spans[i]).expect("unanchored")
                    ),
                }),
            },
            Entry::HyperPair(h) => match first_missing {
                None => events.push(Event {
                    id: format!("E{}", events.len() + 1),
                    trigger: ids[0].clone().expect("anchored"),
                    roles: h
                        .roles
                        .iter()
                        .zip(&ids[1..])
                        .map(|(r, id)| EventRole {
                            role: r.role.clone(),
                            target: id.clone().expect("anchored"),
                        })
                        .collect(),
                }),
                Some(i) => {
                    let what = if i == 0 {
                        "trigger".to_string()
                    } else {
                        format!("{} argument", h.roles[i - 1].role)
                    };
                    unanchored.push(UnanchoredItem {
                        kind: UnanchoredKind::Event,
                        label: h.predicate.label.clone(),
                        fragments: spans[i].predicted.clone(),
                        reason: format!(
                            "{what}: {}",
                            unanchored_cause(&spans[i]).expect("unanchored")
                        ),
                    });
                }
            },
        }
    }

    Ok(AnnotationDoc {
        text: text.to_string(),
        entities: b.entities,
        relations,
        events,
        unanchored,
    })
}

impl AnnotationDoc {
    /// Checks id uniqueness, references and offsets.
    pub fn validate(&self) -> Result<(), ExportError> {
        let bad = |m: String| Err(ExportError::InvalidDoc(m));
        let mut seen = HashSet::new();
        for e in &self.entities {
            if !seen.insert(e.id.as_str()) {
                return bad(format!("duplicate id {}", e.id));
            }
            if e.offsets.is_empty() {
                return bad(format!("{} has no offsets", e.id));
            }
            for o in &e.offsets {
                if o.start >= o.end
                    || o.end > self.text.len()
                    || !self.text.is_char_boundary(o.start)
                    || !self.text.is_char_boundary(o.end)
                {
                    return bad(format!("{} has invalid offsets {}..{}", e.id, o.start, o.end));
                }
            }
        }
        let entity_ids: HashSet<&str> = self.entities.iter().map(|e| e.id.as_str()).collect();
        let check_ref = |owner: &str, id: &str| {
            if entity_ids.contains(id) {
                Ok(())
            } else {
                Err(ExportError::InvalidDoc(format!("{owner} references missing {id}")))
            }
        };
        for r in &self.relations {
            if !seen.insert(r.id.as_str()) {
                return bad(format!("duplicate id {}", r.id));
            }
            check_ref(&r.id, &r.head)?;
            check_ref(&r.id, &r.tail)?;
        }
        for ev in &self.events {
            if !seen.insert(ev.id.as_str()) {
                return bad(format!("duplicate id {}", ev.id));
            }
            check_ref(&ev.id, &ev.trigger)?;
            for r in &ev.roles {
                check_ref(&ev.id, &r.target)?;
            }
        }
        Ok(())
    }

    fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }
}

/// brat type names cannot contain whitespace.
fn brat_name(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_whitespace() { '_' } else { c })
        .collect()
}

fn one_line(s: &str) -> String {
    s.chars()
        .map(|c| if c == '\n' || c == '\r' { ' ' } else { c })
        .collect()
}

/// Serializes the document as brat standoff (`.ann`) text.
pub fn to_brat_standoff(doc: &AnnotationDoc) -> Result<String, ExportError> {
    doc.validate()?;
    let mut out = String::new();
    for e in &doc.entities {
        let offsets = e
            .offsets
            .iter()
            .map(|o| format!("{} {}", o.start, o.end))
            .collect::<Vec<_>>()
            .join(";");
        let _ = writeln!(
            out,
            "{}\t{} {}\t{}",
            e.id,
            brat_name(&e.label),
            offsets,
            one_line(&e.surface)
        );
    }
    for r in &doc.relations {
        let _ = writeln!(
            out,
            "{}\t{} Arg1:{} Arg2:{}",
            r.id,
            brat_name(&r.label),
            r.head,
            r.tail
        );
    }
    for ev in &doc.events {
        let trigger_label = doc.entity(&ev.trigger).map(|e| brat_name(&e.label)).unwrap_or_default();
        let _ = write!(out, "{}\t{}:{}", ev.id, trigger_label, ev.trigger);
        for r in &ev.roles {
            let _ = write!(out, " {}:{}", brat_name(&r.role), r.target);
        }
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderEntity {
    pub id: String,
    pub label: String,
    /// `[start, end)` in Unicode code points.
    pub fragments: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderRelation {
    pub id: String,
    pub label: String,
    pub head: String,
    pub tail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderRole {
    pub role: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderEvent {
    pub id: String,
    pub trigger: String,
    pub roles: Vec<RenderRole>,
}

/// UI-facing document. Offsets are code-point indices so the client can
/// slice the text directly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderDoc {
    pub schema: u32,
    pub text: String,
    pub entities: Vec<RenderEntity>,
    pub relations: Vec<RenderRelation>,
    pub events: Vec<RenderEvent>,
    pub unanchored: Vec<UnanchoredItem>,
}

pub fn to_render_json(doc: &AnnotationDoc) -> RenderDoc {
    // byte offset -> code point index, for every char boundary
    let mut cp_at = vec![0usize; doc.text.len() + 1];
    let mut n = 0;
    for (b, c) in doc.text.char_indices() {
        cp_at[b] = n;
        n += 1;
        for k in 1..c.len_utf8() {
            cp_at[b + k] = n;
        }
    }
    cp_at[doc.text.len()] = n;
    let cp = |b: usize| cp_at[b.min(doc.text.len())];

    RenderDoc {
        schema: RENDER_SCHEMA_VERSION,
        text: doc.text.clone(),
        entities: doc
            .entities
            .iter()
            .map(|e| RenderEntity {
                id: e.id.clone(),
                label: e.label.clone(),
                fragments: e.offsets.iter().map(|o| [cp(o.start), cp(o.end)]).collect(),
            })
            .collect(),
        relations: doc
            .relations
            .iter()
            .map(|r| RenderRelation {
                id: r.id.clone(),
                label: r.label.clone(),
                head: r.head.clone(),
                tail: r.tail.clone(),
            })
            .collect(),
        events: doc
            .events
            .iter()
            .map(|e| RenderEvent {
                id: e.id.clone(),
                trigger: e.trigger.clone(),
                roles: e
                    .roles
                    .iter()
                    .map(|r| RenderRole {
                        role: r.role.clone(),
                        target: r.target.clone(),
                    })
                    .collect(),
            })
            .collect(),
        unanchored: doc.unanchored.clone(),
    }
}

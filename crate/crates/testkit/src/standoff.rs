//! Minimal reader for the brat standoff subset written by
//! `xnlp_core::export::to_brat_standoff`: T, R and E lines only.

use xnlp_core::export::{AnnotationDoc, Entity, Event, EventRole, Offset, Relation};

pub fn read_standoff(text: &str, ann: &str) -> Result<AnnotationDoc, String> {
    let mut doc = AnnotationDoc {
        text: text.to_string(),
        ..AnnotationDoc::default()
    };
    for (n, line) in ann.lines().enumerate() {
        let err = |m: &str| format!("line {}: {m}: {line:?}", n + 1);
        let mut cols = line.splitn(3, '\t');
        let id = cols.next().ok_or_else(|| err("no id"))?;
        let body = cols.next().ok_or_else(|| err("no body"))?;
        match id.chars().next() {
            Some('T') => {
                let surface = cols.next().ok_or_else(|| err("no surface"))?;
                let (label, ranges) = body.split_once(' ').ok_or_else(|| err("no offsets"))?;
                let offsets = ranges
                    .split(';')
                    .map(|r| {
                        let (s, e) = r.split_once(' ').ok_or_else(|| err("bad range"))?;
                        Ok(Offset {
                            start: s.parse().map_err(|_| err("bad start"))?,
                            end: e.parse().map_err(|_| err("bad end"))?,
                        })
                    })
                    .collect::<Result<Vec<_>, String>>()?;
                let expected = offsets
                    .iter()
                    .map(|o| text.get(o.start..o.end).ok_or_else(|| err("offsets outside text")))
                    .collect::<Result<Vec<_>, _>>()?
                    .join(" ");
                if one_line(&expected) != surface {
                    return Err(err("surface does not match text"));
                }
                doc.entities.push(Entity {
                    id: id.to_string(),
                    label: label.to_string(),
                    offsets,
                    surface: surface.to_string(),
                });
            }
            Some('R') => {
                let mut parts = body.split(' ');
                let label = parts.next().ok_or_else(|| err("no label"))?;
                let arg = |p: Option<&str>, name: &str| {
                    p.and_then(|a| a.strip_prefix(name))
                        .map(str::to_string)
                        .ok_or_else(|| err("bad argument"))
                };
                let head = arg(parts.next(), "Arg1:")?;
                let tail = arg(parts.next(), "Arg2:")?;
                doc.relations.push(Relation {
                    id: id.to_string(),
                    label: label.to_string(),
                    head,
                    tail,
                });
            }
            Some('E') => {
                let mut parts = body.split(' ');
                let (_, trigger) = parts
                    .next()
                    .and_then(|t| t.rsplit_once(':'))
                    .ok_or_else(|| err("bad trigger"))?;
                let roles = parts
                    .map(|p| {
                        p.rsplit_once(':')
                            .map(|(role, target)| EventRole {
                                role: role.to_string(),
                                target: target.to_string(),
                            })
                            .ok_or_else(|| err("bad role"))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                doc.events.push(Event {
                    id: id.to_string(),
                    trigger: trigger.to_string(),
                    roles,
                });
            }
            _ => return Err(err("unknown record")),
        }
    }
    Ok(doc)
}

fn one_line(s: &str) -> String {
    s.replace(['\n', '\r'], " ")
}

/// The part of a document standoff can carry, with surfaces flattened to
/// one line.
pub fn canonical(doc: &AnnotationDoc) -> AnnotationDoc {
    let mut d = doc.clone();
    d.unanchored.clear();
    for e in &mut d.entities {
        e.surface = one_line(&e.surface);
    }
    d
}

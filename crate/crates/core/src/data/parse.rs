//! Line-oriented readers and writers for the input files.
//!
//! * triples: `head \t relation \t tail`
//! * events: one JSON object per line with keys `event_id`, `trigger`,
//!   `event_type`, `arguments: [{entity, role}]`
//! * temporal links: `event \t event`
//! * pretrained vectors: identifier followed by whitespace-separated decimals

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::vocab::{EntityId, EventId, EventTypeId, RelationId, RoleId, TriggerId, Vocabularies};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KnowledgeTriple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Argument {
    pub entity: EntityId,
    pub role: RoleId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventRecord {
    pub id: EventId,
    pub trigger: TriggerId,
    pub event_type: EventTypeId,
    pub arguments: Vec<Argument>,
}

/// An undirected temporal link, kept in the direction it was first read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TemporalLink {
    pub a: EventId,
    pub b: EventId,
}

#[derive(Clone, Debug, Default)]
pub struct EventsParse {
    pub events: Vec<EventRecord>,
    /// Argument entities that were not yet in the entity vocabulary.
    pub new_entities: Vec<EntityId>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, Default)]
pub struct TemporalParse {
    pub links: Vec<TemporalLink>,
    pub warnings: Vec<String>,
}

/// Pretrained entity vectors keyed by entity identifier.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InitTable {
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl InitTable {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.vectors.get(name).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

fn parse_error(source: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source.to_string(),
        line,
        message: message.into(),
    }
}

fn io_error(source: &str, e: std::io::Error) -> Error {
    Error::io(source, e)
}

/// Yields `(1-based line number, trimmed line)` for non-blank lines.
fn content_lines<'a, R: BufRead + 'a>(
    reader: R,
    source: &'a str,
) -> impl Iterator<Item = Result<(usize, String)>> + 'a {
    reader
        .lines()
        .enumerate()
        .filter_map(move |(i, line)| match line {
            Err(e) => Some(Err(io_error(source, e))),
            Ok(l) => {
                let l = l.strip_suffix('\r').unwrap_or(&l).to_string();
                if l.trim().is_empty() {
                    None
                } else {
                    Some(Ok((i + 1, l)))
                }
            }
        })
}

pub fn parse_triples<R: BufRead>(
    reader: R,
    source: &str,
    vocabs: &mut Vocabularies,
) -> Result<Vec<KnowledgeTriple>> {
    let mut triples = Vec::new();
    for item in content_lines(reader, source) {
        let (line_no, line) = item?;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_error(
                source,
                line_no,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err(parse_error(source, line_no, "empty field"));
        }
        let head = EntityId(vocabs.entities.intern(fields[0]));
        let relation = RelationId(vocabs.relations.intern(fields[1]));
        let tail = EntityId(vocabs.entities.intern(fields[2]));
        triples.push(KnowledgeTriple {
            head,
            relation,
            tail,
        });
    }
    if triples.is_empty() {
        return Err(Error::EmptyInput(source.to_string()));
    }
    Ok(triples)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArgument {
    entity: String,
    role: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    event_id: String,
    trigger: String,
    event_type: String,
    arguments: Vec<RawArgument>,
}

pub fn parse_events<R: BufRead>(
    reader: R,
    source: &str,
    vocabs: &mut Vocabularies,
) -> Result<EventsParse> {
    let mut out = EventsParse::default();
    for item in content_lines(reader, source) {
        let (line_no, line) = item?;
        let raw: RawEvent =
            serde_json::from_str(&line).map_err(|e| parse_error(source, line_no, e.to_string()))?;
        if raw.arguments.is_empty() {
            let msg = format!(
                "{source}:{line_no}: event `{}` has no arguments; skipped",
                raw.event_id
            );
            log::warn!("{msg}");
            out.warnings.push(msg);
            continue;
        }
        if vocabs.events.get(&raw.event_id).is_some() {
            return Err(parse_error(
                source,
                line_no,
                format!("duplicate event id `{}`", raw.event_id),
            ));
        }
        let id = EventId(vocabs.events.intern(&raw.event_id));
        let trigger = TriggerId(vocabs.triggers.intern(&raw.trigger));
        let event_type = EventTypeId(vocabs.event_types.intern(&raw.event_type));
        let mut seen = HashSet::new();
        let mut arguments = Vec::with_capacity(raw.arguments.len());
        for arg in &raw.arguments {
            let known = vocabs.entities.get(&arg.entity).is_some();
            let entity = EntityId(vocabs.entities.intern(&arg.entity));
            if !known {
                out.new_entities.push(entity);
            }
            let role = RoleId(vocabs.roles.intern(&arg.role));
            let a = Argument { entity, role };
            if seen.insert(a) {
                arguments.push(a);
            }
        }
        out.events.push(EventRecord {
            id,
            trigger,
            event_type,
            arguments,
        });
    }
    Ok(out)
}

pub fn parse_temporal_links<R: BufRead>(
    reader: R,
    source: &str,
    vocabs: &Vocabularies,
) -> Result<TemporalParse> {
    let mut out = TemporalParse::default();
    let mut seen = HashSet::new();
    for item in content_lines(reader, source) {
        let (line_no, line) = item?;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(parse_error(
                source,
                line_no,
                format!("expected 2 tab-separated fields, found {}", fields.len()),
            ));
        }
        let lookup = |name: &str| {
            vocabs
                .events
                .get(name)
                .map(EventId)
                .ok_or_else(|| Error::UnknownEvent(name.to_string()))
        };
        let a = lookup(fields[0])?;
        let b = lookup(fields[1])?;
        if a == b {
            let msg = format!("{source}:{line_no}: self temporal link on `{}`; skipped", fields[0]);
            log::warn!("{msg}");
            out.warnings.push(msg);
            continue;
        }
        let key = (a.min(b), a.max(b));
        if seen.insert(key) {
            out.links.push(TemporalLink { a, b });
        }
    }
    Ok(out)
}

/// Reads pretrained vectors; a repeated identifier keeps its last vector.
pub fn load_pretrained_vectors<R: BufRead>(reader: R, source: &str) -> Result<(InitTable, Vec<String>)> {
    let mut table = InitTable::default();
    let mut warnings = Vec::new();
    for item in content_lines(reader, source) {
        let (line_no, line) = item?;
        let mut fields = line.split_whitespace();
        let name = fields.next().expect("non-blank line has a field").to_string();
        let mut values = Vec::new();
        for f in fields {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_error(source, line_no, format!("invalid number `{f}`")))?;
            if !v.is_finite() {
                return Err(parse_error(source, line_no, format!("non-finite value `{f}`")));
            }
            values.push(v);
        }
        if values.is_empty() {
            return Err(parse_error(source, line_no, "identifier without values"));
        }
        if table.vectors.is_empty() {
            table.dim = values.len();
        } else if values.len() != table.dim {
            return Err(parse_error(
                source,
                line_no,
                format!("dimension {} differs from {}", values.len(), table.dim),
            ));
        }
        if table.vectors.insert(name.clone(), values).is_some() {
            let msg = format!("{source}:{line_no}: `{name}` repeated; last vector wins");
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    Ok((table, warnings))
}

pub fn write_triples<W: Write>(
    mut w: W,
    triples: &[KnowledgeTriple],
    vocabs: &Vocabularies,
) -> std::io::Result<()> {
    for t in triples {
        writeln!(
            w,
            "{}\t{}\t{}",
            vocabs.entities.name(t.head.0),
            vocabs.relations.name(t.relation.0),
            vocabs.entities.name(t.tail.0)
        )?;
    }
    Ok(())
}

pub fn write_events<W: Write>(
    mut w: W,
    events: &[EventRecord],
    vocabs: &Vocabularies,
) -> std::io::Result<()> {
    for e in events {
        let raw = RawEvent {
            event_id: vocabs.events.name(e.id.0).to_string(),
            trigger: vocabs.triggers.name(e.trigger.0).to_string(),
            event_type: vocabs.event_types.name(e.event_type.0).to_string(),
            arguments: e
                .arguments
                .iter()
                .map(|a| RawArgument {
                    entity: vocabs.entities.name(a.entity.0).to_string(),
                    role: vocabs.roles.name(a.role.0).to_string(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &raw)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_temporal_links<W: Write>(
    mut w: W,
    links: &[TemporalLink],
    vocabs: &Vocabularies,
) -> std::io::Result<()> {
    for l in links {
        writeln!(
            w,
            "{}\t{}",
            vocabs.events.name(l.a.0),
            vocabs.events.name(l.b.0)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triples(text: &str) -> Result<(Vec<KnowledgeTriple>, Vocabularies)> {
        let mut v = Vocabularies::default();
        let t = parse_triples(text.as_bytes(), "t.tsv", &mut v)?;
        Ok((t, v))
    }

    #[test]
    fn two_triples_three_entities() {
        let (t, v) = triples("a\tr\tb\nb\tr\tc\n").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(v.entities.len(), 3);
        assert_eq!(v.relations.len(), 1);
    }

    #[test]
    fn self_relation_accepted() {
        let (t, _) = triples("a\tr\ta\n").unwrap();
        assert_eq!(t[0].head, t[0].tail);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        match triples("a\tr\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        match triples("a\tr\tb\n\nx\ty\tz\tw\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_error() {
        assert!(matches!(triples(""), Err(Error::EmptyInput(_))));
    }

    fn events(pre: &str, text: &str) -> Result<(EventsParse, Vocabularies)> {
        let mut v = Vocabularies::default();
        if !pre.is_empty() {
            parse_triples(pre.as_bytes(), "t.tsv", &mut v)?;
        }
        let e = parse_events(text.as_bytes(), "e.jsonl", &mut v)?;
        Ok((e, v))
    }

    #[test]
    fn event_with_two_arguments() {
        let (e, _) = events(
            "a\tr\tb\n",
            r#"{"event_id":"e1","trigger":"wins","event_type":"Win","arguments":[{"entity":"a","role":"winner"},{"entity":"b","role":"prize"}]}"#,
        )
        .unwrap();
        assert_eq!(e.events.len(), 1);
        assert_eq!(e.events[0].arguments.len(), 2);
        assert!(e.new_entities.is_empty());
    }

    #[test]
    fn duplicate_argument_pairs_collapse() {
        let (e, _) = events(
            "a\tr\tb\n",
            r#"{"event_id":"e1","trigger":"t","event_type":"T","arguments":[{"entity":"a","role":"x"},{"entity":"a","role":"x"}]}"#,
        )
        .unwrap();
        assert_eq!(e.events[0].arguments.len(), 1);
    }

    #[test]
    fn unknown_argument_entity_becomes_isolated_node() {
        let (e, v) = events(
            "a\tr\tb\n",
            r#"{"event_id":"e1","trigger":"t","event_type":"T","arguments":[{"entity":"zed","role":"x"}]}"#,
        )
        .unwrap();
        assert_eq!(v.entities.len(), 3);
        assert_eq!(e.new_entities, vec![EntityId(2)]);
    }

    #[test]
    fn missing_key_and_empty_arguments() {
        let err = events("", r#"{"event_id":"e1","trigger":"t","arguments":[]}"#).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let (e, v) = events(
            "",
            r#"{"event_id":"e1","trigger":"t","event_type":"T","arguments":[]}"#,
        )
        .unwrap();
        assert!(e.events.is_empty());
        assert_eq!(e.warnings.len(), 1);
        assert!(v.events.is_empty());
    }

    fn links(text: &str) -> Result<TemporalParse> {
        let mut v = Vocabularies::default();
        for e in ["e1", "e2", "e3"] {
            v.events.intern(e);
        }
        parse_temporal_links(text.as_bytes(), "l.tsv", &v)
    }

    #[test]
    fn temporal_links_collapse_and_reject_self() {
        assert_eq!(links("e1\te2\ne2\te1\n").unwrap().links.len(), 1);
        let p = links("e1\te1\n").unwrap();
        assert_eq!((p.links.len(), p.warnings.len()), (0, 1));
        assert_eq!(links("e1\te2\ne1\te3\n").unwrap().links.len(), 2);
        assert!(matches!(links("e1\tnope\n"), Err(Error::UnknownEvent(ref n)) if n == "nope"));
    }

    #[test]
    fn pretrained_vectors() {
        let (t, _) = load_pretrained_vectors("a 1 2 3 4\nb 0.5 0 0 -1\n".as_bytes(), "v").unwrap();
        assert_eq!((t.len(), t.dim), (2, 4));
        assert!(load_pretrained_vectors("a 1 2 3 4\nb 1 2 3 4 5\n".as_bytes(), "v").is_err());
        assert!(load_pretrained_vectors("a 1 NaN\n".as_bytes(), "v").is_err());
        assert!(load_pretrained_vectors("a 1 inf\n".as_bytes(), "v").is_err());
        let (t, w) = load_pretrained_vectors("a 1 2\na 3 4\n".as_bytes(), "v").unwrap();
        assert_eq!(t.get("a").unwrap(), &[3.0, 4.0]);
        assert_eq!(w.len(), 1);
    }
}

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::graph::{build_graph, GraphCounts, HeterogeneousGraph};
use super::parse::{
    load_pretrained_vectors, parse_events, parse_temporal_links, parse_triples, InitTable,
    KnowledgeTriple,
};
use super::split::split_dataset;
use super::vocab::{EntityId, Vocab, Vocabularies};
use crate::error::{Error, Result};

/// File locations for one dataset. Without explicit validation/test triple
/// files, `triples` is split by `split` ratios.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPaths {
    pub triples: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_triples: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_triples: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temporal: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_vectors: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_labels: Option<PathBuf>,
    /// `head<TAB>tail<TAB>label` lines for pair classification.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation_labels: Option<PathBuf>,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
}

fn default_split() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

/// In-memory file contents, same roles as [`DatasetPaths`].
#[derive(Clone, Debug, Default)]
pub struct DatasetTexts<'a> {
    pub triples: &'a str,
    pub valid_triples: Option<&'a str>,
    pub test_triples: Option<&'a str>,
    pub events: Option<&'a str>,
    pub temporal: Option<&'a str>,
    pub init_vectors: Option<&'a str>,
    pub entity_labels: Option<&'a str>,
    pub relation_labels: Option<&'a str>,
}

/// A loaded dataset: the message-passing graph is built from training
/// triples only, so held-out edges never leak into aggregation.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub graph: HeterogeneousGraph,
    pub train: Vec<KnowledgeTriple>,
    pub valid: Vec<KnowledgeTriple>,
    pub test: Vec<KnowledgeTriple>,
    pub init: Option<InitTable>,
    pub entity_labels: Option<EntityLabels>,
    pub relation_labels: Option<RelationLabels>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntityLabels {
    pub items: Vec<(EntityId, usize)>,
    pub classes: Vocab,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelationLabels {
    pub items: Vec<(EntityId, EntityId, usize)>,
    pub classes: Vocab,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Entity ids of one labelled row, and its class.
type LabelRow = (Vec<EntityId>, usize);

/// Tab-separated rows of `entities` entity names followed by a class label.
fn parse_label_rows<R: BufRead>(
    reader: R,
    source: &str,
    vocabs: &Vocabularies,
    entities: usize,
) -> Result<(Vec<LabelRow>, Vocab)> {
    let mut classes = Vocab::new();
    let mut items = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let err = |message: String| Error::Parse {
            source_name: source.to_string(),
            line: i + 1,
            message,
        };
        if fields.len() != entities + 1 {
            return Err(err(format!(
                "expected {} tab-separated fields, found {}",
                entities + 1,
                fields.len()
            )));
        }
        let ids = fields[..entities]
            .iter()
            .map(|f| {
                vocabs
                    .entities
                    .get(f)
                    .map(EntityId)
                    .ok_or_else(|| err(format!("unknown entity `{f}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        items.push((ids, classes.intern(fields[entities])));
    }
    Ok((items, classes))
}

fn parse_labels<R: BufRead>(reader: R, source: &str, vocabs: &Vocabularies) -> Result<EntityLabels> {
    let (rows, classes) = parse_label_rows(reader, source, vocabs, 1)?;
    let items = rows.into_iter().map(|(e, c)| (e[0], c)).collect();
    Ok(EntityLabels { items, classes })
}

fn parse_relation_labels<R: BufRead>(reader: R, source: &str, vocabs: &Vocabularies) -> Result<RelationLabels> {
    let (rows, classes) = parse_label_rows(reader, source, vocabs, 2)?;
    let items = rows.into_iter().map(|(e, c)| (e[0], e[1], c)).collect();
    Ok(RelationLabels { items, classes })
}

/// Held-out files may be empty; the training file may not.
fn held_out(text: &str, source: &str, vocabs: &mut Vocabularies) -> Result<Vec<KnowledgeTriple>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    parse_triples(text.as_bytes(), source, vocabs)
}

impl Dataset {
    /// Graph counts with every split's triples counted as relation edges.
    pub fn counts(&self) -> GraphCounts {
        GraphCounts {
            relation_edges: self.train.len() + self.valid.len() + self.test.len(),
            ..self.graph.counts()
        }
    }

    pub fn load(paths: &DatasetPaths, seed: u64) -> Result<Dataset> {
        fn read(p: &Path) -> Result<String> {
            std::fs::read_to_string(p).map_err(|e| Error::io(p, e))
        }
        let triples = read(&paths.triples)?;
        let opt = |p: &Option<PathBuf>| -> Result<Option<String>> { p.as_deref().map(read).transpose() };
        let valid = opt(&paths.valid_triples)?;
        let test = opt(&paths.test_triples)?;
        let events = opt(&paths.events)?;
        let temporal = opt(&paths.temporal)?;
        let labels = opt(&paths.entity_labels)?;
        let pair_labels = opt(&paths.relation_labels)?;
        // Vectors can be large; stream them.
        let init = match &paths.init_vectors {
            Some(p) => Some(load_pretrained_vectors(open(p)?, &p.display().to_string())?),
            None => None,
        };
        let names = SourceNames {
            triples: paths.triples.display().to_string(),
            valid: paths.valid_triples.as_ref().map(|p| p.display().to_string()),
            test: paths.test_triples.as_ref().map(|p| p.display().to_string()),
            events: paths.events.as_ref().map(|p| p.display().to_string()),
            temporal: paths.temporal.as_ref().map(|p| p.display().to_string()),
            labels: paths.entity_labels.as_ref().map(|p| p.display().to_string()),
            pair_labels: paths.relation_labels.as_ref().map(|p| p.display().to_string()),
        };
        let texts = DatasetTexts {
            triples: &triples,
            valid_triples: valid.as_deref(),
            test_triples: test.as_deref(),
            events: events.as_deref(),
            temporal: temporal.as_deref(),
            init_vectors: None,
            entity_labels: labels.as_deref(),
            relation_labels: pair_labels.as_deref(),
        };
        let mut ds = Self::build(&texts, &names, paths.split, seed)?;
        if let Some((table, warnings)) = init {
            ds.warnings.extend(warnings);
            ds.init = Some(table);
        }
        Ok(ds)
    }

    pub fn from_texts(texts: &DatasetTexts<'_>, split: [f64; 3], seed: u64) -> Result<Dataset> {
        let names = SourceNames {
            triples: "triples".into(),
            valid: Some("valid_triples".into()),
            test: Some("test_triples".into()),
            events: Some("events".into()),
            temporal: Some("temporal".into()),
            labels: Some("entity_labels".into()),
            pair_labels: Some("relation_labels".into()),
        };
        let mut ds = Self::build(texts, &names, split, seed)?;
        if let Some(v) = texts.init_vectors {
            let (table, warnings) = load_pretrained_vectors(v.as_bytes(), "init_vectors")?;
            ds.warnings.extend(warnings);
            ds.init = Some(table);
        }
        Ok(ds)
    }

    fn build(texts: &DatasetTexts<'_>, names: &SourceNames, split: [f64; 3], seed: u64) -> Result<Dataset> {
        let mut vocabs = Vocabularies::default();
        let mut warnings = Vec::new();
        let all = parse_triples(texts.triples.as_bytes(), &names.triples, &mut vocabs)?;
        let name = |n: &Option<String>| n.clone().unwrap_or_default();
        let valid = texts
            .valid_triples
            .map(|t| held_out(t, &name(&names.valid), &mut vocabs))
            .transpose()?;
        let test = texts
            .test_triples
            .map(|t| held_out(t, &name(&names.test), &mut vocabs))
            .transpose()?;
        let events = match texts.events {
            Some(t) => {
                let p = parse_events(t.as_bytes(), &name(&names.events), &mut vocabs)?;
                warnings.extend(p.warnings);
                p.events
            }
            None => Vec::new(),
        };
        let links = match texts.temporal {
            Some(t) => {
                let p = parse_temporal_links(t.as_bytes(), &name(&names.temporal), &vocabs)?;
                warnings.extend(p.warnings);
                p.links
            }
            None => Vec::new(),
        };

        let (train, valid, test) = match (valid, test) {
            (Some(v), Some(t)) => (all, v, t),
            (v, t) => {
                let s = split_dataset(all.len(), (split[0], split[1], split[2]), seed)?;
                let pick = |ix: &[usize]| {
                    let mut ix = ix.to_vec();
                    ix.sort_unstable();
                    ix.into_iter().map(|i| all[i]).collect::<Vec<_>>()
                };
                let train = pick(&s.train);
                (
                    train,
                    v.unwrap_or_else(|| pick(&s.validation)),
                    t.unwrap_or_else(|| pick(&s.test)),
                )
            }
        };

        let entity_labels = texts
            .entity_labels
            .map(|t| parse_labels(t.as_bytes(), &name(&names.labels), &vocabs))
            .transpose()?;
        let relation_labels = texts
            .relation_labels
            .map(|t| parse_relation_labels(t.as_bytes(), &name(&names.pair_labels), &vocabs))
            .transpose()?;
        let graph = build_graph(&vocabs, &train, &events, &links)?;
        Ok(Dataset {
            graph,
            train,
            valid,
            test,
            init: None,
            entity_labels,
            relation_labels,
            warnings,
        })
    }
}

struct SourceNames {
    triples: String,
    valid: Option<String>,
    test: Option<String>,
    events: Option<String>,
    temporal: Option<String>,
    labels: Option<String>,
    pair_labels: Option<String>,
}

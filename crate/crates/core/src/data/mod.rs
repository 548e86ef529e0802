//! Input parsing, vocabularies, the entity/event graph, and dataset splits.

mod dataset;
mod graph;
mod parse;
mod split;
mod vocab;

pub use dataset::{Dataset, DatasetPaths, DatasetTexts, EntityLabels, RelationLabels};
pub use graph::{build_graph, GraphCounts, HeterogeneousGraph};
pub use parse::{
    load_pretrained_vectors, parse_events, parse_temporal_links, parse_triples, write_events,
    write_temporal_links, write_triples, Argument, EventRecord, EventsParse, InitTable,
    KnowledgeTriple, TemporalLink, TemporalParse,
};
pub use split::{split_dataset, Splits};
pub use vocab::{EntityId, EventId, EventTypeId, RelationId, RoleId, TriggerId, Vocab, Vocabularies};

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::parse::{Argument, EventRecord, KnowledgeTriple, TemporalLink};
use super::vocab::{EntityId, EventId, EventTypeId, RelationId, RoleId, TriggerId, Vocabularies};
use crate::error::{Error, Result};

/// Entities and events on two sides, joined by argument links, with KG
/// relations among entities and temporal links among events.
///
/// Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct HeterogeneousGraph {
    vocabs: Vocabularies,
    triples: Vec<KnowledgeTriple>,
    events: Vec<EventRecord>,
    links: Vec<TemporalLink>,
    original_relations: usize,
    entity_neighbors: Vec<Vec<(EntityId, RelationId)>>,
    event_neighbors: Vec<Vec<EventId>>,
    entity_events: Vec<Vec<(EventId, usize)>>,
}

/// Summary counts printed by graph inspection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GraphCounts {
    pub entities: usize,
    pub relation_edges: usize,
    pub relation_types: usize,
    pub events: usize,
    pub argument_links: usize,
    pub temporal_links: usize,
}

pub fn build_graph(
    vocabs: &Vocabularies,
    triples: &[KnowledgeTriple],
    events: &[EventRecord],
    links: &[TemporalLink],
) -> Result<HeterogeneousGraph> {
    let n_entities = vocabs.entities.len();
    let n_rel = vocabs.relations.len();
    for t in triples {
        if t.head.0 >= n_entities || t.tail.0 >= n_entities {
            return Err(Error::Invalid(format!("triple {t:?} references unknown entity")));
        }
        if t.relation.0 >= n_rel {
            return Err(Error::Invalid(format!("triple {t:?} references unknown relation")));
        }
    }
    if events.len() != vocabs.events.len() || events.iter().enumerate().any(|(i, e)| e.id.0 != i) {
        return Err(Error::Invalid(
            "event records must cover the event vocabulary in id order".into(),
        ));
    }
    for e in events {
        if e.arguments.is_empty() {
            return Err(Error::Invalid(format!(
                "event `{}` has no arguments",
                vocabs.events.name(e.id.0)
            )));
        }
        if e.trigger.0 >= vocabs.triggers.len() || e.event_type.0 >= vocabs.event_types.len() {
            return Err(Error::Invalid(format!("event {:?} has unknown trigger or type", e.id)));
        }
        for a in &e.arguments {
            if a.entity.0 >= n_entities || a.role.0 >= vocabs.roles.len() {
                return Err(Error::Invalid(format!("event {:?} has unknown argument", e.id)));
            }
        }
    }

    let mut entity_neighbors = vec![Vec::new(); n_entities];
    for t in triples {
        entity_neighbors[t.head.0].push((t.tail, t.relation));
        entity_neighbors[t.tail.0].push((t.head, RelationId(t.relation.0 + n_rel)));
    }

    let mut event_neighbors = vec![Vec::new(); events.len()];
    for l in links {
        if l.a == l.b || l.a.0 >= events.len() || l.b.0 >= events.len() {
            return Err(Error::Invalid(format!("bad temporal link {l:?}")));
        }
        event_neighbors[l.a.0].push(l.b);
        event_neighbors[l.b.0].push(l.a);
    }

    let mut entity_events = vec![Vec::new(); n_entities];
    for e in events {
        for (k, a) in e.arguments.iter().enumerate() {
            entity_events[a.entity.0].push((e.id, k));
        }
    }

    Ok(HeterogeneousGraph {
        vocabs: vocabs.clone(),
        triples: triples.to_vec(),
        events: events.to_vec(),
        links: links.to_vec(),
        original_relations: n_rel,
        entity_neighbors,
        event_neighbors,
        entity_events,
    })
}

impl HeterogeneousGraph {
    pub fn vocabs(&self) -> &Vocabularies {
        &self.vocabs
    }

    pub fn triples(&self) -> &[KnowledgeTriple] {
        &self.triples
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn event(&self, id: EventId) -> &EventRecord {
        &self.events[id.0]
    }

    pub fn temporal_links(&self) -> &[TemporalLink] {
        &self.links
    }

    pub fn entity_count(&self) -> usize {
        self.entity_neighbors.len()
    }

    pub fn original_relation_count(&self) -> usize {
        self.original_relations
    }

    /// Originals, their inverses and the self-loop relation.
    pub fn relation_count(&self) -> usize {
        2 * self.original_relations + 1
    }

    pub fn inverse_of(&self, r: RelationId) -> RelationId {
        RelationId(r.0 + self.original_relations)
    }

    pub fn self_loop(&self) -> RelationId {
        RelationId(2 * self.original_relations)
    }

    pub fn event_count(&self) -> usize {
        self.events.len()
    }

    pub fn trigger_count(&self) -> usize {
        self.vocabs.triggers.len()
    }

    pub fn event_type_count(&self) -> usize {
        self.vocabs.event_types.len()
    }

    pub fn role_count(&self) -> usize {
        self.vocabs.roles.len()
    }

    pub fn argument_link_count(&self) -> usize {
        self.events.iter().map(|e| e.arguments.len()).sum()
    }

    /// `(neighbor, relation as seen from i)`, inverse edges included.
    pub fn entity_neighbors(&self, i: EntityId) -> &[(EntityId, RelationId)] {
        &self.entity_neighbors[i.0]
    }

    pub fn event_temporal_neighbors(&self, j: EventId) -> &[EventId] {
        &self.event_neighbors[j.0]
    }

    /// `(event, argument position)` for every argument slot `i` fills.
    pub fn entity_events(&self, i: EntityId) -> &[(EventId, usize)] {
        &self.entity_events[i.0]
    }

    /// Distinct events `i` takes part in, in increasing id order.
    pub fn events_of_entity(&self, i: EntityId) -> Vec<EventId> {
        let mut ids: Vec<EventId> = self.entity_events[i.0].iter().map(|&(e, _)| e).collect();
        ids.dedup();
        ids
    }

    pub fn counts(&self) -> GraphCounts {
        GraphCounts {
            entities: self.entity_count(),
            relation_edges: self.triples.len(),
            relation_types: self.original_relations,
            events: self.event_count(),
            argument_links: self.argument_link_count(),
            temporal_links: self.links.len(),
        }
    }

    /// Same vocabularies and counts, but every event gets a random trigger,
    /// type, and argument set of its original size, and the temporal links
    /// are replaced by the same number of random event pairs.
    pub fn with_random_events(&self, seed: u64) -> Result<HeterogeneousGraph> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e7e7_0000_0001);
        let n = self.entity_count();
        let mut events = Vec::with_capacity(self.events.len());
        for e in &self.events {
            let k = e.arguments.len().min(n);
            let arguments = sample(&mut rng, n, k)
                .into_iter()
                .map(|ent| Argument {
                    entity: EntityId(ent),
                    role: RoleId(rng.random_range(0..self.role_count())),
                })
                .collect();
            events.push(EventRecord {
                id: e.id,
                trigger: TriggerId(rng.random_range(0..self.trigger_count())),
                event_type: EventTypeId(rng.random_range(0..self.event_type_count())),
                arguments,
            });
        }
        let m = self.events.len();
        let possible = m * m.saturating_sub(1) / 2;
        let target = self.links.len().min(possible);
        let mut seen = HashSet::new();
        let mut links = Vec::with_capacity(target);
        while links.len() < target {
            let a = rng.random_range(0..m);
            let b = rng.random_range(0..m);
            if a == b || !seen.insert((a.min(b), a.max(b))) {
                continue;
            }
            links.push(TemporalLink {
                a: EventId(a),
                b: EventId(b),
            });
        }
        build_graph(&self.vocabs, &self.triples, &events, &links)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse::{parse_events, parse_temporal_links, parse_triples};

    fn graph(triples: &str, events: &str, links: &str) -> HeterogeneousGraph {
        let mut v = Vocabularies::default();
        let t = parse_triples(triples.as_bytes(), "t", &mut v).unwrap();
        let e = parse_events(events.as_bytes(), "e", &mut v).unwrap();
        let l = parse_temporal_links(links.as_bytes(), "l", &v).unwrap();
        build_graph(&v, &t, &e.events, &l.links).unwrap()
    }

    const EVENTS: &str = concat!(
        r#"{"event_id":"e1","trigger":"t","event_type":"T","arguments":[{"entity":"a","role":"x"},{"entity":"b","role":"y"}]}"#,
        "\n",
        r#"{"event_id":"e2","trigger":"t","event_type":"T","arguments":[{"entity":"c","role":"x"}]}"#,
        "\n",
    );

    #[test]
    fn relation_augmentation() {
        let g = graph("a\tr\tb\n", "", "");
        assert_eq!(g.relation_count(), 3);
        assert_eq!(g.self_loop(), RelationId(2));
    }

    #[test]
    fn inverse_edges() {
        let g = graph("a\tr\tb\nb\tr\tc\n", "", "");
        let b = EntityId(1);
        let n = g.entity_neighbors(b);
        assert!(n.contains(&(EntityId(0), RelationId(1))));
        assert!(n.contains(&(EntityId(2), RelationId(0))));
    }

    #[test]
    fn entity_events_from_arguments() {
        let g = graph("a\tr\tb\nb\tr\tc\n", EVENTS, "e1\te2\n");
        assert_eq!(g.events_of_entity(EntityId(0)), vec![EventId(0)]);
        assert_eq!(g.events_of_entity(EntityId(1)), vec![EventId(0)]);
        assert_eq!(g.entity_events(EntityId(1)), &[(EventId(0), 1)]);
        assert_eq!(g.event_temporal_neighbors(EventId(1)), &[EventId(0)]);
        assert_eq!(g.counts().argument_links, 3);
    }

    #[test]
    fn random_events_keep_shape() {
        let g = graph("a\tr\tb\nb\tr\tc\n", EVENTS, "e1\te2\n");
        let r = g.with_random_events(3).unwrap();
        assert_eq!(r.counts(), g.counts());
        for (x, y) in r.events().iter().zip(g.events()) {
            assert_eq!(x.arguments.len(), y.arguments.len());
        }
        assert_eq!(r, g.with_random_events(3).unwrap());
    }
}

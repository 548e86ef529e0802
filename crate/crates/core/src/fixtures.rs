//! Bundled and generated datasets used by the examples and the test suites.
//!
//! Generated fixtures are plain text in the on-disk formats, so they go
//! through the same parsers as user data.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::data::{Dataset, DatasetTexts};
use crate::error::Result;
use crate::layers::ModelConfig;
use crate::scoring::ConvEConfig;
use crate::seed;

pub const TOY_TRIPLES: &str = include_str!("../data/toy/triples.tsv");
pub const TOY_EVENTS: &str = include_str!("../data/toy/events.jsonl");
pub const TOY_TEMPORAL: &str = include_str!("../data/toy/temporal.tsv");
pub const TOY_LABELS: &str = include_str!("../data/toy/labels.tsv");
pub const TOY_CONFIG: &str = include_str!("../data/toy/config.toml");

/// Directory holding the bundled toy files and their `config.toml`.
pub fn toy_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy")
}

/// The bundled toy dataset, split 80/10/10.
pub fn toy_dataset(seed: u64) -> Result<Dataset> {
    let texts = DatasetTexts {
        triples: TOY_TRIPLES,
        events: Some(TOY_EVENTS),
        temporal: Some(TOY_TEMPORAL),
        entity_labels: Some(TOY_LABELS),
        ..Default::default()
    };
    Dataset::from_texts(&texts, [0.8, 0.1, 0.1], seed)
}

/// A generated dataset in file formats, with explicit splits.
#[derive(Clone, Debug, Default)]
pub struct GeneratedData {
    pub train: String,
    pub valid: String,
    pub test: String,
    pub events: String,
    pub temporal: String,
}

impl GeneratedData {
    pub fn dataset(&self) -> Result<Dataset> {
        let texts = DatasetTexts {
            triples: &self.train,
            valid_triples: Some(&self.valid),
            test_triples: Some(&self.test),
            events: Some(&self.events),
            temporal: Some(&self.temporal),
            ..Default::default()
        };
        // Splits are explicit, so the ratios and seed are unused.
        Dataset::from_texts(&texts, [1.0, 0.0, 0.0], 0)
    }
}

fn triple_lines(triples: &[(usize, usize, usize)]) -> String {
    triples.iter().fold(String::new(), |mut s, (h, r, t)| {
        let _ = writeln!(s, "e{h}\tr{r}\te{t}");
        s
    })
}

struct EventSpec {
    trigger: usize,
    event_type: usize,
    args: Vec<(usize, usize)>,
}

fn event_lines(events: &[EventSpec]) -> String {
    let mut s = String::new();
    for (j, ev) in events.iter().enumerate() {
        let args: Vec<String> = ev
            .args
            .iter()
            .map(|(e, r)| format!(r#"{{"entity":"e{e}","role":"role{r}"}}"#))
            .collect();
        let _ = writeln!(
            s,
            r#"{{"event_id":"ev{j}","trigger":"t{}","event_type":"type{}","arguments":[{}]}}"#,
            ev.trigger,
            ev.event_type,
            args.join(",")
        );
    }
    s
}

fn temporal_lines(links: &[(usize, usize)]) -> String {
    links.iter().fold(String::new(), |mut s, (a, b)| {
        let _ = writeln!(s, "ev{a}\tev{b}");
        s
    })
}

fn random_events(
    rng: &mut impl Rng,
    count: usize,
    entities: usize,
    args: std::ops::RangeInclusive<usize>,
    triggers: usize,
    types: usize,
    roles: usize,
) -> Vec<EventSpec> {
    let pool: Vec<usize> = (0..entities).collect();
    (0..count)
        .map(|_| {
            let k = rng.random_range(args.clone());
            let chosen: Vec<usize> = pool.choose_multiple(rng, k).copied().collect();
            EventSpec {
                trigger: rng.random_range(0..triggers),
                event_type: rng.random_range(0..types),
                args: chosen.into_iter().map(|e| (e, rng.random_range(0..roles))).collect(),
            }
        })
        .collect()
}

fn random_links(rng: &mut impl Rng, count: usize, events: usize) -> Vec<(usize, usize)> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let a = rng.random_range(0..events);
        let b = rng.random_range(0..events);
        if a != b && seen.insert((a.min(b), a.max(b))) {
            out.push((a, b));
        }
    }
    out
}

fn distinct_triples(rng: &mut impl Rng, count: usize, entities: usize, relations: usize) -> Vec<(usize, usize, usize)> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let t = (
            rng.random_range(0..entities),
            rng.random_range(0..relations),
            rng.random_range(0..entities),
        );
        if t.0 != t.2 && seen.insert(t) {
            out.push(t);
        }
    }
    out
}

/// Ensures every entity name `e0..e{n-1}` is interned in id order by
/// listing them first in the training file: entity ids then equal the
/// generator's indices.
fn every_entity_mentioned(train: &mut Vec<(usize, usize, usize)>, n: usize) {
    let mut seen = vec![false; n];
    for &(h, _, t) in train.iter() {
        seen[h] = true;
        seen[t] = true;
    }
    for (e, s) in seen.iter().enumerate() {
        if !s {
            train.push((e, 0, (e + 1) % n));
        }
    }
}

/// 12 entities, 4 relations, 5 events with 2–3 arguments, 3 temporal links.
pub fn gradient_fixture(seed: u64) -> GeneratedData {
    let mut rng = seed::rng(seed, &[0x6772_6164]);
    let mut train = distinct_triples(&mut rng, 20, 12, 4);
    every_entity_mentioned(&mut train, 12);
    let events = random_events(&mut rng, 5, 12, 2..=3, 3, 2, 3);
    GeneratedData {
        train: triple_lines(&train),
        valid: String::new(),
        test: String::new(),
        events: event_lines(&events),
        temporal: temporal_lines(&random_links(&mut rng, 3, 5)),
    }
}

/// The model and scorer used with [`gradient_fixture`]: `d = 8`, `L = 2`.
pub fn gradient_fixture_config(seed: u64) -> (ModelConfig, ConvEConfig) {
    (
        ModelConfig {
            dim: 8,
            layers: 2,
            seed,
            ..Default::default()
        },
        ConvEConfig {
            rows: 2,
            cols: 4,
            filters: 4,
            kernel: 2,
            ..Default::default()
        },
    )
}

/// 50 entities, 5 relations, 300 distinct training triples, 30 events with
/// 2–4 arguments and 20 temporal links. The training set doubles as the
/// evaluation set.
pub fn memorization_fixture(seed: u64) -> GeneratedData {
    let mut rng = seed::rng(seed, &[0x6d65_6d6f]);
    let mut train = distinct_triples(&mut rng, 300, 50, 5);
    let missing = {
        let mut seen = [false; 50];
        for &(h, _, t) in &train {
            seen[h] = true;
            seen[t] = true;
        }
        seen.iter().filter(|s| !**s).count()
    };
    // 300 random triples over 50 entities touch every entity with
    // overwhelming probability; regenerate deterministically otherwise.
    if missing > 0 {
        return memorization_fixture(seed.wrapping_add(1));
    }
    train.sort_unstable();
    let events = random_events(&mut rng, 30, 50, 2..=4, 12, 6, 4);
    let text = triple_lines(&train);
    GeneratedData {
        train: text.clone(),
        valid: String::new(),
        test: text,
        events: event_lines(&events),
        temporal: temporal_lines(&random_links(&mut rng, 20, 30)),
    }
}

/// Parameters for [`event_signal_fixture`].
#[derive(Clone, Copy, Debug)]
pub struct EventSignalShape {
    pub train_pairs: usize,
    pub valid_pairs: usize,
    pub test_pairs: usize,
    /// Random triples over the other relations.
    pub noise_triples: usize,
}

impl Default for EventSignalShape {
    fn default() -> Self {
        EventSignalShape {
            train_pairs: 60,
            valid_pairs: 10,
            test_pairs: 30,
            noise_triples: 150,
        }
    }
}

/// Every entity takes part in exactly one two-argument event, and
/// `(a, r0, b)` holds exactly when `a` and `b` share an event. The model
/// sees `r0` for the training pairs only; the held-out pairs are never
/// joined by a relational path of length one or two, so the shared event
/// is the only evidence for them.
pub fn event_signal_fixture(seed: u64, shape: EventSignalShape) -> GeneratedData {
    let mut rng = seed::rng(seed, &[0x6576_656e]);
    let pairs = shape.train_pairs + shape.valid_pairs + shape.test_pairs;
    let n = 2 * pairs;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let couples: Vec<(usize, usize)> = order.chunks(2).map(|c| (c[0], c[1])).collect();
    let events: Vec<EventSpec> = couples
        .iter()
        .enumerate()
        .map(|(j, &(a, b))| EventSpec {
            trigger: j,
            event_type: j % 4,
            args: vec![(a, 0), (b, 1)],
        })
        .collect();

    let (train_c, rest) = couples.split_at(shape.train_pairs);
    let (valid_c, test_c) = rest.split_at(shape.valid_pairs);
    let held: Vec<(usize, usize)> = valid_c.iter().chain(test_c).copied().collect();

    let mut train: Vec<(usize, usize, usize)> = train_c.iter().map(|&(a, b)| (a, 0, b)).collect();
    let mut adjacency: Vec<HashSet<usize>> = vec![HashSet::new(); n];
    for &(a, _, b) in &train {
        adjacency[a].insert(b);
        adjacency[b].insert(a);
    }
    let mut noise = 0;
    let mut attempts = 0;
    while noise < shape.noise_triples && attempts < 100 * shape.noise_triples.max(1) {
        attempts += 1;
        let (h, r, t) = (rng.random_range(0..n), rng.random_range(1..4), rng.random_range(0..n));
        if h == t || adjacency[h].contains(&t) {
            continue;
        }
        if try_link(&mut adjacency, &held, h, t) {
            train.push((h, r, t));
            noise += 1;
        }
    }
    every_entity_mentioned_safe(&mut train, n, &held, &mut adjacency, &mut rng);
    train.sort_unstable();

    let facts = |c: &[(usize, usize)]| c.iter().map(|&(a, b)| (a, 0, b)).collect::<Vec<_>>();
    GeneratedData {
        train: triple_lines(&train),
        valid: triple_lines(&facts(valid_c)),
        test: triple_lines(&facts(test_c)),
        events: event_lines(&events),
        temporal: String::new(),
    }
}

/// Adds the undirected edge `h–t` unless it would bring a held-out pair
/// within two hops.
fn try_link(adjacency: &mut [HashSet<usize>], held: &[(usize, usize)], h: usize, t: usize) -> bool {
    adjacency[h].insert(t);
    adjacency[t].insert(h);
    let close = held.iter().any(|&(a, b)| {
        adjacency[a].contains(&b) || adjacency[a].iter().any(|m| adjacency[*m].contains(&b))
    });
    if close {
        adjacency[h].remove(&t);
        adjacency[t].remove(&h);
    }
    !close
}

/// Like [`every_entity_mentioned`], but only adds edges that keep the
/// held-out pairs more than two hops apart.
fn every_entity_mentioned_safe(
    train: &mut Vec<(usize, usize, usize)>,
    n: usize,
    held: &[(usize, usize)],
    adjacency: &mut [HashSet<usize>],
    rng: &mut impl Rng,
) {
    let mut seen = vec![false; n];
    for &(h, _, t) in train.iter() {
        seen[h] = true;
        seen[t] = true;
    }
    for e in 0..n {
        while !seen[e] {
            let t = rng.random_range(0..n);
            if t != e && !adjacency[e].contains(&t) && try_link(adjacency, held, e, t) {
                train.push((e, 1 + rng.random_range(0..3), t));
                seen[e] = true;
                seen[t] = true;
            }
        }
    }
}

use std::collections::{HashMap, HashSet};

use rand::seq::IteratorRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{matvec, ParameterStore, Tape, Tensor};
use crate::data::{EntityId, KnowledgeTriple};
use crate::error::{Error, Result};
use crate::layers::{EventKe, RELATION};
use crate::scoring::{conv_trunk, ScorerParams};
use crate::seed;
use crate::trainer::KnownTails;

/// Mid-rank of `scores[gold]`: `1 + #greater + #tied / 2`, ties excluding
/// the gold entry itself.
pub fn rank_of_gold(scores: &[f64], gold: usize) -> Result<f64> {
    let s = *scores.get(gold).ok_or(Error::IndexOutOfRange {
        what: "scores",
        index: gold,
        len: scores.len(),
    })?;
    let (mut greater, mut equal) = (0usize, 0usize);
    for (j, &x) in scores.iter().enumerate() {
        if j == gold {
            continue;
        }
        if x > s {
            greater += 1;
        } else if x == s {
            equal += 1;
        }
    }
    Ok(1.0 + greater as f64 + equal as f64 / 2.0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    #[default]
    Full,
    Sampled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub protocol: ProtocolKind,
    /// Negatives per query under the sampled protocol.
    pub k: usize,
    /// Drop other known-true tails from the candidates.
    pub filtered: bool,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            protocol: ProtocolKind::Full,
            k: 500,
            filtered: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRank {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub rank: f64,
}

/// Field order is the serialized key order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub protocol: ProtocolKind,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub filtered: bool,
    pub seed: u64,
    pub mr: f64,
    pub mrr: f64,
    pub hits10: f64,
    pub hits20: f64,
    pub ranks: Vec<QueryRank>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub mr: f64,
    pub mrr: f64,
    pub hits10: f64,
    pub hits20: f64,
}

pub fn metrics(ranks: &[f64]) -> Result<Metrics> {
    if ranks.is_empty() {
        return Err(Error::EmptyInput("ranks".into()));
    }
    let n = ranks.len() as f64;
    let hits = |k: f64| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    Ok(Metrics {
        mr: ranks.iter().sum::<f64>() / n,
        mrr: ranks.iter().map(|r| 1.0 / r).sum::<f64>() / n,
        hits10: hits(10.0),
        hits20: hits(20.0),
    })
}

impl RankingReport {
    pub fn from_ranks(config: &EvalConfig, ranks: Vec<QueryRank>) -> Result<Self> {
        let values: Vec<f64> = ranks.iter().map(|q| q.rank).collect();
        let m = metrics(&values)?;
        Ok(RankingReport {
            protocol: config.protocol,
            k: (config.protocol == ProtocolKind::Sampled).then_some(config.k),
            filtered: config.filtered,
            seed: config.seed,
            mr: m.mr,
            mrr: m.mrr,
            hits10: m.hits10,
            hits20: m.hits20,
            ranks,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Invalid(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Invalid(format!("ranking report: {e}")))
    }

    /// `MRR MR Hits@10 Hits@20` header and one value row.
    pub fn table(&self) -> String {
        format!(
            "{:>8} {:>9} {:>8} {:>8}\n{:>8.4} {:>9.2} {:>8.4} {:>8.4}\n",
            "MRR", "MR", "Hits@10", "Hits@20", self.mrr, self.mr, self.hits10, self.hits20
        )
    }
}

/// Candidate tails per query: the gold tail first, then the rest.
pub fn candidates(
    entity_count: usize,
    triple: &KnowledgeTriple,
    index: usize,
    config: &EvalConfig,
    known: Option<&KnownTails>,
) -> Result<Vec<usize>> {
    let gold = triple.tail;
    let skip: Option<&HashSet<EntityId>> = if config.filtered {
        known.and_then(|k| k.get(triple.head, triple.relation))
    } else {
        None
    };
    let pool = (0..entity_count).filter(|&e| e != gold.0 && !skip.is_some_and(|s| s.contains(&EntityId(e))));
    let mut out = vec![gold.0];
    match config.protocol {
        ProtocolKind::Full => out.extend(pool),
        ProtocolKind::Sampled => {
            if config.k >= entity_count {
                return Err(Error::Config(format!(
                    "K = {} negatives needs more than {entity_count} entities",
                    config.k
                )));
            }
            let pool: Vec<usize> = pool.collect();
            if config.k > pool.len() {
                return Err(Error::Config(format!(
                    "K = {} exceeds the {} admissible negatives of query {index}",
                    config.k,
                    pool.len()
                )));
            }
            let mut rng = seed::rng(config.seed, &[index as u64]);
            let mut picked = pool.into_iter().choose_multiple(&mut rng, config.k);
            picked.sort_unstable();
            out.extend(picked);
        }
    }
    Ok(out)
}

/// Frozen entity and relation tables plus scorer weights.
pub struct FrozenScorer<'a> {
    model: &'a EventKe,
    entities: Tensor,
    relations: Tensor,
    filters: Tensor,
    projection: Tensor,
}

impl<'a> FrozenScorer<'a> {
    pub fn new(model: &'a EventKe, store: &ParameterStore) -> Result<Self> {
        Ok(FrozenScorer {
            model,
            entities: model.entity_embeddings(store)?,
            relations: store.value(RELATION)?.clone(),
            filters: store.value(crate::scoring::CONV_FILTERS)?.clone(),
            projection: store.value(crate::scoring::CONV_PROJECTION)?.clone(),
        })
    }

    /// `V^L` rows.
    pub fn entities(&self) -> &Tensor {
        &self.entities
    }

    /// Scores of `(h, r, ·)` against every entity.
    pub fn score_all(&self, head: EntityId, relation: usize) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let params = ScorerParams {
            filters: tape.constant(self.filters.clone()),
            projection: tape.constant(self.projection.clone()),
        };
        let s = tape.constant(Tensor::vector(self.entities.row(head.0).to_vec()));
        let r = tape.constant(Tensor::vector(self.relations.row(relation).to_vec()));
        let trunk = conv_trunk(&mut tape, &self.model.conve, &params, s, r)?;
        let (n, d) = (self.entities.rows(), self.entities.len() / self.entities.rows().max(1));
        Ok(matvec(self.entities.data(), n, d, tape.value(trunk).data()))
    }
}

/// Worker count from `EVENTKE_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var("EVENTKE_THREADS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n: &usize| n > 0)
}

/// Ranks every test tail. Queries run in parallel; the report is
/// assembled in input order, so it does not depend on scheduling.
pub fn kg_completion_eval(
    model: &EventKe,
    store: &ParameterStore,
    test: &[KnowledgeTriple],
    config: &EvalConfig,
    known: Option<&KnownTails>,
) -> Result<RankingReport> {
    if test.is_empty() {
        return Err(Error::EmptyInput("evaluation triples".into()));
    }
    let scorer = FrozenScorer::new(model, store)?;
    let vocabs = model.graph().vocabs();
    let n = model.graph().entity_count();
    let rank_one = |(i, t): (usize, &KnowledgeTriple)| -> Result<QueryRank> {
        let scores = scorer.score_all(t.head, t.relation.0)?;
        let cands = candidates(n, t, i, config, known)?;
        let picked: Vec<f64> = cands.iter().map(|&c| scores[c]).collect();
        Ok(QueryRank {
            head: vocabs.entities.name(t.head.0).to_string(),
            relation: vocabs.relations.name(t.relation.0).to_string(),
            tail: vocabs.entities.name(t.tail.0).to_string(),
            rank: rank_of_gold(&picked, 0)?,
        })
    };
    let run = || test.par_iter().enumerate().map(rank_one).collect::<Result<Vec<_>>>();
    let ranks = match thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run)?,
        None => run()?,
    };
    RankingReport::from_ranks(config, ranks)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankDiffRow {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub rank_a: f64,
    pub rank_b: f64,
    /// `rank_a − rank_b`; positive when B ranks the gold tail higher.
    pub improvement: f64,
}

/// Joins two reports on `(head, relation, tail)`; repeated queries pair up
/// in order of appearance. Rows are sorted by descending improvement.
pub fn rank_diff(a: &RankingReport, b: &RankingReport) -> Result<Vec<RankDiffRow>> {
    let mut pending: HashMap<(&str, &str, &str), Vec<f64>> = HashMap::new();
    for q in b.ranks.iter().rev() {
        pending
            .entry((&q.head, &q.relation, &q.tail))
            .or_default()
            .push(q.rank);
    }
    let mut rows = Vec::new();
    for q in &a.ranks {
        if let Some(rank_b) = pending
            .get_mut(&(q.head.as_str(), q.relation.as_str(), q.tail.as_str()))
            .and_then(Vec::pop)
        {
            rows.push(RankDiffRow {
                head: q.head.clone(),
                relation: q.relation.clone(),
                tail: q.tail.clone(),
                rank_a: q.rank,
                rank_b,
                improvement: q.rank - rank_b,
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::Invalid("the two reports share no queries".into()));
    }
    rows.sort_by(|x, y| y.improvement.total_cmp(&x.improvement));
    Ok(rows)
}

pub fn rank_diff_table(rows: &[RankDiffRow]) -> String {
    let mut s = format!(
        "{:<20} {:<16} {:<20} {:>9} {:>9} {:>11}\n",
        "head", "relation", "tail", "rank_a", "rank_b", "improvement"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<20} {:<16} {:<20} {:>9} {:>9} {:>11}\n",
            r.head, r.relation, r.tail, r.rank_a, r.rank_b, r.improvement
        ));
    }
    s
}

//! Convolutional triple scorer and the binary cross-entropy objective.
//!
//! `score(s, r, t) = g(W · vec(f([s̄; r̄] ∗ ω))) · t`, where `s̄`, `r̄` are
//! `rows × cols` reshapes stacked vertically, `ω` are `F` square kernels
//! and `f`, `g` are the hidden nonlinearities selected by [`Hidden`].

use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, ParameterStore, Tape, Tensor};
use crate::data::EntityId;
use crate::error::{Error, Result};
use crate::layers::{glorot, param_rng};

pub const CONV_FILTERS: &str = "conv_filters";
pub const CONV_PROJECTION: &str = "conv_projection";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hidden {
    /// ReLU on the feature maps, linear projection. The projection must be
    /// able to go negative: entity vectors leave the last layer through a
    /// ReLU, so a non-negative trunk would force every score ≥ 0.
    #[default]
    ReluConv,
    /// ReLU on both the feature maps and the projection.
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvEConfig {
    pub rows: usize,
    pub cols: usize,
    pub filters: usize,
    pub kernel: usize,
    pub hidden: Hidden,
}

impl Default for ConvEConfig {
    fn default() -> Self {
        ConvEConfig {
            rows: 8,
            cols: 8,
            filters: 32,
            kernel: 3,
            hidden: Hidden::ReluConv,
        }
    }
}

impl ConvEConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.rows * self.cols != dim {
            return Err(Error::Config(format!(
                "scorer reshape {}×{} does not match dimension {dim}",
                self.rows, self.cols
            )));
        }
        if self.filters == 0 || self.kernel == 0 || self.kernel > (2 * self.rows).min(self.cols) {
            return Err(Error::Config(format!(
                "kernel {} must fit the stacked {}×{} image",
                self.kernel,
                2 * self.rows,
                self.cols
            )));
        }
        Ok(())
    }

    /// Length of the flattened convolution output.
    pub fn feature_len(&self) -> usize {
        self.filters * (2 * self.rows - self.kernel + 1) * (self.cols - self.kernel + 1)
    }
}

/// Tape handles for the scorer parameters.
#[derive(Clone, Copy, Debug)]
pub struct ScorerParams {
    /// `F × k × k`
    pub filters: NodeId,
    /// `d × feature_len`
    pub projection: NodeId,
}

impl ScorerParams {
    pub fn record(tape: &mut Tape, store: &ParameterStore) -> Result<Self> {
        Ok(ScorerParams {
            filters: tape.param(store, CONV_FILTERS)?,
            projection: tape.param(store, CONV_PROJECTION)?,
        })
    }

    pub(crate) fn init(cfg: &ConvEConfig, dim: usize, seed: u64, store: &mut ParameterStore) -> Result<()> {
        let k2 = cfg.kernel * cfg.kernel;
        let flat = glorot(cfg.filters, k2, k2, k2, &mut param_rng(seed, CONV_FILTERS));
        let filters = Tensor::new(vec![cfg.filters, cfg.kernel, cfg.kernel], flat.into_data())?;
        store.insert(CONV_FILTERS, filters)?;
        let n = cfg.feature_len();
        store.insert(
            CONV_PROJECTION,
            glorot(dim, n, n, dim, &mut param_rng(seed, CONV_PROJECTION)),
        )?;
        Ok(())
    }
}

fn hidden(tape: &mut Tape, cfg: &ConvEConfig, x: NodeId, projection: bool) -> Result<NodeId> {
    match (cfg.hidden, projection) {
        (Hidden::Relu, _) | (Hidden::ReluConv, false) => tape.relu(x),
        (Hidden::Identity, _) | (Hidden::ReluConv, true) => Ok(x),
    }
}

/// The `(s, r)`-dependent part of the score: `g(W · vec(f([s̄; r̄] ∗ ω)))`.
pub fn conv_trunk(
    tape: &mut Tape,
    cfg: &ConvEConfig,
    params: &ScorerParams,
    s: NodeId,
    r: NodeId,
) -> Result<NodeId> {
    let stacked = tape.concat(&[s, r])?;
    let image = tape.reshape2d(stacked, 2 * cfg.rows, cfg.cols)?;
    let maps = tape.conv2d(image, params.filters)?;
    let maps = hidden(tape, cfg, maps, false)?;
    let features = tape.flatten(maps)?;
    let projected = tape.affine(params.projection, features)?;
    hidden(tape, cfg, projected, true)
}

pub fn conv_score(
    tape: &mut Tape,
    cfg: &ConvEConfig,
    params: &ScorerParams,
    s: NodeId,
    r: NodeId,
    t: NodeId,
) -> Result<NodeId> {
    let trunk = conv_trunk(tape, cfg, params, s, r)?;
    tape.dot(trunk, t)
}

/// Scores `(s, r)` against every row of `candidates: [n×d]`, computing the
/// trunk once.
pub fn score_against_all(
    tape: &mut Tape,
    cfg: &ConvEConfig,
    params: &ScorerParams,
    s: NodeId,
    r: NodeId,
    candidates: NodeId,
) -> Result<NodeId> {
    let trunk = conv_trunk(tape, cfg, params, s, r)?;
    tape.affine(candidates, trunk)
}

/// Per-sum or per-term reduction of the BCE objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

/// `−Σ_{v+} log σ(score⁺) − Σ_{v−} log(1 − σ(score⁻))` from a vector of
/// scores against all entities.
pub fn triple_loss_from_scores(
    tape: &mut Tape,
    all_scores: NodeId,
    positives: &[EntityId],
    negatives: &[EntityId],
    reduction: Reduction,
) -> Result<NodeId> {
    if positives.is_empty() {
        return Err(Error::Invalid("query has no positive tails".into()));
    }
    let indices: Vec<usize> = positives.iter().chain(negatives).map(|e| e.0).collect();
    let mut targets = vec![1.0; positives.len()];
    targets.resize(indices.len(), 0.0);
    let picked = tape.select(all_scores, &indices)?;
    let loss = tape.bce_with_scores(picked, &targets)?;
    match reduction {
        Reduction::Sum => Ok(loss),
        Reduction::Mean => tape.scale(loss, 1.0 / indices.len() as f64),
    }
}

/// The objective for one `(h, r)` query.
///
/// `entities` is `V^L` stacked as `[n×d]`; `head` and `relation` are the
/// query vectors.
#[allow(clippy::too_many_arguments)]
pub fn triple_loss(
    tape: &mut Tape,
    cfg: &ConvEConfig,
    params: &ScorerParams,
    entities: NodeId,
    head: NodeId,
    relation: NodeId,
    positives: &[EntityId],
    negatives: &[EntityId],
    reduction: Reduction,
) -> Result<NodeId> {
    if positives.is_empty() {
        return Err(Error::Invalid("query has no positive tails".into()));
    }
    let scores = score_against_all(tape, cfg, params, head, relation, entities)?;
    triple_loss_from_scores(tape, scores, positives, negatives, reduction)
}

/// Draws corrupted tails uniformly, with replacement, rejecting excluded ids.
pub struct NegativeSampler {
    pub entity_count: usize,
    pub per_query: usize,
}

impl NegativeSampler {
    pub fn new(entity_count: usize, per_query: usize) -> Self {
        NegativeSampler {
            entity_count,
            per_query,
        }
    }

    /// `per_query` ids, none equal to `gold` or in `exclude`.
    pub fn sample(
        &self,
        gold: EntityId,
        exclude: Option<&HashSet<EntityId>>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<EntityId>> {
        if self.per_query == 0 {
            return Ok(Vec::new());
        }
        let excluded = |e: EntityId| e == gold || exclude.is_some_and(|s| s.contains(&e));
        let allowed = (0..self.entity_count).filter(|&i| !excluded(EntityId(i))).count();
        if allowed == 0 {
            return Err(Error::Invalid(
                "no entity left to sample as a negative".into(),
            ));
        }
        let mut out = Vec::with_capacity(self.per_query);
        while out.len() < self.per_query {
            let e = EntityId(rng.random_range(0..self.entity_count));
            if !excluded(e) {
                out.push(e);
            }
        }
        Ok(out)
    }
}

pub fn sample_negatives(
    gold: EntityId,
    exclude: Option<&HashSet<EntityId>>,
    sampler: &NegativeSampler,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<EntityId>> {
    sampler.sample(gold, exclude, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny_cfg() -> ConvEConfig {
        ConvEConfig {
            rows: 2,
            cols: 2,
            filters: 1,
            kernel: 1,
            hidden: Hidden::Relu,
        }
    }

    fn store_for(cfg: &ConvEConfig, dim: usize, seed: u64) -> ParameterStore {
        let mut s = ParameterStore::new();
        ScorerParams::init(cfg, dim, seed, &mut s).unwrap();
        s
    }

    #[test]
    fn config_validation() {
        assert!(ConvEConfig::default().validate(64).is_ok());
        assert!(ConvEConfig::default().validate(32).is_err());
        let big = ConvEConfig {
            kernel: 9,
            ..Default::default()
        };
        assert!(big.validate(64).is_err());
        assert_eq!(ConvEConfig::default().feature_len(), 32 * 14 * 6);
    }

    #[test]
    fn zero_tail_and_zero_params_score_zero() {
        let cfg = tiny_cfg();
        let store = store_for(&cfg, 4, 1);
        let mut t = Tape::new();
        let p = ScorerParams::record(&mut t, &store).unwrap();
        let s = t.constant(Tensor::vector(vec![0.4, -0.2, 1.0, 0.3]));
        let r = t.constant(Tensor::vector(vec![0.1, 0.9, -0.5, 0.2]));
        let zero = t.constant(Tensor::zeros(&[4]));
        let sc = conv_score(&mut t, &cfg, &p, s, r, zero).unwrap();
        assert_eq!(t.value(sc).item().unwrap(), 0.0);

        let mut t = Tape::new();
        let mut zs = store.clone();
        zs.value_mut(CONV_FILTERS).unwrap().fill(0.0);
        zs.value_mut(CONV_PROJECTION).unwrap().fill(0.0);
        let p = ScorerParams::record(&mut t, &zs).unwrap();
        let s = t.constant(Tensor::vector(vec![0.4, -0.2, 1.0, 0.3]));
        let r = t.constant(Tensor::vector(vec![0.1, 0.9, -0.5, 0.2]));
        let tail = t.constant(Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]));
        let sc = conv_score(&mut t, &cfg, &p, s, r, tail).unwrap();
        assert_eq!(t.value(sc).item().unwrap(), 0.0);
    }

    #[test]
    fn minimal_pipeline_matches_straight_line_evaluation() {
        // d = 4 as 2×2, one 1×1 kernel of weight 1, projection [I | 0].
        let cfg = tiny_cfg();
        let mut store = store_for(&cfg, 4, 0);
        store.value_mut(CONV_FILTERS).unwrap().fill(1.0);
        let mut proj = Tensor::zeros(&[4, 8]);
        for i in 0..4 {
            proj.data_mut()[i * 8 + i] = 1.0;
        }
        *store.value_mut(CONV_PROJECTION).unwrap() = proj;
        let s_v = [1.0, -2.0, 0.5, 3.0];
        let r_v = [0.0, 1.0, -1.0, 2.0];
        let t_v = [2.0, 1.0, -3.0, 0.5];
        // Straight line: relu(relu(s)) · t, since the projection keeps the s half.
        let expected: f64 = s_v
            .iter()
            .zip(&t_v)
            .map(|(s, t)| f64::max(*s, 0.0) * t)
            .sum();
        assert_eq!(expected, 2.0 + 0.0 - 1.5 + 1.5);
        let mut t = Tape::new();
        let p = ScorerParams::record(&mut t, &store).unwrap();
        let s = t.constant(Tensor::vector(s_v.to_vec()));
        let r = t.constant(Tensor::vector(r_v.to_vec()));
        let tail = t.constant(Tensor::vector(t_v.to_vec()));
        let sc = conv_score(&mut t, &cfg, &p, s, r, tail).unwrap();
        assert_eq!(t.value(sc).item().unwrap(), expected);
    }

    #[test]
    fn linear_projection_lets_scores_go_negative() {
        // Projection −[I | 0]: the outer ReLU clamps the trunk to zero, the
        // linear projection passes −relu(s) through.
        let mut store = store_for(&tiny_cfg(), 4, 0);
        store.value_mut(CONV_FILTERS).unwrap().fill(1.0);
        let mut proj = Tensor::zeros(&[4, 8]);
        for i in 0..4 {
            proj.data_mut()[i * 8 + i] = -1.0;
        }
        *store.value_mut(CONV_PROJECTION).unwrap() = proj;
        let score = |hidden: Hidden| {
            let cfg = ConvEConfig { hidden, ..tiny_cfg() };
            let mut t = Tape::new();
            let p = ScorerParams::record(&mut t, &store).unwrap();
            let s = t.constant(Tensor::vector(vec![1.0, -2.0, 0.5, 3.0]));
            let r = t.constant(Tensor::vector(vec![0.0; 4]));
            let tail = t.constant(Tensor::vector(vec![1.0; 4]));
            let sc = conv_score(&mut t, &cfg, &p, s, r, tail).unwrap();
            t.value(sc).item().unwrap()
        };
        assert_eq!(score(Hidden::Relu), 0.0);
        assert_eq!(score(Hidden::ReluConv), -4.5);
        assert_eq!(score(Hidden::Identity), -2.5);
    }

    #[test]
    fn batched_scores_match_loop() {
        let cfg = ConvEConfig {
            rows: 2,
            cols: 4,
            filters: 3,
            kernel: 2,
            hidden: Hidden::Relu,
        };
        let store = store_for(&cfg, 8, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut rand_vec = |n: usize| Tensor::vector((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
        let s_v = rand_vec(8);
        let r_v = rand_vec(8);
        let mut rows: Vec<Vec<f64>> = (0..5).map(|_| rand_vec(8).into_data()).collect();
        rows[4] = rows[1].clone();
        let mut t = Tape::new();
        let p = ScorerParams::record(&mut t, &store).unwrap();
        let s = t.constant(s_v);
        let r = t.constant(r_v);
        let cand = t.constant(Tensor::from_rows(&rows).unwrap());
        let all = score_against_all(&mut t, &cfg, &p, s, r, cand).unwrap();
        let batched = t.value(all).data().to_vec();
        for (i, row) in rows.iter().enumerate() {
            let ti = t.constant(Tensor::vector(row.clone()));
            let one = conv_score(&mut t, &cfg, &p, s, r, ti).unwrap();
            assert!((t.value(one).item().unwrap() - batched[i]).abs() < 1e-12);
        }
        assert_eq!(batched[1], batched[4]);
    }

    #[test]
    fn loss_values() {
        let mut t = Tape::new();
        let scores = t.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let l = triple_loss_from_scores(&mut t, scores, &[EntityId(0)], &[EntityId(1)], Reduction::Sum).unwrap();
        assert!((t.value(l).item().unwrap() - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);

        let extreme = t.constant(Tensor::vector(vec![20.0, -20.0]));
        let l = triple_loss_from_scores(&mut t, extreme, &[EntityId(0)], &[EntityId(1)], Reduction::Sum).unwrap();
        assert!(t.value(l).item().unwrap() < 1e-8);

        let s = t.constant(Tensor::vector(vec![0.3, -0.4]));
        let once = triple_loss_from_scores(&mut t, s, &[EntityId(0)], &[EntityId(1)], Reduction::Sum).unwrap();
        let twice =
            triple_loss_from_scores(&mut t, s, &[EntityId(0)], &[EntityId(1), EntityId(1)], Reduction::Sum).unwrap();
        let pos_only = triple_loss_from_scores(&mut t, s, &[EntityId(0)], &[], Reduction::Sum).unwrap();
        let neg_term = t.value(once).item().unwrap() - t.value(pos_only).item().unwrap();
        let twice_neg = t.value(twice).item().unwrap() - t.value(pos_only).item().unwrap();
        assert!((twice_neg - 2.0 * neg_term).abs() < 1e-15);

        assert!(triple_loss_from_scores(&mut t, s, &[], &[EntityId(1)], Reduction::Sum).is_err());
    }

    #[test]
    fn sampler_contracts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(NegativeSampler::new(2, 0).sample(EntityId(0), None, &mut rng).unwrap().is_empty());
        let forced = NegativeSampler::new(2, 10).sample(EntityId(0), None, &mut rng).unwrap();
        assert!(forced.iter().all(|&e| e == EntityId(1)));
        let sampler = NegativeSampler::new(20, 16);
        let a = sampler.sample(EntityId(3), None, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sampler.sample(EntityId(3), None, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        let ex: HashSet<EntityId> = [EntityId(1)].into_iter().collect();
        assert!(NegativeSampler::new(2, 1).sample(EntityId(0), Some(&ex), &mut rng).is_err());
    }
}

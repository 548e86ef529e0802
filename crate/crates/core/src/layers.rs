//! The event-aware bipartite aggregation layer and the L-layer forward pass.
//!
//! One layer runs four stages:
//!
//! 1. entity → event attention over argument links, giving
//!    `e_j = [t_j, c_j, λ_j]`;
//! 2. mean message passing over temporal links,
//!    `ẽ_j = e_j + γ·ReLU(W_t · mean_k e_k)`;
//! 3. event → entity attention, `ṽ_i = v_i + ε·Σ_k β_ik W_v ẽ_k`;
//! 4. relational message passing with circular-correlation composition,
//!    `v'_i = ReLU(W_r · Σ_{j ∈ N(i) ∪ {i}} φ(ṽ_j, r_ij))`.
//!
//! Only entity vectors change between layers. Trigger, type, role and
//! relation tables and all weight matrices are shared by every layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, ParameterStore, Tape, Tensor};
use crate::data::{EntityId, EventId, HeterogeneousGraph, InitTable};
use crate::error::{Error, Result};
use crate::scoring::{ConvEConfig, ScorerParams};

pub const ENTITY: &str = "entity";
pub const RELATION: &str = "relation";
pub const TRIGGER: &str = "trigger";
pub const EVENT_TYPE: &str = "event_type";
pub const ROLE: &str = "role";
pub const W_ALPHA: &str = "w_alpha";
pub const W_E: &str = "w_e";
pub const W_T: &str = "w_t";
pub const W_BETA: &str = "w_beta";
pub const W_V: &str = "w_v";
pub const W_R: &str = "w_r";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Shared dimension of entity, relation, trigger, type and role vectors.
    pub dim: usize,
    pub layers: usize,
    /// Temporal mixing weight.
    pub gamma: f64,
    /// Event-to-entity mixing weight.
    pub epsilon: f64,
    pub leaky_slope: f64,
    pub no_temporal_links: bool,
    pub random_events: bool,
    pub no_events: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 64,
            layers: 2,
            gamma: 0.5,
            epsilon: 0.5,
            leaky_slope: 0.2,
            no_temporal_links: false,
            random_events: false,
            no_events: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.layers == 0 {
            return Err(Error::Config("dim and layers must be ≥ 1".into()));
        }
        if !(self.gamma >= 0.0 && self.epsilon >= 0.0) || !self.leaky_slope.is_finite() {
            return Err(Error::Config("gamma and epsilon must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// Leaf nodes for the shared embedding tables plus per-forward row caches.
#[derive(Clone, Debug)]
pub struct StaticTables {
    pub relation: NodeId,
    pub trigger: NodeId,
    pub event_type: NodeId,
    pub role: NodeId,
    relation_rows: Vec<NodeId>,
    trigger_rows: Vec<NodeId>,
    type_rows: Vec<NodeId>,
    role_rows: Vec<Vec<NodeId>>,
}

impl StaticTables {
    /// Looks up every row the layers will need, once per forward.
    pub fn record(
        tape: &mut Tape,
        graph: &HeterogeneousGraph,
        relation: NodeId,
        trigger: NodeId,
        event_type: NodeId,
        role: NodeId,
    ) -> Result<Self> {
        let relation_rows = (0..graph.relation_count())
            .map(|r| tape.lookup(relation, r))
            .collect::<Result<_>>()?;
        let mut trigger_rows = Vec::with_capacity(graph.event_count());
        let mut type_rows = Vec::with_capacity(graph.event_count());
        let mut role_rows = Vec::with_capacity(graph.event_count());
        for e in graph.events() {
            trigger_rows.push(tape.lookup(trigger, e.trigger.0)?);
            type_rows.push(tape.lookup(event_type, e.event_type.0)?);
            role_rows.push(
                e.arguments
                    .iter()
                    .map(|a| tape.lookup(role, a.role.0))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(StaticTables {
            relation,
            trigger,
            event_type,
            role,
            relation_rows,
            trigger_rows,
            type_rows,
            role_rows,
        })
    }

    pub fn ids(&self) -> [NodeId; 4] {
        [self.relation, self.trigger, self.event_type, self.role]
    }

    pub fn relation_row(&self, r: usize) -> NodeId {
        self.relation_rows[r]
    }
}

/// Weight matrices shared by all layers.
#[derive(Clone, Copy, Debug)]
pub struct LayerWeights {
    /// `1 × 4d`
    pub w_alpha: NodeId,
    /// `d × d`
    pub w_e: NodeId,
    /// `3d × 3d`
    pub w_t: NodeId,
    /// `1 × 4d`
    pub w_beta: NodeId,
    /// `d × 3d`
    pub w_v: NodeId,
    /// `d × d`
    pub w_r: NodeId,
}

impl LayerWeights {
    pub fn record(tape: &mut Tape, store: &ParameterStore) -> Result<Self> {
        Ok(LayerWeights {
            w_alpha: tape.param(store, W_ALPHA)?,
            w_e: tape.param(store, W_E)?,
            w_t: tape.param(store, W_T)?,
            w_beta: tape.param(store, W_BETA)?,
            w_v: tape.param(store, W_V)?,
            w_r: tape.param(store, W_R)?,
        })
    }
}

/// Entity vectors entering a layer, one node per entity.
pub struct LayerState<'a> {
    pub entities: Vec<NodeId>,
    pub statics: &'a StaticTables,
}

/// Event vectors of width `3d`, one node per event.
#[derive(Clone, Debug, PartialEq)]
pub struct EventBatchState {
    pub events: Vec<NodeId>,
}

pub struct Stage1Output {
    pub alphas: Vec<NodeId>,
    pub events: EventBatchState,
}

pub struct Stage3Output {
    pub entities: Vec<NodeId>,
    /// Attention over `E_i`, absent for entities with no events.
    pub betas: Vec<Option<NodeId>>,
}

pub fn stage1_entity_to_event(
    tape: &mut Tape,
    state: &LayerState<'_>,
    weights: &LayerWeights,
    graph: &HeterogeneousGraph,
    leaky_slope: f64,
) -> Result<Stage1Output> {
    let st = state.statics;
    let mut projected: Vec<Option<NodeId>> = vec![None; state.entities.len()];
    let mut alphas = Vec::with_capacity(graph.event_count());
    let mut events = Vec::with_capacity(graph.event_count());
    for (j, ev) in graph.events().iter().enumerate() {
        let (t, c) = (st.trigger_rows[j], st.type_rows[j]);
        let mut logits = Vec::with_capacity(ev.arguments.len());
        let mut messages = Vec::with_capacity(ev.arguments.len());
        for (k, arg) in ev.arguments.iter().enumerate() {
            let v = state.entities[arg.entity.0];
            let x = tape.concat(&[t, c, v, st.role_rows[j][k]])?;
            let s = tape.affine(weights.w_alpha, x)?;
            logits.push(tape.leaky_relu(s, leaky_slope)?);
            let m = match projected[arg.entity.0] {
                Some(m) => m,
                None => {
                    let p = tape.affine(weights.w_e, v)?;
                    let m = tape.relu(p)?;
                    projected[arg.entity.0] = Some(m);
                    m
                }
            };
            messages.push(m);
        }
        let logits = tape.concat(&logits)?;
        let alpha = tape.masked_softmax(logits)?;
        let lambda = tape.weighted_sum(alpha, &messages)?;
        alphas.push(alpha);
        events.push(tape.concat(&[t, c, lambda])?);
    }
    Ok(Stage1Output {
        alphas,
        events: EventBatchState { events },
    })
}

pub fn stage2_temporal(
    tape: &mut Tape,
    events: &EventBatchState,
    weights: &LayerWeights,
    graph: &HeterogeneousGraph,
    gamma: f64,
) -> Result<EventBatchState> {
    let mut out = Vec::with_capacity(events.events.len());
    for (j, &e) in events.events.iter().enumerate() {
        let neighbors = graph.event_temporal_neighbors(EventId(j));
        if neighbors.is_empty() {
            out.push(e);
            continue;
        }
        let rows: Vec<NodeId> = neighbors.iter().map(|k| events.events[k.0]).collect();
        let stacked = tape.stack_rows(&rows)?;
        let mean = tape.mean_rows(stacked)?;
        let mixed = tape.affine(weights.w_t, mean)?;
        let act = tape.relu(mixed)?;
        let scaled = tape.scale(act, gamma)?;
        out.push(tape.add(e, scaled)?);
    }
    Ok(EventBatchState { events: out })
}

pub fn stage3_event_to_entity(
    tape: &mut Tape,
    state: &LayerState<'_>,
    events: &EventBatchState,
    weights: &LayerWeights,
    graph: &HeterogeneousGraph,
    epsilon: f64,
    leaky_slope: f64,
) -> Result<Stage3Output> {
    let mut projected: Vec<Option<NodeId>> = vec![None; events.events.len()];
    let mut entities = Vec::with_capacity(state.entities.len());
    let mut betas = Vec::with_capacity(state.entities.len());
    for (i, &v) in state.entities.iter().enumerate() {
        let linked = graph.events_of_entity(EntityId(i));
        if linked.is_empty() {
            entities.push(v);
            betas.push(None);
            continue;
        }
        let mut logits = Vec::with_capacity(linked.len());
        let mut messages = Vec::with_capacity(linked.len());
        for ev in linked {
            let e = events.events[ev.0];
            let x = tape.concat(&[e, v])?;
            let s = tape.affine(weights.w_beta, x)?;
            logits.push(tape.leaky_relu(s, leaky_slope)?);
            let m = match projected[ev.0] {
                Some(m) => m,
                None => {
                    let m = tape.affine(weights.w_v, e)?;
                    projected[ev.0] = Some(m);
                    m
                }
            };
            messages.push(m);
        }
        let logits = tape.concat(&logits)?;
        let beta = tape.masked_softmax(logits)?;
        let agg = tape.weighted_sum(beta, &messages)?;
        let scaled = tape.scale(agg, epsilon)?;
        entities.push(tape.add(v, scaled)?);
        betas.push(Some(beta));
    }
    Ok(Stage3Output { entities, betas })
}

pub fn stage4_entity_message_pass(
    tape: &mut Tape,
    tilde: &[NodeId],
    statics: &StaticTables,
    weights: &LayerWeights,
    graph: &HeterogeneousGraph,
) -> Result<Vec<NodeId>> {
    let self_loop = graph.self_loop().0;
    let mut out = Vec::with_capacity(tilde.len());
    for (i, &vi) in tilde.iter().enumerate() {
        let neighbors = graph.entity_neighbors(EntityId(i));
        let mut terms = Vec::with_capacity(neighbors.len() + 1);
        for &(j, r) in neighbors {
            terms.push(tape.circ_corr(tilde[j.0], statics.relation_row(r.0))?);
        }
        terms.push(tape.circ_corr(vi, statics.relation_row(self_loop))?);
        // W_r is shared, so it is applied once to the summed compositions.
        let total = tape.add_n(&terms)?;
        let pre = tape.affine(weights.w_r, total)?;
        out.push(tape.relu(pre)?);
    }
    Ok(out)
}

/// Node ids recorded for one layer.
#[derive(Clone, Debug)]
pub struct LayerTrace {
    pub input: Vec<NodeId>,
    pub alphas: Vec<NodeId>,
    pub events: Option<EventBatchState>,
    pub events_tilde: Option<EventBatchState>,
    pub betas: Vec<Option<NodeId>>,
    pub entities_tilde: Vec<NodeId>,
    pub static_ids: [NodeId; 4],
}

pub struct ForwardOutput {
    pub statics: StaticTables,
    pub layers: Vec<LayerTrace>,
    /// `V^L`, one node per entity.
    pub entities: Vec<NodeId>,
}

/// Runs one full layer (stages 1–4) on `state`.
pub fn layer_forward(
    tape: &mut Tape,
    state: &LayerState<'_>,
    weights: &LayerWeights,
    graph: &HeterogeneousGraph,
    config: &ModelConfig,
) -> Result<(LayerTrace, Vec<NodeId>)> {
    let mut trace = LayerTrace {
        input: state.entities.clone(),
        alphas: Vec::new(),
        events: None,
        events_tilde: None,
        betas: vec![None; state.entities.len()],
        entities_tilde: state.entities.clone(),
        static_ids: state.statics.ids(),
    };
    if !config.no_events && graph.event_count() > 0 {
        let s1 = stage1_entity_to_event(tape, state, weights, graph, config.leaky_slope)?;
        let tilde_events = if config.no_temporal_links {
            s1.events.clone()
        } else {
            stage2_temporal(tape, &s1.events, weights, graph, config.gamma)?
        };
        let s3 = stage3_event_to_entity(
            tape,
            state,
            &tilde_events,
            weights,
            graph,
            config.epsilon,
            config.leaky_slope,
        )?;
        trace.alphas = s1.alphas;
        trace.events = Some(s1.events);
        trace.events_tilde = Some(tilde_events);
        trace.betas = s3.betas;
        trace.entities_tilde = s3.entities;
    }
    let next = stage4_entity_message_pass(tape, &trace.entities_tilde, state.statics, weights, graph)?;
    Ok((trace, next))
}

/// Stages 1→4 applied `L` times starting from the entity table.
pub fn forward_model(
    tape: &mut Tape,
    graph: &HeterogeneousGraph,
    store: &ParameterStore,
    config: &ModelConfig,
) -> Result<ForwardOutput> {
    let entity = tape.param(store, ENTITY)?;
    let relation = tape.param(store, RELATION)?;
    let trigger = tape.param(store, TRIGGER)?;
    let event_type = tape.param(store, EVENT_TYPE)?;
    let role = tape.param(store, ROLE)?;
    let statics = StaticTables::record(tape, graph, relation, trigger, event_type, role)?;
    let weights = LayerWeights::record(tape, store)?;

    let mut current: Vec<NodeId> = (0..graph.entity_count())
        .map(|i| tape.lookup(entity, i))
        .collect::<Result<_>>()?;
    let mut layers = Vec::with_capacity(config.layers);
    for _ in 0..config.layers {
        let state = LayerState {
            entities: current,
            statics: &statics,
        };
        let (trace, next) = layer_forward(tape, &state, &weights, graph, config)?;
        layers.push(trace);
        current = next;
    }
    Ok(ForwardOutput {
        statics,
        layers,
        entities: current,
    })
}

/// The full model: configuration plus the graph it aggregates over (the
/// randomized copy under the `random_events` ablation).
#[derive(Clone, Debug)]
pub struct EventKe {
    pub config: ModelConfig,
    pub conve: ConvEConfig,
    graph: HeterogeneousGraph,
}

/// FNV-1a, used to derive a stable per-parameter seed stream.
fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

pub(crate) fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ name_hash(name))
}

pub(crate) fn glorot(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-limit..=limit)).collect();
    Tensor::matrix(rows, cols, data).expect("shape matches")
}

fn embedding(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("positive std");
    let data = (0..rows * dim).map(|_| normal.sample(rng)).collect();
    Tensor::matrix(rows, dim, data).expect("shape matches")
}

impl EventKe {
    pub fn new(graph: &HeterogeneousGraph, config: ModelConfig, conve: ConvEConfig) -> Result<Self> {
        config.validate()?;
        conve.validate(config.dim)?;
        let graph = if config.random_events {
            graph.with_random_events(config.seed)?
        } else {
            graph.clone()
        };
        Ok(EventKe { config, conve, graph })
    }

    /// The graph the layers aggregate over.
    pub fn graph(&self) -> &HeterogeneousGraph {
        &self.graph
    }

    /// Allocates and initializes every parameter. The layout depends only
    /// on vocabulary sizes and dimensions, never on ablation flags.
    pub fn init_params(&self, init: Option<&InitTable>) -> Result<ParameterStore> {
        let d = self.config.dim;
        let g = &self.graph;
        let seed = self.config.seed;
        let event_salt = if self.config.random_events { "random_events/" } else { "" };
        let mut store = ParameterStore::new();

        let mut entity = embedding(g.entity_count(), d, &mut param_rng(seed, ENTITY));
        if let Some(table) = init {
            if !table.is_empty() && table.dim != d {
                return Err(Error::Config(format!(
                    "pretrained vectors have dimension {}, model uses {d}",
                    table.dim
                )));
            }
            for (i, name) in g.vocabs().entities.names().iter().enumerate() {
                if let Some(v) = table.get(name) {
                    entity.row_mut(i).copy_from_slice(v);
                }
            }
        }
        store.insert(ENTITY, entity)?;
        store.insert(RELATION, embedding(g.relation_count(), d, &mut param_rng(seed, RELATION)))?;
        for (name, rows) in [
            (TRIGGER, g.trigger_count()),
            (EVENT_TYPE, g.event_type_count()),
            (ROLE, g.role_count()),
        ] {
            let mut rng = param_rng(seed, &format!("{event_salt}{name}"));
            store.insert(name, embedding(rows, d, &mut rng))?;
        }
        for (name, rows, cols) in [
            (W_ALPHA, 1, 4 * d),
            (W_E, d, d),
            (W_T, 3 * d, 3 * d),
            (W_BETA, 1, 4 * d),
            (W_V, d, 3 * d),
            (W_R, d, d),
        ] {
            store.insert(name, glorot(rows, cols, cols, rows, &mut param_rng(seed, name)))?;
        }
        ScorerParams::init(&self.conve, d, seed, &mut store)?;
        Ok(store)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore) -> Result<ForwardOutput> {
        forward_model(tape, &self.graph, store, &self.config)
    }

    /// `V^L` as an `n × d` tensor, computed on a scratch tape.
    pub fn entity_embeddings(&self, store: &ParameterStore) -> Result<Tensor> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, store)?;
        let stacked = tape.stack_rows(&out.entities)?;
        Ok(tape.value(stacked).clone())
    }
}

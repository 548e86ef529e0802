//! Adam training over grouped `(h, r)` queries with early stopping on a
//! monitored loss and resumable checkpoints.

mod adam;
mod checkpoint;

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, FORMAT_VERSION};

use crate::autodiff::{NodeId, ParameterStore, Tape};
use crate::data::{EntityId, KnowledgeTriple, RelationId};
use crate::error::{Error, Result};
use crate::layers::EventKe;
use crate::scoring::{triple_loss, NegativeSampler, Reduction, ScorerParams};
use crate::seed;

const TRAIN_STREAM: u64 = 1;
const VALID_STREAM: u64 = 2;
const SHUFFLE_STREAM: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub max_epochs: usize,
    pub patience: usize,
    /// `(h, r)` groups per optimizer step.
    pub batch_size: usize,
    /// Negatives drawn per query.
    pub negatives: usize,
    /// Exclude every known-true tail of `(h, r)` from the negatives.
    pub filter_negatives: bool,
    pub shuffle: bool,
    pub reduction: Reduction,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            max_epochs: 200,
            patience: 10,
            batch_size: 32,
            negatives: 64,
            filter_negatives: true,
            shuffle: true,
            reduction: Reduction::Sum,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.max_epochs == 0 || self.patience == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "max_epochs, patience and batch_size must be ≥ 1".into(),
            ));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }
}

/// All tails observed for one `(h, r)` pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Query {
    pub head: EntityId,
    pub relation: RelationId,
    /// Sorted, distinct.
    pub tails: Vec<EntityId>,
}

/// Groups triples by `(h, r)` in `(h, r)` order.
pub fn group_queries(triples: &[KnowledgeTriple]) -> Vec<Query> {
    let mut groups: BTreeMap<(EntityId, RelationId), Vec<EntityId>> = BTreeMap::new();
    for t in triples {
        groups.entry((t.head, t.relation)).or_default().push(t.tail);
    }
    groups
        .into_iter()
        .map(|((head, relation), mut tails)| {
            tails.sort_unstable();
            tails.dedup();
            Query {
                head,
                relation,
                tails,
            }
        })
        .collect()
}

/// Known-true tails per `(h, r)`.
#[derive(Clone, Debug, Default)]
pub struct KnownTails(HashMap<(EntityId, RelationId), HashSet<EntityId>>);

impl KnownTails {
    pub fn from_triples<'a>(triples: impl IntoIterator<Item = &'a KnowledgeTriple>) -> Self {
        let mut map: HashMap<_, HashSet<_>> = HashMap::new();
        for t in triples {
            map.entry((t.head, t.relation)).or_default().insert(t.tail);
        }
        KnownTails(map)
    }

    pub fn get(&self, head: EntityId, relation: RelationId) -> Option<&HashSet<EntityId>> {
        self.0.get(&(head, relation))
    }
}

/// Patience rule: an epoch improves iff its loss is strictly below the best
/// so far; training stops once `patience` consecutive epochs fail to improve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best_loss: Option<f64>,
    /// 1-based; 0 before any observation.
    pub best_epoch: usize,
    pub stale: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Progress {
    Improved,
    Stale,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best_loss: None,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> Progress {
        let improved = loss.is_finite() && self.best_loss.is_none_or(|b| loss < b);
        if improved {
            self.best_loss = Some(loss);
            self.best_epoch = epoch;
            self.stale = 0;
            return Progress::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            Progress::Stop
        } else {
            Progress::Stale
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopTrace {
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Replays the stopping rule over a fixed loss sequence.
pub fn early_stopping_trace(losses: &[f64], patience: usize, max_epochs: usize) -> StopTrace {
    let mut stopper = EarlyStopping::new(patience);
    let mut epochs_run = 0;
    for (i, &loss) in losses.iter().take(max_epochs).enumerate() {
        epochs_run = i + 1;
        if stopper.observe(i + 1, loss) == Progress::Stop {
            break;
        }
    }
    StopTrace {
        best_epoch: stopper.best_epoch,
        epochs_run,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

impl EpochRecord {
    /// The loss early stopping watches: validation when present.
    pub fn monitored(&self) -> f64 {
        self.val_loss.unwrap_or(self.train_loss)
    }
}

/// Everything besides parameter values needed to continue a run bitwise.
/// The RNG is a pure function of `(seed, epoch)`, so no generator state is
/// stored beyond the seed and the epoch counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub adam_step: u64,
    pub rng_seed: u64,
    pub stopper: EarlyStopping,
    pub stopped: bool,
    pub history: Vec<EpochRecord>,
}

/// Records one forward pass and the loss of each query against its
/// paired negatives, in the given order.
pub fn query_losses(
    tape: &mut Tape,
    model: &EventKe,
    store: &ParameterStore,
    queries: &[&Query],
    negatives: &[Vec<EntityId>],
    reduction: Reduction,
) -> Result<Vec<NodeId>> {
    let out = model.forward(tape, store)?;
    let scorer = ScorerParams::record(tape, store)?;
    let entities = tape.stack_rows(&out.entities)?;
    queries
        .iter()
        .zip(negatives)
        .map(|(q, neg)| {
            let head = out.entities[q.head.0];
            let rel = out.statics.relation_row(q.relation.0);
            triple_loss(
                tape,
                &model.conve,
                &scorer,
                entities,
                head,
                rel,
                &q.tails,
                neg,
                reduction,
            )
        })
        .collect()
}

/// Negatives for `q` from the stream `(seed, parts)`; with `known`, every
/// known tail of the query is excluded, otherwise only its own tails.
pub fn draw_negatives(
    q: &Query,
    sampler: &NegativeSampler,
    known: Option<&KnownTails>,
    rng_seed: u64,
    parts: &[u64],
) -> Result<Vec<EntityId>> {
    let own: HashSet<EntityId> = q.tails.iter().copied().collect();
    let exclude = known.and_then(|k| k.get(q.head, q.relation)).unwrap_or(&own);
    let mut rng = seed::rng(rng_seed, parts);
    sampler.sample(q.tails[0], Some(exclude), &mut rng)
}

/// One pass over `queries`, one Adam step per batch. Returns the mean
/// per-query loss, evaluated before each batch's update.
///
/// Negatives for a query depend only on `(seed, epoch, query index)`, and
/// each batch is summed in query order, so a single full batch gives the
/// same loss whether or not the order is shuffled.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    model: &EventKe,
    store: &mut ParameterStore,
    queries: &[Query],
    known: &KnownTails,
    config: &TrainConfig,
    epoch: usize,
    adam_step_index: &mut u64,
) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::EmptyInput("training queries".into()));
    }
    let sampler = NegativeSampler::new(model.graph().entity_count(), config.negatives);
    let mut order: Vec<usize> = (0..queries.len()).collect();
    if config.shuffle {
        order.shuffle(&mut seed::rng(config.seed, &[SHUFFLE_STREAM, epoch as u64]));
    }
    let filter = config.filter_negatives.then_some(known);
    let mut total = 0.0;
    for chunk in order.chunks(config.batch_size) {
        let mut idx = chunk.to_vec();
        idx.sort_unstable();
        let batch: Vec<&Query> = idx.iter().map(|&i| &queries[i]).collect();
        let negatives = idx
            .iter()
            .map(|&i| {
                draw_negatives(
                    &queries[i],
                    &sampler,
                    filter,
                    config.seed,
                    &[TRAIN_STREAM, epoch as u64, i as u64],
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mut tape = Tape::new();
        let losses = query_losses(&mut tape, model, store, &batch, &negatives, config.reduction)?;
        let loss = tape.add_n(&losses)?;
        total += losses.iter().map(|&l| tape.value(l).data()[0]).sum::<f64>();
        store.zero_grads();
        tape.backward_into(loss, store)?;
        *adam_step_index += 1;
        adam_step(store, &config.adam, *adam_step_index)?;
    }
    Ok(total / queries.len() as f64)
}

/// Mean per-query loss on `queries` with negatives from a seed fixed for the
/// whole run, so the value only changes when parameters do.
pub fn validation_loss(
    model: &EventKe,
    store: &ParameterStore,
    queries: &[Query],
    known: &KnownTails,
    config: &TrainConfig,
) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::EmptyInput("validation queries".into()));
    }
    let sampler = NegativeSampler::new(model.graph().entity_count(), config.negatives);
    let filter = config.filter_negatives.then_some(known);
    let negatives = (0..queries.len())
        .map(|i| draw_negatives(&queries[i], &sampler, filter, config.seed, &[VALID_STREAM, i as u64]))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Query> = queries.iter().collect();
    let mut tape = Tape::new();
    let losses = query_losses(&mut tape, model, store, &refs, &negatives, config.reduction)?;
    let total: f64 = losses.iter().map(|&l| tape.value(l).data()[0]).sum();
    Ok(total / queries.len() as f64)
}

/// Result of [`Trainer::fit`].
#[derive(Clone, Debug)]
pub struct FitOutcome {
    /// Parameters and state at the best monitored epoch.
    pub best: Checkpoint,
    /// Parameters and state after the final epoch, for resuming.
    pub last: Checkpoint,
    pub history: Vec<EpochRecord>,
}

impl FitOutcome {
    /// `epoch,train_loss,val_loss` rows; an absent validation loss is empty.
    pub fn loss_csv(&self, param_count: usize) -> String {
        loss_csv(&self.history, param_count)
    }
}

pub fn loss_csv(history: &[EpochRecord], param_count: usize) -> String {
    let mut s = format!("# params={param_count}\nepoch,train_loss,val_loss\n");
    for r in history {
        let val = r.val_loss.map(|v| format!("{v:.17e}")).unwrap_or_default();
        s.push_str(&format!("{},{:.17e},{}\n", r.epoch, r.train_loss, val));
    }
    s
}

pub struct Trainer<'a> {
    model: &'a EventKe,
    config: TrainConfig,
    train: Vec<Query>,
    valid: Vec<Query>,
    known: KnownTails,
    store: ParameterStore,
    state: TrainState,
    best: Option<(ParameterStore, TrainState)>,
}

impl<'a> Trainer<'a> {
    /// Starts a fresh run. Negatives for training and validation exclude
    /// every tail seen in either split.
    pub fn new(
        model: &'a EventKe,
        store: ParameterStore,
        train: &[KnowledgeTriple],
        valid: &[KnowledgeTriple],
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::EmptyInput("training triples".into()));
        }
        model.init_params(None)?.check_same_layout(&store)?;
        let state = TrainState {
            epoch: 0,
            adam_step: 0,
            rng_seed: config.seed,
            stopper: EarlyStopping::new(config.patience),
            stopped: false,
            history: Vec::new(),
        };
        Ok(Trainer {
            model,
            known: KnownTails::from_triples(train.iter().chain(valid)),
            train: group_queries(train),
            valid: group_queries(valid),
            config,
            store,
            state,
            best: None,
        })
    }

    /// Continues from `last`. Without `best`, the best epoch is tracked
    /// again from the resume point.
    pub fn resume(
        model: &'a EventKe,
        last: &Checkpoint,
        best: Option<&Checkpoint>,
        train: &[KnowledgeTriple],
        valid: &[KnowledgeTriple],
    ) -> Result<Self> {
        let store = last.restore(model)?;
        let mut t = Trainer::new(model, store, train, valid, last.meta.train.clone())?;
        t.state = last.meta.state.clone();
        if let Some(b) = best {
            t.best = Some((b.restore(model)?, b.meta.state.clone()));
        } else if t.state.stopper.best_epoch == t.state.epoch && t.state.epoch > 0 {
            t.best = Some((t.store.clone(), t.state.clone()));
        }
        Ok(t)
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    /// Runs one epoch and records it. Returns whether training should stop.
    pub fn step_epoch(&mut self) -> Result<bool> {
        if self.state.stopped || self.state.epoch >= self.config.max_epochs {
            return Ok(true);
        }
        let epoch = self.state.epoch + 1;
        let train_loss = train_epoch(
            self.model,
            &mut self.store,
            &self.train,
            &self.known,
            &TrainConfig {
                seed: self.state.rng_seed,
                ..self.config.clone()
            },
            epoch,
            &mut self.state.adam_step,
        )?;
        let val_loss = if self.valid.is_empty() {
            None
        } else {
            Some(validation_loss(
                self.model,
                &self.store,
                &self.valid,
                &self.known,
                &self.config,
            )?)
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
        };
        log::info!(
            "epoch {epoch}: train {train_loss:.6} val {}",
            val_loss.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into())
        );
        self.state.epoch = epoch;
        self.state.history.push(record);
        let progress = self.state.stopper.observe(epoch, record.monitored());
        if progress == Progress::Improved {
            self.best = Some((self.store.clone(), self.state.clone()));
        }
        self.state.stopped = progress == Progress::Stop || epoch >= self.config.max_epochs;
        Ok(self.state.stopped)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.model, &self.config, self.state.clone(), self.store.clone())
    }

    pub fn fit(mut self) -> Result<FitOutcome> {
        while !self.step_epoch()? {}
        let last = self.checkpoint();
        let best = match self.best.take() {
            Some((store, state)) => Checkpoint::new(self.model, &self.config, state, store),
            None => last.clone(),
        };
        Ok(FitOutcome {
            best,
            last,
            history: self.state.history,
        })
    }
}

/// Convenience wrapper: initializes parameters and trains to completion.
pub fn fit(
    model: &EventKe,
    train: &[KnowledgeTriple],
    valid: &[KnowledgeTriple],
    config: TrainConfig,
    init: Option<&crate::data::InitTable>,
) -> Result<FitOutcome> {
    let store = model.init_params(init)?;
    Trainer::new(model, store, train, valid, config)?.fit()
}

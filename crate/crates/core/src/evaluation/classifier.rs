//! Two-layer feed-forward probes over entity vectors.
//!
//! `logits = W₂ · ReLU(W₁ x + b₁) + b₂`, with `x = v_i` for entity typing
//! and `x = [v_h ; v_t]` for relation typing.

use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, ParameterStore, Tape, Tensor};
use crate::data::{split_dataset, EntityId};
use crate::error::{Error, Result};
use crate::layers::{glorot, param_rng, EventKe};
use crate::trainer::{adam_step, AdamConfig};

pub const HEAD_W1: &str = "head/w1";
pub const HEAD_B1: &str = "head/b1";
pub const HEAD_W2: &str = "head/w2";
pub const HEAD_B2: &str = "head/b2";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    /// Hidden width; the embedding dimension when absent.
    pub hidden: Option<usize>,
    pub adam: AdamConfig,
    pub max_epochs: usize,
    pub patience: usize,
    /// Update the embedding model together with the head.
    pub fine_tune: bool,
    pub split: [f64; 3],
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: None,
            adam: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            max_epochs: 100,
            patience: 10,
            fine_tune: true,
            split: [0.8, 0.1, 0.1],
            seed: 0,
        }
    }
}

/// Labelled inputs: single entities or ordered entity pairs.
#[derive(Clone, Debug, PartialEq)]
pub enum ClassificationTask {
    Entity(Vec<(EntityId, usize)>),
    Relation(Vec<(EntityId, EntityId, usize)>),
}

impl ClassificationTask {
    pub fn len(&self) -> usize {
        match self {
            ClassificationTask::Entity(v) => v.len(),
            ClassificationTask::Relation(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Input width for embeddings of dimension `d`.
    pub fn input_width(&self, d: usize) -> usize {
        match self {
            ClassificationTask::Entity(_) => d,
            ClassificationTask::Relation(_) => 2 * d,
        }
    }

    fn label(&self, i: usize) -> usize {
        match self {
            ClassificationTask::Entity(v) => v[i].1,
            ClassificationTask::Relation(v) => v[i].2,
        }
    }

    fn input(&self, tape: &mut Tape, rows: &[NodeId], i: usize) -> Result<NodeId> {
        match self {
            ClassificationTask::Entity(v) => Ok(rows[v[i].0 .0]),
            ClassificationTask::Relation(v) => tape.concat(&[rows[v[i].0 .0], rows[v[i].1 .0]]),
        }
    }

    fn max_entity(&self) -> Option<usize> {
        match self {
            ClassificationTask::Entity(v) => v.iter().map(|x| x.0 .0).max(),
            ClassificationTask::Relation(v) => v.iter().map(|x| x.0 .0.max(x.1 .0)).max(),
        }
    }
}

/// Where entity vectors come from.
pub enum EmbeddingSource<'a> {
    /// A fixed `n × d` table.
    Frozen(&'a Tensor),
    /// The full model; with `fine_tune` its parameters train with the head.
    Model {
        model: &'a EventKe,
        store: &'a ParameterStore,
    },
}

#[derive(Clone, Debug)]
pub struct ClassifierOutcome {
    pub test_accuracy: f64,
    pub validation_accuracy: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub warnings: Vec<String>,
}

#[derive(Clone, Copy, Debug)]
pub struct ClassifierHead {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

impl ClassifierHead {
    /// `W₁` is Glorot-initialized; the output layer starts at zero, so the
    /// initial logits are uniform and no class index is favoured.
    pub fn init(input: usize, hidden: usize, classes: usize, seed: u64, store: &mut ParameterStore) -> Result<()> {
        store.insert(HEAD_W1, glorot(hidden, input, input, hidden, &mut param_rng(seed, HEAD_W1)))?;
        store.insert(HEAD_B1, Tensor::zeros(&[hidden]))?;
        store.insert(HEAD_W2, Tensor::zeros(&[classes, hidden]))?;
        store.insert(HEAD_B2, Tensor::zeros(&[classes]))?;
        Ok(())
    }

    pub fn record(tape: &mut Tape, store: &ParameterStore) -> Result<Self> {
        Ok(ClassifierHead {
            w1: tape.param(store, HEAD_W1)?,
            b1: tape.param(store, HEAD_B1)?,
            w2: tape.param(store, HEAD_W2)?,
            b2: tape.param(store, HEAD_B2)?,
        })
    }

    pub fn logits(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let h = tape.affine(self.w1, x)?;
        let h = tape.add(h, self.b1)?;
        let h = tape.relu(h)?;
        let o = tape.affine(self.w2, h)?;
        tape.add(o, self.b2)
    }
}

fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Mean loss over `items` and the accuracy, on one tape.
fn evaluate_items(
    tape: &mut Tape,
    task: &ClassificationTask,
    rows: &[NodeId],
    head: &ClassifierHead,
    items: &[usize],
) -> Result<(Option<NodeId>, f64)> {
    let mut losses = Vec::with_capacity(items.len());
    let mut correct = 0usize;
    for &i in items {
        let x = task.input(tape, rows, i)?;
        let logits = head.logits(tape, x)?;
        let y = task.label(i);
        if argmax(tape.value(logits).data()) == y {
            correct += 1;
        }
        losses.push(tape.softmax_cross_entropy(logits, y)?);
    }
    if losses.is_empty() {
        return Ok((None, 0.0));
    }
    let total = tape.add_n(&losses)?;
    let mean = tape.scale(total, 1.0 / losses.len() as f64)?;
    Ok((Some(mean), correct as f64 / items.len() as f64))
}

/// Trains a fresh head by full-batch cross-entropy and reports the test
/// accuracy of the epoch with the best validation accuracy (ties broken by
/// lower validation loss). Stops after `patience` epochs without a better
/// validation result.
pub fn train_classifier_head(
    source: EmbeddingSource<'_>,
    task: &ClassificationTask,
    classes: usize,
    config: &ClassifierConfig,
) -> Result<ClassifierOutcome> {
    config.adam.validate()?;
    if classes == 0 {
        return Err(Error::Config("classification needs at least one class".into()));
    }
    if (0..task.len()).any(|i| task.label(i) >= classes) {
        return Err(Error::Invalid(format!("label outside 0..{classes}")));
    }
    let (d, n) = match &source {
        EmbeddingSource::Frozen(t) => (t.shape().get(1).copied().unwrap_or(0), t.rows()),
        EmbeddingSource::Model { model, .. } => (model.config.dim, model.graph().entity_count()),
    };
    if task.max_entity().is_some_and(|m| m >= n) {
        return Err(Error::Invalid("classification item references unknown entity".into()));
    }
    let s = split_dataset(task.len(), (config.split[0], config.split[1], config.split[2]), config.seed)?;
    let sorted = |v: &[usize]| {
        let mut v = v.to_vec();
        v.sort_unstable();
        v
    };
    let (train, valid, test) = (sorted(&s.train), sorted(&s.validation), sorted(&s.test));
    for (name, part) in [("training", &train), ("validation", &valid), ("test", &test)] {
        if part.is_empty() {
            return Err(Error::EmptyInput(format!("{name} split of the classification items")));
        }
    }
    let mut warnings = Vec::new();
    let mut seen = vec![false; classes];
    for &i in &train {
        seen[task.label(i)] = true;
    }
    for (c, s) in seen.iter().enumerate() {
        if !s && (0..task.len()).any(|i| task.label(i) == c) {
            warnings.push(format!("class {c} has no training example"));
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    let hidden = config.hidden.unwrap_or(d).max(1);
    let fine_tune = config.fine_tune && matches!(source, EmbeddingSource::Model { .. });
    let mut store = match (&source, fine_tune) {
        (EmbeddingSource::Model { store, .. }, true) => (*store).clone(),
        _ => ParameterStore::new(),
    };
    ClassifierHead::init(task.input_width(d), hidden, classes, config.seed, &mut store)?;
    let frozen = match &source {
        EmbeddingSource::Frozen(t) => Some((*t).clone()),
        EmbeddingSource::Model { model, store } if !fine_tune => Some(model.entity_embeddings(store)?),
        _ => None,
    };

    let rows_on = |tape: &mut Tape, store: &ParameterStore| -> Result<Vec<NodeId>> {
        match (&frozen, &source) {
            (Some(table), _) => Ok((0..table.rows())
                .map(|i| tape.constant(Tensor::vector(table.row(i).to_vec())))
                .collect()),
            (None, EmbeddingSource::Model { model, .. }) => Ok(model.forward(tape, store)?.entities),
            (None, EmbeddingSource::Frozen(_)) => unreachable!("frozen tables are materialized"),
        }
    };

    let mut best: Option<(f64, f64, usize, ParameterStore)> = None;
    let mut stale = 0;
    let mut epochs_run = 0;
    for epoch in 1..=config.max_epochs {
        epochs_run = epoch;
        let mut tape = Tape::new();
        let rows = rows_on(&mut tape, &store)?;
        let head = ClassifierHead::record(&mut tape, &store)?;
        let (loss, _) = evaluate_items(&mut tape, task, &rows, &head, &train)?;
        store.zero_grads();
        tape.backward_into(loss.expect("training split is non-empty"), &mut store)?;
        adam_step(&mut store, &config.adam, epoch as u64)?;

        let mut tape = Tape::new();
        let rows = rows_on(&mut tape, &store)?;
        let head = ClassifierHead::record(&mut tape, &store)?;
        let (vloss, vacc) = evaluate_items(&mut tape, task, &rows, &head, &valid)?;
        let vloss = tape.value(vloss.expect("validation split is non-empty")).data()[0];
        let better = best
            .as_ref()
            .is_none_or(|(acc, l, _, _)| vacc > *acc || (vacc == *acc && vloss < *l));
        if better {
            best = Some((vacc, vloss, epoch, store.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    let (validation_accuracy, _, best_epoch, best_store) = best.expect("at least one epoch runs");
    let mut tape = Tape::new();
    let rows = rows_on(&mut tape, &best_store)?;
    let head = ClassifierHead::record(&mut tape, &best_store)?;
    let (_, test_accuracy) = evaluate_items(&mut tape, task, &rows, &head, &test)?;
    Ok(ClassifierOutcome {
        test_accuracy,
        validation_accuracy,
        best_epoch,
        epochs_run,
        warnings,
    })
}

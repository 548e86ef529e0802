//! Entity typing probe on the toy dataset: a two-layer head on top of the
//! embeddings, once on frozen vectors and once fine-tuning the model.

use eventke::evaluation::{train_classifier_head, ClassificationTask, ClassifierConfig, EmbeddingSource};
use eventke::fixtures::toy_dataset;
use eventke::layers::{EventKe, ModelConfig};
use eventke::scoring::ConvEConfig;
use eventke::trainer::{fit, TrainConfig};

fn main() -> eventke::Result<()> {
    let ds = toy_dataset(0)?;
    let labels = ds.entity_labels.clone().expect("toy dataset ships labels");
    let model_cfg = ModelConfig { dim: 16, ..ModelConfig::default() };
    let conve = ConvEConfig { rows: 4, cols: 4, filters: 4, ..ConvEConfig::default() };
    let model = EventKe::new(&ds.graph, model_cfg, conve)?;
    let train = TrainConfig { max_epochs: 20, batch_size: 4, negatives: 4, ..TrainConfig::default() };
    let outcome = fit(&model, &ds.train, &ds.valid, train, None)?;
    let store = outcome.best.restore(&model)?;

    let task = ClassificationTask::Entity(labels.items.clone());
    let classes = labels.classes.len();
    // Ten labelled entities: a 60/20/20 split keeps every part non-empty.
    let base = ClassifierConfig { split: [0.6, 0.2, 0.2], ..ClassifierConfig::default() };

    let frozen = model.entity_embeddings(&store)?;
    let probe = train_classifier_head(
        EmbeddingSource::Frozen(&frozen),
        &task,
        classes,
        &ClassifierConfig { fine_tune: false, ..base.clone() },
    )?;
    println!(
        "frozen:     test accuracy {:.2}, best epoch {} of {}",
        probe.test_accuracy, probe.best_epoch, probe.epochs_run
    );
    let tuned = train_classifier_head(EmbeddingSource::Model { model: &model, store: &store }, &task, classes, &base)?;
    println!(
        "fine-tuned: test accuracy {:.2}, best epoch {} of {}",
        tuned.test_accuracy, tuned.best_epoch, tuned.epochs_run
    );
    for w in probe.warnings.iter().chain(&tuned.warnings) {
        println!("warning: {w}");
    }
    Ok(())
}

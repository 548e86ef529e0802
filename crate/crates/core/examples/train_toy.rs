//! Trains on the bundled toy dataset with its shipped configuration,
//! prints the per-epoch losses, then saves and reloads the best checkpoint.

use eventke::cli::RunConfig;
use eventke::fixtures::{toy_dir, TOY_CONFIG};
use eventke::layers::EventKe;
use eventke::trainer::{load_checkpoint, save_checkpoint, Trainer};

fn main() -> eventke::Result<()> {
    let config = RunConfig::from_toml(TOY_CONFIG, "toy config", &toy_dir())?;
    let ds = eventke::data::Dataset::load(&config.data, config.seed)?;
    let model = EventKe::new(&ds.graph, config.model.clone(), config.conve.clone())?;
    let store = model.init_params(None)?;
    println!("{} trainable scalars", store.scalar_count());

    let mut trainer = Trainer::new(&model, store, &ds.train, &ds.valid, config.train.clone())?;
    loop {
        let stop = trainer.step_epoch()?;
        let r = trainer.state().history.last().expect("one epoch ran");
        println!(
            "epoch {:>3}  train {:.5}  valid {}",
            r.epoch,
            r.train_loss,
            r.val_loss.map(|v| format!("{v:.5}")).unwrap_or_else(|| "-".into())
        );
        if stop {
            break;
        }
    }
    let state = trainer.state();
    println!(
        "stopped after {} epochs; best epoch {} (monitored loss {:.5})",
        state.epoch,
        state.stopper.best_epoch,
        state.stopper.best_loss.unwrap_or(f64::NAN)
    );

    let outcome = trainer.fit()?;
    let path = std::env::temp_dir().join("eventke-train-toy.ckpt");
    save_checkpoint(&outcome.best, &path)?;
    let back = load_checkpoint(&path)?;
    assert_eq!(back, outcome.best);
    println!("best checkpoint round-tripped through {}", path.display());
    Ok(())
}

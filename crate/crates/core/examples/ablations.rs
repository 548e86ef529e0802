//! Full model against the random-events and no-events ablations on the
//! event-signal fixture, where held-out couples are linked only through a
//! shared event. Prints parameter counts and filtered test MRR.
//!
//! Usage: `ablations [seed] [epochs]`.

use eventke::evaluation::{kg_completion_eval, EvalConfig};
use eventke::fixtures::{event_signal_fixture, EventSignalShape};
use eventke::layers::{EventKe, ModelConfig};
use eventke::scoring::ConvEConfig;
use eventke::trainer::{fit, KnownTails, TrainConfig};

fn main() -> eventke::Result<()> {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<u64>().ok());
    let seed = args.next().flatten().unwrap_or(0);
    let epochs = args.next().flatten().unwrap_or(40) as usize;
    let ds = event_signal_fixture(seed, EventSignalShape::default()).dataset()?;
    let known = KnownTails::from_triples(ds.train.iter().chain(&ds.valid).chain(&ds.test));

    let base = ModelConfig { seed, ..ModelConfig::default() };
    let variants = [
        ("full", base.clone()),
        ("random_events", ModelConfig { random_events: true, ..base.clone() }),
        ("no_events + no_temporal_links", ModelConfig { no_events: true, no_temporal_links: true, ..base }),
    ];
    for (name, cfg) in variants {
        let model = EventKe::new(&ds.graph, cfg, ConvEConfig::default())?;
        let train = TrainConfig {
            max_epochs: epochs,
            patience: epochs.min(10),
            seed,
            ..TrainConfig::default()
        };
        let outcome = fit(&model, &ds.train, &ds.valid, train, None)?;
        let store = outcome.best.restore(&model)?;
        let eval = EvalConfig { filtered: true, seed, ..EvalConfig::default() };
        let report = kg_completion_eval(&model, &store, &ds.test, &eval, Some(&known))?;
        println!(
            "{name:<30} params {:>7}  epochs {:>3}  test MRR {:.4}  Hits@10 {:.3}",
            store.scalar_count(),
            outcome.history.len(),
            report.mrr,
            report.hits10
        );
    }
    Ok(())
}

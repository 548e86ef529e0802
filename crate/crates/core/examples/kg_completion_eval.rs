//! Trains briefly on the memorization fixture and ranks its training
//! triples under the full, filtered and sampled protocols.

use eventke::evaluation::{kg_completion_eval, EvalConfig, ProtocolKind};
use eventke::fixtures::memorization_fixture;
use eventke::layers::{EventKe, ModelConfig};
use eventke::scoring::ConvEConfig;
use eventke::trainer::{fit, KnownTails, TrainConfig};

fn main() -> eventke::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let ds = memorization_fixture(0).dataset()?;
    let model = EventKe::new(&ds.graph, ModelConfig::default(), ConvEConfig::default())?;
    let config = TrainConfig {
        max_epochs: epochs,
        patience: epochs.min(10),
        ..TrainConfig::default()
    };
    let outcome = fit(&model, &ds.train, &[], config, None)?;
    let store = outcome.best.restore(&model)?;
    let known = KnownTails::from_triples(&ds.train);

    for (name, cfg) in [
        ("full, raw", EvalConfig::default()),
        ("full, filtered", EvalConfig { filtered: true, ..EvalConfig::default() }),
        ("sampled K=20", EvalConfig { protocol: ProtocolKind::Sampled, k: 20, ..EvalConfig::default() }),
    ] {
        let report = kg_completion_eval(&model, &store, &ds.test, &cfg, Some(&known))?;
        println!("{name} ({} queries)\n{}", report.ranks.len(), report.table());
    }
    Ok(())
}

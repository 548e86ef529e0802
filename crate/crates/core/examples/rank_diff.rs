//! Per-query comparison of two models on the same test triples: the
//! no-events ablation (A) against the full model (B), both trained briefly
//! on the toy dataset. Positive improvement means B ranks the gold tail
//! higher.

use eventke::data::Dataset;
use eventke::evaluation::{kg_completion_eval, rank_diff, rank_diff_table, EvalConfig, RankingReport};
use eventke::fixtures::toy_dataset;
use eventke::layers::{EventKe, ModelConfig};
use eventke::scoring::ConvEConfig;
use eventke::trainer::{fit, TrainConfig};

fn report(ds: &Dataset, model_cfg: ModelConfig) -> eventke::Result<RankingReport> {
    let conve = ConvEConfig { rows: 4, cols: 4, filters: 4, ..ConvEConfig::default() };
    let model = EventKe::new(&ds.graph, model_cfg, conve)?;
    let train = TrainConfig { max_epochs: 30, batch_size: 4, negatives: 4, ..TrainConfig::default() };
    let outcome = fit(&model, &ds.train, &ds.valid, train, None)?;
    let store = outcome.best.restore(&model)?;
    // Rank the training triples too, so the table has more than one row.
    let triples: Vec<_> = ds.train.iter().chain(&ds.test).copied().collect();
    kg_completion_eval(&model, &store, &triples, &EvalConfig::default(), None)
}

fn main() -> eventke::Result<()> {
    let ds = toy_dataset(0)?;
    let full = ModelConfig { dim: 16, ..ModelConfig::default() };
    let a = report(&ds, ModelConfig { no_events: true, ..full.clone() })?;
    let b = report(&ds, full)?;
    println!("A: MRR {:.4}   B: MRR {:.4}\n", a.mrr, b.mrr);

    // Reports survive a JSON round trip, which is how the CLI compares runs.
    let a = RankingReport::from_json(&a.to_json()?)?;
    print!("{}", rank_diff_table(&rank_diff(&a, &b)?));
    Ok(())
}

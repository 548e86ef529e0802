//! Finite-difference check of the full training loss on the small
//! gradient fixture (d = 8, two layers, every stage active).

use std::collections::HashSet;
use std::time::Instant;

use eventke::autodiff::grad_check;
use eventke::fixtures::{gradient_fixture, gradient_fixture_config};
use eventke::layers::EventKe;
use eventke::scoring::{NegativeSampler, Reduction};
use eventke::trainer::{draw_negatives, group_queries, query_losses};

fn main() -> eventke::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let ds = gradient_fixture(seed).dataset()?;
    let (model_cfg, conve) = gradient_fixture_config(seed);
    let model = EventKe::new(&ds.graph, model_cfg, conve)?;
    let mut store = model.init_params(None)?;

    let queries = group_queries(&ds.train);
    let sampler = NegativeSampler::new(ds.graph.entity_count(), 4);
    let negatives = queries
        .iter()
        .enumerate()
        .map(|(i, q)| draw_negatives(q, &sampler, None, seed, &[i as u64]))
        .collect::<eventke::Result<Vec<_>>>()?;
    let refs: Vec<_> = queries.iter().collect();

    let start = Instant::now();
    let report = grad_check(
        |tape, store| {
            let losses = query_losses(tape, &model, store, &refs, &negatives, Reduction::Sum)?;
            tape.add_n(&losses)
        },
        &mut store,
        1e-5,
    )?;
    let touched: HashSet<&str> = store
        .iter()
        .filter(|p| p.grad.data().iter().any(|g| *g != 0.0))
        .map(|p| p.name.as_str())
        .collect();
    println!(
        "checked {} scalars across {} parameters ({} with nonzero gradient) in {:.2?}",
        report.checked,
        store.len(),
        touched.len(),
        start.elapsed()
    );
    println!(
        "max relative error {:.3e} at {:?} (analytic {:.6e}, numeric {:.6e})",
        report.max_relative_error, report.worst, report.analytic, report.numeric
    );
    Ok(())
}

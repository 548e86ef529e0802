//! One PASS/FAIL line per acceptance criterion.
//!
//! Exits 0 after reporting unless `EVENTKE_STRICT=1`, in which case any
//! FAIL makes the exit status nonzero.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eventke::autodiff::{circular_correlation, grad_check, Tape};
use eventke::cli::{main_with_args, BEST_CHECKPOINT, LAST_CHECKPOINT, LOSS_LOG};
use eventke::data::{EntityId, KnowledgeTriple, RelationId};
use eventke::evaluation::{candidates, kg_completion_eval, metrics, rank_of_gold, EvalConfig, ProtocolKind};
use eventke::fixtures::{
    event_signal_fixture, gradient_fixture, gradient_fixture_config, memorization_fixture, toy_dataset,
    toy_dir, EventSignalShape,
};
use eventke::layers::{EventKe, ModelConfig};
use eventke::scoring::{ConvEConfig, NegativeSampler, Reduction};
use eventke::trainer::{
    draw_negatives, early_stopping_trace, fit, group_queries, query_losses, KnownTails, StopTrace, TrainConfig,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_integrity() -> Outcome {
    let seed = 0;
    let ds = gradient_fixture(seed).dataset().map_err(|e| e.to_string())?;
    let (model_cfg, conve) = gradient_fixture_config(seed);
    let model = EventKe::new(&ds.graph, model_cfg, conve).map_err(|e| e.to_string())?;
    let mut store = model.init_params(None).map_err(|e| e.to_string())?;
    let queries = group_queries(&ds.train);
    let sampler = NegativeSampler::new(ds.graph.entity_count(), 4);
    let negatives = queries
        .iter()
        .enumerate()
        .map(|(i, q)| draw_negatives(q, &sampler, None, seed, &[i as u64]))
        .collect::<eventke::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let refs: Vec<_> = queries.iter().collect();
    let start = Instant::now();
    let report = grad_check(
        |tape, store| {
            let losses = query_losses(tape, &model, store, &refs, &negatives, Reduction::Sum)?;
            tape.add_n(&losses)
        },
        &mut store,
        1e-5,
    )
    .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check(
        report.max_relative_error < 1e-4 && elapsed < Duration::from_secs(60),
        format!(
            "max relative error {:.3e} over {} scalars (worst {:?}), {:.1?}",
            report.max_relative_error, report.checked, report.worst, elapsed
        ),
    )
}

fn brute_force_corr(a: &[f64], b: &[f64]) -> Vec<f64> {
    let d = a.len();
    (0..d).map(|k| (0..d).map(|i| a[i] * b[(k + i) % d]).sum()).collect()
}

fn circular_correlation_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let mut identity = true;
    for _ in 0..1000 {
        let d = rng.random_range(2..=64);
        let a: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        for (x, y) in circular_correlation(&a, &b).iter().zip(brute_force_corr(&a, &b)) {
            worst = worst.max((x - y).abs());
        }
        let mut e0 = vec![0.0; d];
        e0[0] = 1.0;
        let out = circular_correlation(&e0, &b);
        identity &= out.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
    }
    check(
        worst <= 1e-12 && identity,
        format!("1000 pairs, max |diff| {worst:.2e}, e0 identity bitwise: {identity}"),
    )
}

fn oracle_rank(scores: &[f64], gold: usize) -> f64 {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let g = scores[gold];
    let first = sorted.iter().position(|&s| s == g).unwrap();
    let last = sorted.iter().rposition(|&s| s == g).unwrap();
    (first + last) as f64 / 2.0 + 1.0
}

fn ranking_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut mismatches = 0;
    for m in 0..200 {
        let n = rng.random_range(2..=50);
        let queries = rng.random_range(1..=20);
        let mut ours = Vec::new();
        let mut oracle = Vec::new();
        let mut sampled = Vec::new();
        for _ in 0..queries {
            // Coarse scores so that ties are frequent.
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 * 0.25).collect();
            let gold = rng.random_range(0..n);
            ours.push(rank_of_gold(&scores, gold).map_err(|e| e.to_string())?);
            oracle.push(oracle_rank(&scores, gold));
            let triple = KnowledgeTriple { head: EntityId(0), relation: RelationId(0), tail: EntityId(gold) };
            let cfg = EvalConfig { protocol: ProtocolKind::Sampled, k: n - 1, seed: m, ..EvalConfig::default() };
            let cands = candidates(n, &triple, 0, &cfg, None).map_err(|e| e.to_string())?;
            let picked: Vec<f64> = cands.iter().map(|&c| scores[c]).collect();
            sampled.push(rank_of_gold(&picked, 0).map_err(|e| e.to_string())?);
        }
        let a = metrics(&ours).map_err(|e| e.to_string())?;
        let b = metrics(&oracle).map_err(|e| e.to_string())?;
        let hand = oracle_metrics(&oracle);
        let c = metrics(&sampled).map_err(|e| e.to_string())?;
        if a != b || (b.mr, b.mrr, b.hits10, b.hits20) != hand || a != c {
            mismatches += 1;
        }
    }
    check(mismatches == 0, format!("200 matrices, {mismatches} mismatching"))
}

fn oracle_metrics(ranks: &[f64]) -> (f64, f64, f64, f64) {
    let n = ranks.len() as f64;
    (
        ranks.iter().sum::<f64>() / n,
        ranks.iter().map(|r| 1.0 / r).sum::<f64>() / n,
        ranks.iter().filter(|&&r| r <= 10.0).count() as f64 / n,
        ranks.iter().filter(|&&r| r <= 20.0).count() as f64 / n,
    )
}

fn memorization() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| e.to_string())?;
    pool.install(|| {
        let start = Instant::now();
        let ds = memorization_fixture(0).dataset().map_err(|e| e.to_string())?;
        let model = EventKe::new(&ds.graph, ModelConfig::default(), ConvEConfig::default())
            .map_err(|e| e.to_string())?;
        let outcome = fit(&model, &ds.train, &ds.valid, TrainConfig::default(), None).map_err(|e| e.to_string())?;
        let store = outcome.best.restore(&model).map_err(|e| e.to_string())?;
        let known = KnownTails::from_triples(&ds.train);
        let filtered = EvalConfig { filtered: true, ..EvalConfig::default() };
        let raw = EvalConfig { filtered: false, ..EvalConfig::default() };
        let f = kg_completion_eval(&model, &store, &ds.train, &filtered, Some(&known)).map_err(|e| e.to_string())?;
        let r = kg_completion_eval(&model, &store, &ds.train, &raw, None).map_err(|e| e.to_string())?;
        let elapsed = start.elapsed();
        check(
            f.mrr >= 0.9 && elapsed < Duration::from_secs(300),
            format!(
                "training MRR {:.4} filtered ({:.4} raw), {} epochs, {:.1?}",
                f.mrr,
                r.mrr,
                outcome.history.len(),
                elapsed
            ),
        )
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn event_signal() -> Outcome {
    let mut runs = [Vec::new(), Vec::new(), Vec::new()];
    for seed in 0..3u64 {
        let ds = event_signal_fixture(seed, EventSignalShape::default()).dataset().map_err(|e| e.to_string())?;
        let known = KnownTails::from_triples(ds.train.iter().chain(&ds.valid).chain(&ds.test));
        let base = ModelConfig { seed, ..ModelConfig::default() };
        let variants = [
            base.clone(),
            ModelConfig { random_events: true, ..base.clone() },
            ModelConfig { no_events: true, no_temporal_links: true, ..base },
        ];
        for (slot, cfg) in variants.into_iter().enumerate() {
            let model = EventKe::new(&ds.graph, cfg, ConvEConfig::default()).map_err(|e| e.to_string())?;
            let train = TrainConfig { seed, ..TrainConfig::default() };
            let outcome = fit(&model, &ds.train, &ds.valid, train, None).map_err(|e| e.to_string())?;
            let store = outcome.best.restore(&model).map_err(|e| e.to_string())?;
            let eval = EvalConfig { filtered: true, seed, ..EvalConfig::default() };
            let report = kg_completion_eval(&model, &store, &ds.test, &eval, Some(&known)).map_err(|e| e.to_string())?;
            runs[slot].push(report.mrr);
        }
    }
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join("/");
    let detail = format!(
        "test MRR per seed full {} random_events {} no_events {}",
        fmt(&runs[0]),
        fmt(&runs[1]),
        fmt(&runs[2])
    );
    let [full, random, none] = runs.map(median);
    check(
        full > random && full >= none && random >= none,
        format!("medians full {full:.4} random_events {random:.4} no_events {none:.4}; {detail}"),
    )
}

fn parameter_count() -> Outcome {
    let ds = toy_dataset(0).map_err(|e| e.to_string())?;
    let count = |cfg: ModelConfig| -> Result<usize, String> {
        let m = EventKe::new(&ds.graph, cfg, ConvEConfig::default()).map_err(|e| e.to_string())?;
        Ok(m.init_params(None).map_err(|e| e.to_string())?.scalar_count())
    };
    let full = count(ModelConfig::default())?;
    let random = count(ModelConfig { random_events: true, ..ModelConfig::default() })?;
    check(full == random, format!("full {full}, random_events {random}"))
}

fn mixing_identities() -> Outcome {
    let ds = toy_dataset(0).map_err(|e| e.to_string())?;
    let run = |cfg: ModelConfig, store: &eventke::autodiff::ParameterStore| {
        let m = EventKe::new(&ds.graph, cfg, ConvEConfig::default()).unwrap();
        let mut t = Tape::new();
        let out = m.forward(&mut t, store).unwrap();
        let bits = |ids: &[eventke::autodiff::NodeId]| -> Vec<u64> {
            ids.iter().flat_map(|&n| t.value(n).data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()).collect()
        };
        let events: Vec<u64> = out
            .layers
            .iter()
            .flat_map(|l| l.events_tilde.as_ref().map(|e| bits(&e.events)).unwrap_or_default())
            .collect();
        (events, bits(&out.entities))
    };
    let reference = EventKe::new(&ds.graph, ModelConfig::default(), ConvEConfig::default())
        .and_then(|m| m.init_params(None))
        .map_err(|e| e.to_string())?;
    let gamma0 = run(ModelConfig { gamma: 0.0, ..ModelConfig::default() }, &reference);
    let no_temporal = run(ModelConfig { no_temporal_links: true, ..ModelConfig::default() }, &reference);
    let eps0 = run(ModelConfig { epsilon: 0.0, ..ModelConfig::default() }, &reference);
    let no_events = run(ModelConfig { no_events: true, ..ModelConfig::default() }, &reference);
    let g = !gamma0.0.is_empty() && gamma0.0 == no_temporal.0;
    let e = eps0.1 == no_events.1;
    check(g && e, format!("gamma=0 events bitwise: {g}; epsilon=0 V^L bitwise: {e}"))
}

fn train_once(out: &Path) -> Result<(), String> {
    let config = toy_dir().join("config.toml");
    let mut stdout = Vec::new();
    let mut stderr = Vec::new();
    let args = ["eventke", "train", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    match main_with_args(args, &mut stdout, &mut stderr) {
        0 => Ok(()),
        code => Err(format!("train exited {code}: {}", String::from_utf8_lossy(&stderr))),
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    train_once(&a)?;
    train_once(&b)?;
    let mut differing = Vec::new();
    for f in [LOSS_LOG, BEST_CHECKPOINT, LAST_CHECKPOINT] {
        let x = std::fs::read(a.join(f)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.join(f)).map_err(|e| e.to_string())?;
        if x != y {
            differing.push(f);
        }
    }
    check(differing.is_empty(), format!("two train runs on the toy config; differing files: {differing:?}"))
}

fn early_stopping() -> Outcome {
    let mut seq = vec![3.0, 2.0, 2.5, 2.6];
    seq.extend(std::iter::repeat_n(2.6, 20));
    let t = early_stopping_trace(&seq, 2, 200);
    check(
        t == StopTrace { best_epoch: 2, epochs_run: 4 },
        format!("best epoch {}, stopped after {} epochs", t.best_epoch, t.epochs_run),
    )
}

/// Extra property sweep over the ranking oracle with shrinking, so a
/// failure reports a minimal score vector.
fn ranking_property() -> Outcome {
    let mut runner = TestRunner::new(Config { cases: 500, failure_persistence: None, ..Config::default() });
    let strategy = (2..=50usize).prop_flat_map(|n| (prop::collection::vec(0..6i32, n), 0..n));
    runner
        .run(&strategy, |(scores, gold)| {
            let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
            prop_assert_eq!(rank_of_gold(&scores, gold).unwrap(), oracle_rank(&scores, gold));
            Ok(())
        })
        .map(|_| "500 shrinking cases".to_string())
        .map_err(|e| e.to_string())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient integrity", gradient_integrity),
        ("circular correlation oracle", circular_correlation_oracle),
        ("ranking-metric oracle", ranking_oracle),
        ("ranking-metric property sweep", ranking_property),
        ("memorization fixture", memorization),
        ("event-signal ablation", event_signal),
        ("parameter-count equality", parameter_count),
        ("degenerate-mixing identities", mixing_identities),
        ("determinism", determinism),
        ("early-stopping trace", early_stopping),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        match outcome {
            Ok(d) => println!("PASS {name}: {d} [{:.1?}]", start.elapsed()),
            Err(d) => {
                failed += 1;
                println!("FAIL {name}: {d} [{:.1?}]", start.elapsed());
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 && std::env::var("EVENTKE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}

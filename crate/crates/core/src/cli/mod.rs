//! The `eventke` command line: one TOML run configuration drives
//! training, evaluation and graph inspection.

mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

pub use config::{EvalSection, EvalSplit, RunConfig};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::{
    kg_completion_eval, rank_diff, rank_diff_table, train_classifier_head, ClassificationTask,
    EmbeddingSource, RankingReport,
};
use crate::layers::EventKe;
use crate::trainer::{
    load_checkpoint, save_checkpoint, Checkpoint, KnownTails, Trainer,
};

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const LOSS_LOG: &str = "loss.csv";
pub const CONFIG_ECHO: &str = "config.toml";
pub const REPORT: &str = "report.json";
pub const CLASSIFICATION_REPORT: &str = "classification.json";

#[derive(Debug, Parser)]
#[command(name = "eventke", version, about = "Event-enhanced knowledge graph embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoints, the loss log and the effective config.
    Train(RunArgs),
    /// Rank held-out triples and run the classification probes.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Defaults to `<out>/best.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print entity, relation-edge, event and argument-link counts.
    GraphInspect {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare the per-query ranks of two reports.
    RankDiff { a: PathBuf, b: PathBuf },
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut config = RunConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            config.set_seed(seed);
        }
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        config.validate()?;
        config.check_inputs()?;
        Ok(config)
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn io_out(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn load_dataset(config: &RunConfig) -> Result<Dataset> {
    let ds = Dataset::load(&config.data, config.seed)?;
    for w in &ds.warnings {
        log::warn!("{w}");
    }
    Ok(ds)
}

/// Trains per `config` and writes the run artifacts into `config.out_dir`.
pub fn train(config: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let ds = load_dataset(config)?;
    let model = EventKe::new(&ds.graph, config.model.clone(), config.conve.clone())?;
    let store = model.init_params(ds.init.as_ref())?;
    let params = store.scalar_count();
    let outcome = Trainer::new(&model, store, &ds.train, &ds.valid, config.train.clone())?.fit()?;

    let dir = &config.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_checkpoint(&outcome.best, &dir.join(BEST_CHECKPOINT))?;
    save_checkpoint(&outcome.last, &dir.join(LAST_CHECKPOINT))?;
    write_file(&dir.join(LOSS_LOG), outcome.loss_csv(params).as_bytes())?;
    write_file(&dir.join(CONFIG_ECHO), config.to_toml()?.as_bytes())?;

    let best = &outcome.best.meta.state;
    writeln!(
        out,
        "trained {} epochs, best epoch {}, params={params}; artifacts in {}",
        outcome.history.len(),
        best.stopper.best_epoch,
        dir.display()
    )
    .map_err(io_out)
}

#[derive(Debug, Serialize)]
struct ClassificationReport {
    entity_accuracy: Option<f64>,
    relation_accuracy: Option<f64>,
}

/// Evaluates `checkpoint` on the data in `config`. The architecture comes
/// from the checkpoint; the data and protocol from the config.
pub fn eval(config: &RunConfig, checkpoint: &Path, out: &mut dyn Write) -> Result<()> {
    let ckpt: Checkpoint = load_checkpoint(checkpoint)?;
    let ds = load_dataset(config)?;
    let model = EventKe::new(&ds.graph, ckpt.meta.model.clone(), ckpt.meta.conve.clone())?;
    let store = ckpt.restore(&model)?;

    let triples = match config.eval.triples {
        EvalSplit::Train => &ds.train,
        EvalSplit::Valid => &ds.valid,
        EvalSplit::Test => &ds.test,
    };
    let known = KnownTails::from_triples(ds.train.iter().chain(&ds.valid).chain(&ds.test));
    let eval_config = config.eval_config();
    let report = kg_completion_eval(&model, &store, triples, &eval_config, Some(&known))?;

    let dir = &config.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join(REPORT), report.to_json()?.as_bytes())?;
    write!(out, "{}", report.table()).map_err(io_out)?;

    if !config.eval.classify || (ds.entity_labels.is_none() && ds.relation_labels.is_none()) {
        return Ok(());
    }
    let source = || EmbeddingSource::Model {
        model: &model,
        store: &store,
    };
    let entity_accuracy = match &ds.entity_labels {
        Some(l) => {
            let task = ClassificationTask::Entity(l.items.clone());
            Some(train_classifier_head(source(), &task, l.classes.len(), &config.classifier)?.test_accuracy)
        }
        None => None,
    };
    let relation_accuracy = match &ds.relation_labels {
        Some(l) => {
            let task = ClassificationTask::Relation(l.items.clone());
            Some(train_classifier_head(source(), &task, l.classes.len(), &config.classifier)?.test_accuracy)
        }
        None => None,
    };
    let cls = ClassificationReport {
        entity_accuracy,
        relation_accuracy,
    };
    let json = serde_json::to_string_pretty(&cls)
        .map_err(|e| Error::Invalid(format!("cannot serialize classification report: {e}")))?;
    write_file(&dir.join(CLASSIFICATION_REPORT), json.as_bytes())?;
    let pct = |a: Option<f64>| a.map(|v| format!("{:.2}", 100.0 * v)).unwrap_or_else(|| "-".into());
    writeln!(out, "{:>8} {:>8}", "Ents", "Rels").map_err(io_out)?;
    writeln!(out, "{:>8} {:>8}", pct(entity_accuracy), pct(relation_accuracy)).map_err(io_out)
}

pub fn graph_inspect(config: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let ds = load_dataset(config)?;
    let c = ds.counts();
    writeln!(out, "{:>10} {:>10} {:>10} {:>10}", "Entities", "Rels", "Events", "Args").map_err(io_out)?;
    writeln!(
        out,
        "{:>10} {:>10} {:>10} {:>10}",
        c.entities, c.relation_edges, c.events, c.argument_links
    )
    .map_err(io_out)
}

pub fn rank_diff_files(a: &Path, b: &Path, out: &mut dyn Write) -> Result<()> {
    let read = |p: &Path| -> Result<RankingReport> {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        RankingReport::from_json(&text).map_err(|e| Error::Invalid(format!("{}: {e}", p.display())))
    };
    let rows = rank_diff(&read(a)?, &read(b)?)?;
    write!(out, "{}", rank_diff_table(&rows)).map_err(io_out)
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Train(args) => train(&args.load()?, out),
        Command::Eval { run, checkpoint } => {
            let config = run.load()?;
            let path = checkpoint
                .clone()
                .unwrap_or_else(|| config.out_dir.join(BEST_CHECKPOINT));
            eval(&config, &path, out)
        }
        Command::GraphInspect { config } => {
            let config = RunConfig::load(config)?;
            config.check_inputs()?;
            graph_inspect(&config, out)
        }
        Command::RankDiff { a, b } => rank_diff_files(a, b, out),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
/// Failures print a single `error: ...` line to `err`.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = write!(out, "{e}");
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .map(|l| l.trim().trim_start_matches("error:").trim())
                .find(|l| !l.is_empty())
                .unwrap_or("invalid arguments");
            let _ = writeln!(err, "error: {first}");
            return 2;
        }
    };
    match run(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}

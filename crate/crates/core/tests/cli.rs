use std::path::{Path, PathBuf};

use eventke::cli::{main_with_args, BEST_CHECKPOINT, CONFIG_ECHO, LAST_CHECKPOINT, LOSS_LOG, REPORT};
use eventke::fixtures::toy_dir;

struct Run {
    code: i32,
    out: String,
    err: String,
}

fn eventke(args: &[&str]) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("eventke").chain(args.iter().copied());
    let code = main_with_args(argv, &mut out, &mut err);
    Run {
        code,
        out: String::from_utf8(out).unwrap(),
        err: String::from_utf8(err).unwrap(),
    }
}

/// A toy config with absolute data paths and a short schedule.
fn toy_config(dir: &Path, extra: &str) -> PathBuf {
    let toy = toy_dir();
    let text = format!(
        r#"seed = 7
out_dir = "{out}"

[data]
triples = "{toy}/triples.tsv"
events = "{toy}/events.jsonl"
temporal = "{toy}/temporal.tsv"
entity_labels = "{toy}/labels.tsv"

[conve]
rows = 2
cols = 4
filters = 2
kernel = 2

[train]
max_epochs = 3
patience = 3
batch_size = 4
negatives = 4
{extra}
"#,
        out = dir.join("run").display(),
        toy = toy.display(),
    );
    let text = text.replacen("[conve]", "[model]\ndim = 8\n\n[conve]", 1);
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn graph_inspect_prints_toy_counts() {
    let r = eventke(&["graph-inspect", "--config", s(&toy_dir().join("config.toml"))]);
    assert_eq!(r.code, 0, "{}", r.err);
    let row: Vec<&str> = r.out.lines().nth(1).unwrap().split_whitespace().collect();
    assert_eq!(row, ["10", "12", "4", "9"]);
}

#[test]
fn empty_events_file_counts_zero_events() {
    let dir = tempfile::tempdir().unwrap();
    let events = dir.path().join("none.jsonl");
    std::fs::write(&events, "").unwrap();
    let cfg = format!(
        "[data]\ntriples = \"{}\"\nevents = \"{}\"\n",
        toy_dir().join("triples.tsv").display(),
        events.display()
    );
    let path = dir.path().join("c.toml");
    std::fs::write(&path, cfg).unwrap();
    let r = eventke(&["graph-inspect", "--config", s(&path)]);
    assert_eq!(r.code, 0, "{}", r.err);
    let row: Vec<&str> = r.out.lines().nth(1).unwrap().split_whitespace().collect();
    assert_eq!(&row[2..], ["0", "0"]);
}

#[test]
fn train_then_eval_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path(), "");
    let r = eventke(&["train", "--config", s(&cfg)]);
    assert_eq!(r.code, 0, "{}", r.err);
    let run = dir.path().join("run");
    for f in [BEST_CHECKPOINT, LAST_CHECKPOINT, LOSS_LOG, CONFIG_ECHO] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let csv = std::fs::read_to_string(run.join(LOSS_LOG)).unwrap();
    assert!(csv.starts_with("# params="));
    assert_eq!(csv.lines().count(), 2 + 3);

    let r = eventke(&["eval", "--config", s(&cfg)]);
    assert_eq!(r.code, 0, "{}", r.err);
    assert!(run.join(REPORT).is_file());
    assert!(r.out.contains("MRR"), "{}", r.out);
}

#[test]
fn missing_checkpoint_fails_with_one_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path(), "");
    let missing = dir.path().join("nope.ckpt");
    let r = eventke(&["eval", "--config", s(&cfg), "--checkpoint", s(&missing)]);
    assert_ne!(r.code, 0);
    assert_eq!(r.err.lines().count(), 1);
    assert!(r.err.starts_with("error:") && r.err.contains("nope.ckpt"), "{}", r.err);
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let r = eventke(&["frobnicate"]);
    assert_eq!(r.code, 2);
    assert!(r.err.starts_with("error:"));
}

#[test]
fn cli_training_is_reproducible_byte_for_byte() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let r = eventke(&["train", "--config", s(&toy_config(d.path(), ""))]);
        assert_eq!(r.code, 0, "{}", r.err);
    }
    for f in [BEST_CHECKPOINT, LAST_CHECKPOINT, LOSS_LOG] {
        let x = std::fs::read(a.path().join("run").join(f)).unwrap();
        let y = std::fs::read(b.path().join("run").join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
}

fn params_header(dir: &Path) -> String {
    let csv = std::fs::read_to_string(dir.join("run").join(LOSS_LOG)).unwrap();
    csv.lines().next().unwrap().to_string()
}

#[test]
fn ablated_run_reports_the_same_parameter_count() {
    let full = tempfile::tempdir().unwrap();
    let none = tempfile::tempdir().unwrap();
    let cfg = toy_config(full.path(), "");
    assert_eq!(eventke(&["train", "--config", s(&cfg), "--seed", "1"]).code, 0);
    let cfg = toy_config(none.path(), "").to_str().unwrap().to_string();
    let text = std::fs::read_to_string(&cfg).unwrap().replacen("dim = 8", "dim = 8\nno_events = true", 1);
    std::fs::write(&cfg, text).unwrap();
    assert_eq!(eventke(&["train", "--config", &cfg, "--seed", "1"]).code, 0);
    assert_eq!(params_header(full.path()), params_header(none.path()));
}

#[test]
fn sampled_protocol_with_every_negative_matches_full() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path();
    std::fs::write(data.join("t.tsv"), "a\tr\tb\nb\tr\tc\nc\ts\td\nd\ts\te\ne\tr\tf\nf\ts\ta\n").unwrap();
    std::fs::write(data.join("test.tsv"), "a\ts\tc\nb\ts\te\n").unwrap();
    let write_cfg = |name: &str, eval: &str| {
        let text = format!(
            "out_dir = \"{out}\"\n[data]\ntriples = \"{d}/t.tsv\"\nvalid_triples = \"{d}/test.tsv\"\ntest_triples = \"{d}/test.tsv\"\n\
             [model]\ndim = 8\n[conve]\nrows = 2\ncols = 4\nfilters = 2\nkernel = 2\n\
             [train]\nmax_epochs = 2\npatience = 2\nnegatives = 3\n[eval]\n{eval}\n",
            out = data.join("run").display(),
            d = data.display(),
        );
        let p = data.join(name);
        std::fs::write(&p, text).unwrap();
        p
    };
    let full = write_cfg("full.toml", "protocol = \"full\"");
    let sampled = write_cfg("sampled.toml", "protocol = \"sampled\"\nk = 5");
    assert_eq!(eventke(&["train", "--config", s(&full)]).code, 0);

    let r_full = eventke(&["eval", "--config", s(&full)]);
    assert_eq!(r_full.code, 0, "{}", r_full.err);
    let report_full = std::fs::read_to_string(data.join("run").join(REPORT)).unwrap();
    let r_sampled = eventke(&["eval", "--config", s(&sampled)]);
    assert_eq!(r_sampled.code, 0, "{}", r_sampled.err);
    let report_sampled = std::fs::read_to_string(data.join("run").join(REPORT)).unwrap();

    let ranks = |text: &str| {
        let v: serde_json::Value = serde_json::from_str(text).unwrap();
        v["ranks"].clone()
    };
    assert_eq!(ranks(&report_full), ranks(&report_sampled));
}

#[test]
fn rank_diff_compares_two_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path(), "");
    assert_eq!(eventke(&["train", "--config", s(&cfg)]).code, 0);
    let run = dir.path().join("run");
    assert_eq!(eventke(&["eval", "--config", s(&cfg)]).code, 0);
    let a = dir.path().join("a.json");
    std::fs::rename(run.join(REPORT), &a).unwrap();
    assert_eq!(eventke(&["eval", "--config", s(&cfg), "--checkpoint", s(&run.join(LAST_CHECKPOINT))]).code, 0);

    let r = eventke(&["rank-diff", s(&a), s(&run.join(REPORT))]);
    assert_eq!(r.code, 0, "{}", r.err);
    assert!(!r.out.trim().is_empty());

    let r = eventke(&["rank-diff", s(&a), s(&dir.path().join("absent.json"))]);
    assert_eq!(r.code, 1);
}

//! End-to-end tests of the lexhmm binary: every subcommand, artifact
//! formats, determinism, and error handling.

mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::{planted_test_text, planted_train_text};
use lexhmm::corpus::parse_tagged_text;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lexhmm"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let output = cmd.output().expect("binary runs");
    assert!(
        output.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn run_err(cmd: &mut Command) -> Output {
    let output = cmd.output().expect("binary runs");
    assert!(
        !output.status.success(),
        "command unexpectedly succeeded\nstdout: {}",
        String::from_utf8_lossy(&output.stdout)
    );
    output
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    corpus: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let corpus = root.join("corpus.txt");
        std::fs::write(&corpus, planted_train_text() + &planted_test_text()).unwrap();
        Workspace {
            _dir: dir,
            root,
            corpus,
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

fn train(ws: &Workspace, out: &Path, extra: &[&str]) {
    let mut cmd = bin();
    cmd.args([
        "train",
        "--corpus",
        ws.corpus.to_str().unwrap(),
        "--test-fraction",
        "0.2",
        "--seed",
        "7",
        "--min-count",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);
    cmd.args(extra);
    run_ok(&mut cmd);
}

#[test]
fn full_workflow_produces_consistent_artifacts() {
    let ws = Workspace::new();
    let base = ws.path("base.model");
    let test_file = ws.path("test.txt");
    let train_file = ws.path("train.txt");
    train(
        &ws,
        &base,
        &[
            "--write-test",
            test_file.to_str().unwrap(),
            "--write-train",
            train_file.to_str().unwrap(),
        ],
    );
    assert!(base.exists() && test_file.exists() && train_file.exists());

    // Ranking: header, descending deviations, planted word on top.
    let ranking_csv = ws.path("ranking.csv");
    let histogram_csv = ws.path("histogram.csv");
    run_ok(bin().args([
        "rank",
        "--model",
        base.to_str().unwrap(),
        "--min-count",
        "10",
        "--out",
        ranking_csv.to_str().unwrap(),
        "--histogram",
        histogram_csv.to_str().unwrap(),
    ]));
    let ranking = std::fs::read_to_string(&ranking_csv).unwrap();
    let mut lines = ranking.lines();
    assert_eq!(lines.next().unwrap(), "rank,category,word,count,deviation");
    let mut previous = f64::INFINITY;
    let mut top_pair = None;
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 5);
        assert_eq!(fields[0], (i + 1).to_string());
        let deviation: f64 = fields[4].parse().unwrap();
        assert!(deviation <= previous, "ranking not descending at {line}");
        previous = deviation;
        if i == 0 {
            top_pair = Some((fields[1].to_string(), fields[2].to_string()));
        }
    }
    assert_eq!(top_pair, Some(("D".to_string(), "out".to_string())));
    let histogram = std::fs::read_to_string(&histogram_csv).unwrap();
    assert_eq!(
        histogram.lines().next().unwrap(),
        "bucket_low,bucket_high,count"
    );
    assert_eq!(histogram.lines().count(), 201);

    // Splits in both modes from the same base model.
    let full = ws.path("full.model");
    let pseudo = ws.path("pseudo.model");
    run_ok(bin().args([
        "split",
        "--model",
        base.to_str().unwrap(),
        "--mode",
        "full",
        "--top",
        "1",
        "--out",
        full.to_str().unwrap(),
    ]));
    run_ok(bin().args([
        "split",
        "--model",
        base.to_str().unwrap(),
        "--mode",
        "pseudo",
        "--top",
        "1",
        "--out",
        pseudo.to_str().unwrap(),
    ]));

    // Tagged output re-parses and mirrors the input tokens.
    let plain = ws.path("plain.txt");
    std::fs::write(&plain, "dog out runs\nthe dog sits\nbrandnew dog\n").unwrap();
    let tagged = ws.path("tagged.txt");
    run_ok(bin().args([
        "tag",
        "--model",
        full.to_str().unwrap(),
        "--input",
        plain.to_str().unwrap(),
        "--output",
        tagged.to_str().unwrap(),
    ]));
    let tagged_text = std::fs::read_to_string(&tagged).unwrap();
    let tagged_corpus = parse_tagged_text(&tagged_text).unwrap();
    assert_eq!(tagged_corpus.sentence_count(), 3);
    let words: Vec<String> = tagged_corpus.sentences()[0]
        .words()
        .map(String::from)
        .collect();
    assert_eq!(words, ["dog", "out", "runs"]);

    // Evaluation with a baseline and confusion table.
    let report_txt = ws.path("report.txt");
    let confusion_csv = ws.path("confusion.csv");
    run_ok(bin().args([
        "eval",
        "--model",
        full.to_str().unwrap(),
        "--test",
        test_file.to_str().unwrap(),
        "--report",
        report_txt.to_str().unwrap(),
        "--confusion",
        confusion_csv.to_str().unwrap(),
        "--baseline",
        base.to_str().unwrap(),
    ]));
    let report = std::fs::read_to_string(&report_txt).unwrap();
    assert!(report.contains("accuracy: "));
    assert!(report.contains("z statistic: "));
    let confusion = std::fs::read_to_string(&confusion_csv).unwrap();
    assert_eq!(confusion.lines().next().unwrap(), "gold,predicted,count");
    let confusion_total: usize = confusion
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
        .sum();
    let test_tokens = parse_tagged_text(&std::fs::read_to_string(&test_file).unwrap())
        .unwrap()
        .token_count();
    assert_eq!(confusion_total, test_tokens);

    // Sweep over the same split as train: its K=0 row must agree with a
    // standalone evaluation of the base model on the written test half.
    let sweep_csv = ws.path("sweep.csv");
    run_ok(bin().args([
        "sweep",
        "--corpus",
        ws.corpus.to_str().unwrap(),
        "--grid",
        "0:2:1",
        "--modes",
        "full,pseudo",
        "--seed",
        "7",
        "--test-fraction",
        "0.2",
        "--min-count",
        "10",
        "--out",
        sweep_csv.to_str().unwrap(),
    ]));
    let base_report = ws.path("base_report.txt");
    let eval_out = run_ok(bin().args([
        "eval",
        "--model",
        base.to_str().unwrap(),
        "--test",
        test_file.to_str().unwrap(),
        "--report",
        base_report.to_str().unwrap(),
    ]));
    let eval_stdout = String::from_utf8(eval_out.stdout).unwrap();
    let fraction = eval_stdout
        .split('(')
        .nth(1)
        .unwrap()
        .split(')')
        .next()
        .unwrap()
        .to_string();
    let sweep_text = std::fs::read_to_string(&sweep_csv).unwrap();
    let mut sweep_lines = sweep_text.lines();
    assert_eq!(sweep_lines.next().unwrap(), "mode,k,accuracy,correct,total");
    let rows: Vec<Vec<String>> = sweep_lines
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    assert_eq!(rows.len(), 6);
    for row in rows.iter().filter(|r| r[1] == "0") {
        assert_eq!(format!("{}/{}", row[3], row[4]), fraction);
    }
}

#[test]
fn training_runs_are_reproducible() {
    let ws = Workspace::new();
    let a = ws.path("a.model");
    let b = ws.path("b.model");
    train(&ws, &a, &[]);
    train(&ws, &b, &[]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn explicit_counts_match_auto_resolution() {
    let ws = Workspace::new();
    let base = ws.path("base.model");
    let train_file = ws.path("train.txt");
    train(&ws, &base, &["--write-train", train_file.to_str().unwrap()]);

    let auto_csv = ws.path("auto.csv");
    let corpus_csv = ws.path("from_corpus.csv");
    let train_csv = ws.path("from_train.csv");
    run_ok(bin().args([
        "rank",
        "--model",
        base.to_str().unwrap(),
        "--out",
        auto_csv.to_str().unwrap(),
    ]));
    run_ok(bin().args([
        "rank",
        "--model",
        base.to_str().unwrap(),
        "--counts",
        ws.corpus.to_str().unwrap(),
        "--out",
        corpus_csv.to_str().unwrap(),
    ]));
    run_ok(bin().args([
        "rank",
        "--model",
        base.to_str().unwrap(),
        "--counts",
        train_file.to_str().unwrap(),
        "--out",
        train_csv.to_str().unwrap(),
    ]));
    let auto = std::fs::read(&auto_csv).unwrap();
    assert_eq!(auto, std::fs::read(&corpus_csv).unwrap());
    assert_eq!(auto, std::fs::read(&train_csv).unwrap());
}

#[test]
fn corpus_digest_mismatch_is_detected() {
    let ws = Workspace::new();
    let base = ws.path("base.model");
    train(&ws, &base, &[]);
    let other = ws.path("other.txt");
    std::fs::write(
        &other,
        "completely/A different/B corpus/A\nmore/B words/A here/B\nyet/A another/B line/A\nfinal/B row/A\n",
    )
    .unwrap();
    let out = run_err(bin().args([
        "rank",
        "--model",
        base.to_str().unwrap(),
        "--counts",
        other.to_str().unwrap(),
        "--out",
        ws.path("r.csv").to_str().unwrap(),
    ]));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("digest mismatch"), "stderr: {stderr}");
}

#[test]
fn invalid_usage_fails_cleanly() {
    let ws = Workspace::new();
    let base = ws.path("base.model");
    train(&ws, &base, &[]);

    // Selection flags: exactly one of --top/--theta.
    let missing = run_err(bin().args([
        "split",
        "--model",
        base.to_str().unwrap(),
        "--mode",
        "full",
        "--out",
        ws.path("x.model").to_str().unwrap(),
    ]));
    assert_eq!(missing.status.code(), Some(2));
    let both = run_err(bin().args([
        "split",
        "--model",
        base.to_str().unwrap(),
        "--mode",
        "full",
        "--top",
        "1",
        "--theta",
        "0.5",
        "--out",
        ws.path("x.model").to_str().unwrap(),
    ]));
    assert_eq!(both.status.code(), Some(2));

    // Missing model file: named in the error.
    let missing_model = run_err(bin().args([
        "eval",
        "--model",
        ws.path("nope.model").to_str().unwrap(),
        "--test",
        ws.corpus.to_str().unwrap(),
        "--report",
        ws.path("r.txt").to_str().unwrap(),
    ]));
    let stderr = String::from_utf8(missing_model.stderr).unwrap();
    assert!(stderr.contains("nope.model"), "stderr: {stderr}");

    // Bad sweep grid.
    let bad_grid = run_err(bin().args([
        "sweep",
        "--corpus",
        ws.corpus.to_str().unwrap(),
        "--grid",
        "5:1:1",
        "--out",
        ws.path("s.csv").to_str().unwrap(),
    ]));
    assert_eq!(bad_grid.status.code(), Some(1));

    // Out-of-range test fraction.
    let bad_fraction = run_err(bin().args([
        "train",
        "--corpus",
        ws.corpus.to_str().unwrap(),
        "--test-fraction",
        "1.5",
        "--out",
        ws.path("m.model").to_str().unwrap(),
    ]));
    assert_eq!(bad_fraction.status.code(), Some(1));
}

#[test]
fn thread_count_env_is_honored() {
    let ws = Workspace::new();
    let out_csv = ws.path("sweep.csv");
    run_ok(
        bin()
            .env("LEXHMM_THREADS", "1")
            .args([
                "sweep",
                "--corpus",
                ws.corpus.to_str().unwrap(),
                "--grid",
                "0:1:1",
                "--modes",
                "pseudo",
                "--seed",
                "7",
                "--out",
                out_csv.to_str().unwrap(),
            ]),
    );
    assert!(out_csv.exists());

    let bad = run_err(
        bin()
            .env("LEXHMM_THREADS", "abc")
            .args([
                "sweep",
                "--corpus",
                ws.corpus.to_str().unwrap(),
                "--grid",
                "0:1:1",
                "--out",
                ws.path("s2.csv").to_str().unwrap(),
            ]),
    );
    let stderr = String::from_utf8(bad.stderr).unwrap();
    assert!(stderr.contains("LEXHMM_THREADS"), "stderr: {stderr}");
}

#[test]
fn help_lists_all_subcommands() {
    let out = run_ok(bin().arg("--help"));
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["train", "rank", "split", "tag", "eval", "sweep"] {
        assert!(text.contains(name), "help missing {name}");
    }
}

//! End-to-end tests that drive the compiled binary the way a user would:
//! spawning it with flags, piping stdin, and checking exit codes, output,
//! and the files it leaves behind.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fsk"))
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn assert_status(output: &Output, code: i32) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "expected exit {code}\nstdout: {}\nstderr: {}",
        stdout_of(output),
        stderr_of(output)
    );
}

fn path_str(path: &Path) -> &str {
    path.to_str().expect("paths in tests are valid unicode")
}

fn write_config(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, body).expect("config file should write");
    path
}

/// Tiny two-epoch training run into `out`, reused by the pipeline tests.
fn train_tiny(out: &Path, config: &Path) -> Output {
    run(&[
        "train",
        "--catalog",
        path_str(&fixture("catalog.json")),
        "--out-dir",
        path_str(out),
        "--layers",
        "1",
        "--dim",
        "16",
        "--config",
        path_str(config),
    ])
}

#[test]
fn help_exits_zero() {
    let output = run(&["--help"]);
    assert_status(&output, 0);
    assert!(stdout_of(&output).contains("Usage"));
}

#[test]
fn validate_reports_catalog_and_queryset() {
    let output = run(&[
        "validate",
        "--catalog",
        path_str(&fixture("catalog.json")),
        "--queryset",
        path_str(&fixture("queries_sentence.jsonl")),
    ]);
    assert_status(&output, 0);
    let text = stdout_of(&output);
    assert!(text.contains("40 entries"), "unexpected output: {text}");
    assert!(text.contains("80 queries"), "unexpected output: {text}");
}

#[test]
fn missing_catalog_is_a_usage_error() {
    let output = run(&["validate", "--catalog", "/no/such/catalog.json"]);
    assert_status(&output, 2);
    assert!(stderr_of(&output).contains("/no/such/catalog.json"));
}

#[test]
fn malformed_catalog_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let bad = write_config(&dir, "bad.json", "not a catalog");
    let output = run(&["validate", "--catalog", path_str(&bad)]);
    assert_status(&output, 3);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let output = run(&["validate", "--no-such-flag"]);
    assert_status(&output, 2);
}

#[test]
fn train_runs_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, "train.json", r#"{"epochs": 2, "batch_size": 8}"#);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    assert_status(&train_tiny(&out_a, &config), 0);
    assert_status(&train_tiny(&out_b, &config), 0);
    for name in ["vocab.txt", "relevance.ckpt"] {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn verbose_training_prints_epoch_losses() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, "train.json", r#"{"epochs": 2, "batch_size": 8}"#);
    let out = dir.path().join("out");
    let output = run(&[
        "--verbose",
        "train",
        "--catalog",
        path_str(&fixture("catalog.json")),
        "--out-dir",
        path_str(&out),
        "--layers",
        "1",
        "--dim",
        "16",
        "--config",
        path_str(&config),
    ]);
    assert_status(&output, 0);
    assert!(stdout_of(&output).contains("epoch   1"));
}

#[test]
fn index_search_and_eval_round_trip() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, "train.json", r#"{"epochs": 2, "batch_size": 8}"#);
    let out = dir.path().join("out");
    assert_status(&train_tiny(&out, &config), 0);

    let output = run(&[
        "index",
        "--checkpoint",
        path_str(&out.join("relevance.ckpt")),
        "--catalog",
        path_str(&fixture("catalog.json")),
        "--out-dir",
        path_str(&out),
    ]);
    assert_status(&output, 0);
    assert!(out.join("features.idx").is_file());

    let output = run(&[
        "search",
        "--index",
        path_str(&out.join("features.idx")),
        "--checkpoint",
        path_str(&out.join("relevance.ckpt")),
        "--vocab",
        path_str(&out.join("vocab.txt")),
        "--query",
        "Touch sensitivity",
        "--topk",
        "3",
        "--catalog",
        path_str(&fixture("catalog.json")),
        "--compare",
        "fts,bm25",
    ]);
    assert_status(&output, 0);
    let text = stdout_of(&output);
    assert!(text.contains("neural") && text.contains("fts") && text.contains("bm25"));
    assert!(text.lines().count() >= 4, "expected a ranking table: {text}");

    let output = run(&[
        "eval",
        "--catalog",
        path_str(&fixture("catalog.json")),
        "--queryset",
        path_str(&fixture("queries_exact.jsonl")),
        "--index",
        path_str(&out.join("features.idx")),
        "--checkpoint",
        path_str(&out.join("relevance.ckpt")),
        "--vocab",
        path_str(&out.join("vocab.txt")),
        "--out-dir",
        path_str(&out),
    ]);
    assert_status(&output, 0);
    assert!(out.join("eval_report.txt").is_file());
    assert!(out.join("eval_report.json").is_file());
    let report = stdout_of(&output);
    assert!(report.contains("neural") && report.contains("exact_keyword"));
}

#[test]
fn search_against_a_mismatched_index_suggests_rebuilding() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, "train.json", r#"{"epochs": 2, "batch_size": 8}"#);
    let out = dir.path().join("out");
    assert_status(&train_tiny(&out, &config), 0);
    assert_status(
        &run(&[
            "index",
            "--checkpoint",
            path_str(&out.join("relevance.ckpt")),
            "--catalog",
            path_str(&fixture("catalog.json")),
            "--out-dir",
            path_str(&out),
        ]),
        0,
    );

    let other = dir.path().join("other");
    let output = run(&[
        "train",
        "--catalog",
        path_str(&fixture("catalog.json")),
        "--out-dir",
        path_str(&other),
        "--layers",
        "1",
        "--dim",
        "8",
        "--config",
        path_str(&config),
    ]);
    assert_status(&output, 0);

    let output = run(&[
        "search",
        "--index",
        path_str(&out.join("features.idx")),
        "--checkpoint",
        path_str(&other.join("relevance.ckpt")),
        "--vocab",
        path_str(&other.join("vocab.txt")),
        "--query",
        "anything",
    ]);
    assert_status(&output, 3);
    assert!(stderr_of(&output).contains("rebuild"));
}

#[test]
fn interactive_search_reprompts_on_blank_lines_and_exits_on_eof() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, "train.json", r#"{"epochs": 2, "batch_size": 8}"#);
    let out = dir.path().join("out");
    assert_status(&train_tiny(&out, &config), 0);
    assert_status(
        &run(&[
            "index",
            "--checkpoint",
            path_str(&out.join("relevance.ckpt")),
            "--catalog",
            path_str(&fixture("catalog.json")),
            "--out-dir",
            path_str(&out),
        ]),
        0,
    );

    let mut child = Command::new(env!("CARGO_BIN_EXE_fsk"))
        .args([
            "search",
            "--index",
            path_str(&out.join("features.idx")),
            "--checkpoint",
            path_str(&out.join("relevance.ckpt")),
            "--vocab",
            path_str(&out.join("vocab.txt")),
            "--topk",
            "2",
        ])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("binary should spawn");
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"\n\nnotification sound\n")
        .expect("stdin should accept input");
    let output = child.wait_with_output().expect("binary should exit");
    assert_status(&output, 0);
    let text = stdout_of(&output);
    assert!(text.matches("query>").count() >= 3, "expected re-prompts: {text}");
    assert!(text.contains("rank"), "expected a ranking after the query: {text}");
}

#[test]
fn distill_and_sweep_produce_student_artifacts() {
    let dir = TempDir::new().unwrap();
    let train_config = write_config(&dir, "train.json", r#"{"epochs": 2, "batch_size": 8}"#);
    let distill_config = write_config(&dir, "distill.json", r#"{"epochs": 1}"#);
    let out = dir.path().join("out");
    assert_status(&train_tiny(&out, &train_config), 0);

    let output = run(&[
        "distill",
        "--teacher",
        path_str(&out.join("relevance.ckpt")),
        "--catalog",
        path_str(&fixture("catalog.json")),
        "--out-dir",
        path_str(&out),
        "--layers",
        "1",
        "--dim",
        "8",
        "--config",
        path_str(&distill_config),
    ]);
    assert_status(&output, 0);
    assert!(out.join("student.ckpt").is_file());

    let output = run(&[
        "sweep",
        "--teacher",
        path_str(&out.join("relevance.ckpt")),
        "--catalog",
        path_str(&fixture("catalog.json")),
        "--queryset",
        path_str(&fixture("queries_exact.jsonl")),
        "--out-dir",
        path_str(&out),
        "--sizes",
        "1x8",
        "--epochs",
        "1",
    ]);
    assert_status(&output, 0);
    let table = stdout_of(&output);
    assert!(table.contains("teacher") && table.contains("student-1x8"));
    assert!(table.contains("hits@5") && table.contains("hits@20"));
    assert!(out.join("sweep.txt").is_file());
    assert!(out.join("sweep.json").is_file());
    assert!(out.join("student_1x8.ckpt").is_file());
}

#[test]
fn demo_runs_the_whole_pipeline() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("demo");
    let output = run(&["demo", "--out-dir", path_str(&out)]);
    assert_status(&output, 0);
    let text = stdout_of(&output);
    assert!(text.contains("[5/5]"), "expected all steps to report: {text}");
    assert!(text.contains("display.touch"), "expected the showcase hit: {text}");
    for name in
        ["vocab.txt", "relevance.ckpt", "features.idx", "eval_report.txt", "eval_report.json"]
    {
        assert!(out.join(name).is_file(), "missing artifact {name}");
    }
}

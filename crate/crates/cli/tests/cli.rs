use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn earlyrisk(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_earlyrisk"))
        .current_dir(dir)
        .env_remove("EARLYRISK_LEXICON_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = earlyrisk(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn corpora(dir: &Path) {
    ok(
        dir,
        &[
            "--seed",
            "11",
            "gen-corpus",
            "--positive",
            "12",
            "--negative",
            "36",
            "--out",
            "train.jsonl",
        ],
    );
    ok(
        dir,
        &[
            "--seed",
            "7",
            "gen-corpus",
            "--positive",
            "6",
            "--negative",
            "18",
            "--out",
            "test.jsonl",
        ],
    );
}

#[test]
fn help_exits_zero() {
    let tmp = TempDir::new().unwrap();
    let out = earlyrisk(tmp.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("simulate"));
}

#[test]
fn unknown_subcommand_prints_usage_and_exits_one() {
    let tmp = TempDir::new().unwrap();
    let out = earlyrisk(tmp.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn missing_input_exits_two() {
    let tmp = TempDir::new().unwrap();
    let out = earlyrisk(tmp.path(), &["score", "--log", "nope.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.csv"));
}

#[test]
fn bad_threshold_exits_one() {
    let tmp = TempDir::new().unwrap();
    corpora(tmp.path());
    let out = earlyrisk(
        tmp.path(),
        &[
            "simulate",
            "--corpus",
            "test.jsonl",
            "--oracle",
            "--threshold",
            "1.5",
            "--out",
            "log.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn metadata_pipeline_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    corpora(dir);
    ok(
        dir,
        &[
            "train-meta",
            "--corpus",
            "train.jsonl",
            "--out",
            "meta.json",
        ],
    );
    assert!(dir.join("meta.json.manifest.json").is_file());

    let run = |log: &str, report: &str| {
        ok(
            dir,
            &[
                "--format",
                "json",
                "simulate",
                "--corpus",
                "test.jsonl",
                "--meta-model",
                "meta.json",
                "--threshold",
                "0.6",
                "--out",
                log,
                "--trace",
                &format!("{log}.trace"),
                "--report",
                report,
            ],
        )
    };
    let first = run("a.csv", "a.json");
    let second = run("b.csv", "b.json");
    assert_eq!(first, second);
    assert_eq!(
        fs::read(dir.join("a.csv")).unwrap(),
        fs::read(dir.join("b.csv")).unwrap()
    );
    assert_eq!(
        fs::read(dir.join("a.json")).unwrap(),
        fs::read(dir.join("b.json")).unwrap()
    );
    assert_eq!(
        fs::read(dir.join("a.csv.trace")).unwrap(),
        fs::read(dir.join("b.csv.trace")).unwrap()
    );

    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("a.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["inputs"]["meta.json"].as_str().unwrap().len(), 64);

    // Rescoring the written log reproduces the simulation report.
    let scored = ok(dir, &["--format", "json", "score", "--log", "a.csv"]);
    assert_eq!(scored, first);

    let csv = ok(
        dir,
        &[
            "--format",
            "csv",
            "score",
            "--log",
            "a.csv",
            "--erde",
            "5,50",
            "--erde-pct",
            "20,50",
        ],
    );
    assert!(csv.starts_with("model,p >,ERDE_5,ERDE_50,ERDE%_20,ERDE%_50,F1,P,R,F_latency\n"));
}

#[test]
fn oracle_wait_policy_decides_at_the_end() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    corpora(dir);
    ok(
        dir,
        &[
            "simulate",
            "--corpus",
            "test.jsonl",
            "--oracle",
            "--policy",
            "wait",
            "--out",
            "wait.csv",
        ],
    );
    let log = fs::read_to_string(dir.join("wait.csv")).unwrap();
    let mut rows = 0;
    for line in log.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[1], f[2], "oracle verdict matches truth");
        assert_eq!(f[3], f[4], "wait decides after the whole history");
        rows += 1;
    }
    assert_eq!(rows, 24);
}

#[test]
fn sweep_flags_best_rows() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    corpora(dir);
    let out = ok(
        dir,
        &[
            "--format",
            "json",
            "sweep",
            "--corpus",
            "test.jsonl",
            "--oracle",
            "--thresholds",
            "0.9,0.5",
        ],
    );
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["threshold"], 0.5);
    assert!(!rows[0]["best"].as_array().unwrap().is_empty());
}

#[test]
fn extract_features_writes_header_and_rows() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    corpora(dir);
    ok(
        dir,
        &[
            "extract-features",
            "--corpus",
            "test.jsonl",
            "--out",
            "f.csv",
            "--no-month",
        ],
    );
    let text = fs::read_to_string(dir.join("f.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap().split(',').count(), 28);
    assert_eq!(lines.count(), 24);
}

fn write_exact_analogy_files(dir: &Path) {
    let pairs = [("france", "paris"), ("japan", "tokyo"), ("spain", "madrid")];
    let dim = pairs.len() + 1;
    let mut vectors = format!("{} {dim}\n", pairs.len() * 2);
    for (i, (country, capital)) in pairs.iter().enumerate() {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        let row = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        vectors.push_str(&format!("{country} {}\n", row(&v)));
        v[dim - 1] = 1.0;
        vectors.push_str(&format!("{capital} {}\n", row(&v)));
    }
    let mut questions = String::from(": capital-common-countries\n");
    for a in &pairs {
        for b in &pairs {
            if a != b {
                questions.push_str(&format!("{} {} {} {}\n", a.0, a.1, b.0, b.1));
            }
        }
    }
    fs::write(dir.join("vec.txt"), vectors).unwrap();
    fs::write(dir.join("q.txt"), questions).unwrap();
}

#[test]
fn embedding_commands() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write_exact_analogy_files(dir);
    let out = ok(
        dir,
        &[
            "--format",
            "json",
            "embed-analogy",
            "--vectors",
            "vec.txt",
            "--questions",
            "q.txt",
        ],
    );
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["semantic_pct"], 100);
    assert_eq!(v["total_pct"], 100);

    let nn = ok(
        dir,
        &[
            "--format",
            "csv",
            "embed-nn",
            "--vectors",
            "vec.txt",
            "--token",
            "france",
            "--k",
            "1",
        ],
    );
    assert_eq!(nn.lines().nth(1).unwrap().split(',').next(), Some("paris"));

    let out = earlyrisk(
        dir,
        &["embed-nn", "--vectors", "vec.txt", "--token", "atlantis"],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn cnn_train_and_ensemble_simulation() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    corpora(dir);
    // Small vectors for common words; everything else maps to zeros.
    let words = [
        "i",
        "my",
        "me",
        "feel",
        "the",
        "and",
        "to",
        "a",
        "depression",
        "anxiety",
        "game",
        "work",
    ];
    let mut vectors = String::new();
    for (i, w) in words.iter().enumerate() {
        let v: Vec<String> = (0..4)
            .map(|j| format!("{:.3}", ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.5))
            .collect();
        vectors.push_str(&format!("{w} {}\n", v.join(" ")));
    }
    fs::write(dir.join("vec.txt"), vectors).unwrap();
    ok(
        dir,
        &[
            "train-meta",
            "--corpus",
            "train.jsonl",
            "--out",
            "meta.json",
        ],
    );
    let train = [
        "--seed",
        "3",
        "train-cnn",
        "--corpus",
        "train.jsonl",
        "--vectors",
        "vec.txt",
        "--epochs",
        "2",
        "--seq-len",
        "8",
        "--max-docs-per-user",
        "4",
        "--loss-curve",
    ];
    let mut a = train.to_vec();
    a.extend(["loss_a.csv", "--out", "cnn_a.json"]);
    ok(dir, &a);
    let mut b = train.to_vec();
    b.extend(["loss_b.csv", "--out", "cnn_b.json"]);
    ok(dir, &b);
    assert_eq!(
        fs::read(dir.join("cnn_a.json")).unwrap(),
        fs::read(dir.join("cnn_b.json")).unwrap()
    );
    assert_eq!(
        fs::read_to_string(dir.join("loss_a.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );

    ok(
        dir,
        &[
            "simulate",
            "--corpus",
            "test.jsonl",
            "--meta-model",
            "meta.json",
            "--cnn-model",
            "cnn_a.json",
            "--vectors",
            "vec.txt",
            "--out",
            "ens.csv",
        ],
    );
    assert_eq!(
        fs::read_to_string(dir.join("ens.csv"))
            .unwrap()
            .lines()
            .count(),
        25
    );

    let out = earlyrisk(
        dir,
        &[
            "simulate",
            "--corpus",
            "test.jsonl",
            "--cnn-model",
            "cnn_a.json",
            "--out",
            "x.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn leak_audit_warns_on_leaky_corpus() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(
        dir,
        &[
            "--seed",
            "1",
            "gen-corpus",
            "--positive",
            "20",
            "--negative",
            "40",
            "--timestamp-leak",
            "--out",
            "tr.jsonl",
        ],
    );
    ok(
        dir,
        &[
            "--seed",
            "2",
            "gen-corpus",
            "--positive",
            "20",
            "--negative",
            "40",
            "--timestamp-leak",
            "--out",
            "te.jsonl",
        ],
    );
    let out = earlyrisk(
        dir,
        &["audit-leak", "--train", "tr.jsonl", "--test", "te.jsonl"],
    );
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}

#[test]
fn config_file_supplies_defaults() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    corpora(dir);
    fs::write(
        dir.join("cfg.json"),
        r#"{"policy": {"threshold": 0.7, "mode": "wait"}}"#,
    )
    .unwrap();
    ok(
        dir,
        &[
            "--config",
            "cfg.json",
            "simulate",
            "--corpus",
            "test.jsonl",
            "--oracle",
            "--out",
            "log.csv",
        ],
    );
    let m: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("log.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["policy"]["threshold"], 0.7);
    assert_eq!(m["config"]["policy"]["mode"], "wait");

    fs::write(dir.join("bad.json"), r#"{"polcy": {}}"#).unwrap();
    let out = earlyrisk(dir, &["--config", "bad.json", "score", "--log", "log.csv"]);
    assert_eq!(out.status.code(), Some(1));
}

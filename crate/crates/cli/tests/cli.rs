use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mmrag_core::eval::names;
use mmrag_core::{EvalReport, ImageTensor};
use serde_json::Value;

fn mmrag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmrag"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = mmrag(args);
    assert!(
        out.status.success(),
        "mmrag {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn lines(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

struct Workdir {
    _tmp: tempfile::TempDir,
    root: PathBuf,
}

impl Workdir {
    fn synth(queries: usize) -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        let n = queries.to_string();
        ok(&["synth", "--queries", &n, "--out-dir", s(&root)]);
        Self { _tmp: tmp, root }
    }

    fn at(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

#[test]
fn synth_writes_a_consistent_dataset() {
    let w = Workdir::synth(12);
    for f in ["corpus.jsonl", "qa.jsonl", "embeddings.emb", "config.toml"] {
        assert!(w.at(f).exists(), "{f}");
    }
    assert_eq!(lines(&w.at("qa.jsonl")).len(), 12);
    let rebuilt = w.at("rebuilt.emb");
    ok(&[
        "--config",
        s(&w.at("config.toml")),
        "index",
        "build",
        "--corpus",
        s(&w.at("corpus.jsonl")),
        "--embeddings",
        s(&w.at("embeddings.emb")),
        "--out",
        s(&rebuilt),
    ]);
    assert_eq!(
        fs::read(&rebuilt).unwrap(),
        fs::read(w.at("embeddings.emb")).unwrap()
    );
}

#[test]
fn index_query_ranks_gold_first() {
    let w = Workdir::synth(5);
    let out = ok(&[
        "index",
        "query",
        "--corpus",
        s(&w.at("corpus.jsonl")),
        "--embeddings",
        s(&w.at("embeddings.emb")),
        "--question",
        "What is shown in scene 2?",
        "-k",
        "3",
    ]);
    let result: Value = serde_json::from_str(&out).unwrap();
    let first = result["candidates"][0]["id"].as_str().unwrap();
    assert!(first.starts_with("img0002a"), "{first}");
    assert_eq!(result["candidates"].as_array().unwrap().len(), 3);
}

#[test]
fn staged_commands_chain_into_a_threshold_and_a_report() {
    let w = Workdir::synth(20);
    let corpus = w.at("corpus.jsonl");
    let qa = w.at("qa.jsonl");
    let config = w.at("config.toml");
    let retrieved = w.at("retrieved.jsonl");
    ok(&[
        "--config",
        s(&config),
        "retrieve",
        "--corpus",
        s(&corpus),
        "--embeddings",
        s(&w.at("embeddings.emb")),
        "--qa",
        s(&qa),
        "-k",
        "10",
        "--out",
        s(&retrieved),
    ]);
    let r = lines(&retrieved);
    assert_eq!(r.len(), 20);
    assert!(r
        .iter()
        .all(|x| x["candidates"].as_array().unwrap().len() == 10));

    let reranked = w.at("reranked.jsonl");
    let recalls = w.at("recalls.jsonl");
    ok(&[
        "--config",
        s(&config),
        "rerank",
        "--corpus",
        s(&corpus),
        "--qa",
        s(&qa),
        "--retrieved",
        s(&retrieved),
        "-n",
        "2",
        "--out",
        s(&reranked),
        "--recalls",
        s(&recalls),
    ]);
    assert_eq!(lines(&recalls).len(), 200);
    for set in lines(&reranked) {
        let c = set["candidates"].as_array().unwrap();
        assert!(c.len() <= 2);
        let ps: Vec<f64> = c
            .iter()
            .map(|x| x["relevance_p"].as_f64().unwrap())
            .collect();
        assert!(ps.windows(2).all(|p| p[0] >= p[1]));
    }

    let threshold = w.at("threshold.json");
    let curves = w.at("curves");
    ok(&[
        "calibrate",
        "--recalls",
        s(&recalls),
        "--out",
        s(&threshold),
        "--curves",
        s(&curves),
    ]);
    let t: Value = serde_json::from_str(&fs::read_to_string(&threshold).unwrap()).unwrap();
    let eta = t["eta"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&eta));
    let pos = fs::read_to_string(curves.join("positive.txt")).unwrap();
    assert_eq!(pos.lines().count(), 512);

    let out_dir = w.at("run");
    let printed = ok(&[
        "--config",
        s(&config),
        "run",
        "--corpus",
        s(&corpus),
        "--embeddings",
        s(&w.at("embeddings.emb")),
        "--qa",
        s(&qa),
        "--threshold",
        s(&threshold),
        "--out-dir",
        s(&out_dir),
    ]);
    assert!(printed.contains("Overall"));
    let report =
        EvalReport::from_json(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.evaluated, 20);
    let overall = report.overall().unwrap();
    assert_eq!(overall.get(names::ACCURACY), Some(100.0));
    assert_eq!(lines(&out_dir.join("traces.jsonl")).len(), 20);
    assert!(lines(&out_dir.join("failures.jsonl")).is_empty());

    // Scoring the saved predictions again reproduces the report.
    let again = w.at("again.json");
    ok(&[
        "--config",
        s(&config),
        "eval",
        "--predictions",
        s(&out_dir.join("predictions.jsonl")),
        "--qa",
        s(&qa),
        "--out",
        s(&again),
    ]);
    let rescored = EvalReport::from_json(&fs::read_to_string(&again).unwrap()).unwrap();
    assert_eq!(rescored.rows, report.rows);
}

#[test]
fn eval_counts_missing_predictions_and_rejects_unknown_ones() {
    let w = Workdir::synth(4);
    let qa = w.at("qa.jsonl");
    let preds = w.at("preds.jsonl");
    fs::write(
        &preds,
        r#"{"qid":"q0000","prediction":"Object 0","retrieved_ids":["img0000a0"]}"#.to_string()
            + "\n",
    )
    .unwrap();
    let out = w.at("report.json");
    ok(&[
        "eval",
        "--predictions",
        s(&preds),
        "--qa",
        s(&qa),
        "--out",
        s(&out),
    ]);
    let report = EvalReport::from_json(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!((report.evaluated, report.failed), (1, 3));

    fs::write(
        &preds,
        r#"{"qid":"nope","prediction":"x","retrieved_ids":[]}"#.to_string() + "\n",
    )
    .unwrap();
    let bad = mmrag(&["eval", "--predictions", s(&preds), "--qa", s(&qa)]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("nope"));
}

#[test]
fn training_data_commands() {
    let w = Workdir::synth(6);
    let corpus = w.at("corpus.jsonl");
    let qa = w.at("qa.jsonl");
    let rank = w.at("rank.jsonl");
    ok(&[
        "data",
        "rank",
        "--corpus",
        s(&corpus),
        "--qa",
        s(&qa),
        "--negs",
        "2",
        "--out",
        s(&rank),
    ]);
    assert!(!lines(&rank).is_empty());

    let noise = w.at("noise.jsonl");
    ok(&[
        "data",
        "noise",
        "--corpus",
        s(&corpus),
        "--qa",
        s(&qa),
        "--max-images",
        "5",
        "--out",
        s(&noise),
    ]);
    assert_eq!(lines(&noise).len(), 6);
}

#[test]
fn distort_is_seeded_and_keeps_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in.tensor");
    ImageTensor::new(vec![3, 4, 4], vec![0.5; 48])
        .unwrap()
        .save(&input)
        .unwrap();
    let run = |seed: &str, name: &str, extra: &[&str]| {
        let out = tmp.path().join(name);
        let mut args = vec![
            "--seed",
            seed,
            "distort",
            "--input",
            s(&input),
            "--out",
            s(&out),
        ];
        args.extend_from_slice(extra);
        ok(&args);
        ImageTensor::load(&out).unwrap()
    };
    let a = run("1", "a", &[]);
    let b = run("1", "b", &[]);
    let c = run("2", "c", &[]);
    let d = run("1", "d", &["--stepwise", "--steps", "3"]);
    assert_eq!(a.shape(), &[3, 4, 4]);
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(d.shape(), &[3, 4, 4]);
}

#[test]
fn invalid_configuration_is_reported() {
    let w = Workdir::synth(3);
    let cfg = w.at("bad.toml");
    fs::write(&cfg, "k = 2\nn = 5\n").unwrap();
    let out = mmrag(&[
        "--config",
        s(&cfg),
        "run",
        "--corpus",
        s(&w.at("corpus.jsonl")),
        "--embeddings",
        s(&w.at("embeddings.emb")),
        "--qa",
        s(&w.at("qa.jsonl")),
        "--out-dir",
        s(&w.at("out")),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error:"), "{err}");
    assert!(err.contains("N = 5") && err.contains("K = 2"), "{err}");

    let missing = w.at("missing.tensor");
    let out = mmrag(&["distort", "--input", s(&missing), "--out", s(&w.at("x"))]);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(!out.status.success());
    assert_eq!(err.matches("os error").count(), 1, "{err}");

    let input = w.at("in.tensor");
    ImageTensor::new(vec![2], vec![0.0, 1.0])
        .unwrap()
        .save(&input)
        .unwrap();
    let out = mmrag(&[
        "distort",
        "--input",
        s(&input),
        "--out",
        s(&w.at("x")),
        "--gamma",
        "1.5",
    ]);
    assert!(!out.status.success());
}

//! End-to-end runs of the `diffuco` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn diffuco(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diffuco"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = diffuco(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn lines(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

const SMALL_CONFIG: &str = r#"{
  "t_steps": 2, "l_layers": 1, "n_h": 8, "lr": 0.005, "t_start": 0.2,
  "n_anneal": 20, "m_omega": 2, "m_kl": 2, "noise": "cnd", "seed": 5,
  "grad_clip": 1.0, "random_features": false, "problem": "MIS"
}"#;

#[test]
fn generate_train_evaluate_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "gen",
            "--kind",
            "er",
            "--n",
            "9",
            "--p",
            "0.3",
            "--count",
            "6",
            "--seed",
            "3",
            "--out",
            "train.jsonl",
        ],
    );
    ok(
        d,
        &[
            "gen",
            "--kind",
            "ba",
            "--n",
            "10",
            "--m",
            "2",
            "--count",
            "4",
            "--split",
            "test",
            "--out",
            "test.jsonl",
        ],
    );
    let train = lines(&d.join("train.jsonl"));
    assert_eq!(train.len(), 6);
    assert!(train
        .iter()
        .all(|r| r["n"] == 9 && r["kind"] == "MIS" && r["split"] == "train"));
    assert_eq!(train[0]["meta"]["generator"], "er");

    ok(d, &["oracle", "--data", "test.jsonl"]);
    assert!(lines(&d.join("test.jsonl")).iter().all(|r| r["oracle_energy"].is_f64()));

    fs::write(d.join("small.json"), SMALL_CONFIG).unwrap();
    ok(
        d,
        &[
            "train",
            "--config",
            "small.json",
            "--data",
            "train.jsonl",
            "--out",
            "m.json",
            "--checkpoint-every",
            "10",
        ],
    );
    ok(
        d,
        &[
            "train",
            "--config",
            "small.json",
            "--data",
            "train.jsonl",
            "--out",
            "m2.json",
            "--seed",
            "6",
        ],
    );
    let log = lines(&d.join("m.log.jsonl"));
    assert_eq!(log.len(), 20);
    for key in [
        "step",
        "temperature",
        "entropy_term",
        "noise_term",
        "energy_term",
        "total",
        "grad_norm",
    ] {
        assert!(log[19].get(key).is_some(), "log lacks {key}");
    }
    assert!(d.join("m.step10.json").exists());
    // same configuration and seed: identical checkpoint
    ok(
        d,
        &[
            "train",
            "--config",
            "small.json",
            "--data",
            "train.jsonl",
            "--out",
            "again.json",
        ],
    );
    assert_eq!(
        fs::read(d.join("m.json")).unwrap(),
        fs::read(d.join("again.json")).unwrap()
    );

    let table = ok(
        d,
        &[
            "eval",
            "--ckpt",
            "m.json",
            "m2.json",
            "--data",
            "test.jsonl",
            "--samples",
            "3",
            "--baselines",
            "greedy,sa",
            "--out",
            "r",
            "--dump",
            "sol.jsonl",
            "--threads",
            "2",
        ],
    );
    assert!(table.contains("diffuco:ce") && table.contains("greedy") && table.contains("sa"));
    let rows = csv::Reader::from_path(d.join("r.csv")).unwrap().into_records().count();
    // 3 methods x 2 seeds x 4 instances
    assert_eq!(rows, 24);
    let sols = lines(&d.join("sol.jsonl"));
    assert_eq!(sols.len(), 24 * 3);
    for key in [
        "instance_id",
        "mode",
        "seed",
        "sample_idx",
        "energy",
        "size",
        "feasible",
        "wall_ms",
    ] {
        assert!(sols[0].get(key).is_some(), "solution lacks {key}");
    }
    let summary: Value = serde_json::from_str(&fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    let methods = summary["methods"].as_array().unwrap();
    assert_eq!(methods.len(), 3);
    let model = methods.iter().find(|m| m["method"] == "diffuco:ce").unwrap();
    assert_eq!(model["seeds"], serde_json::json!([5, 6]));
    assert_eq!(model["steps"], 2);
    assert!(model["mean_rel_error"]["mean"].as_f64().unwrap() >= 0.0);
    assert!(summary["orientation"]["MIS"].is_string());
    let plot: Value = serde_json::from_str(&fs::read_to_string(d.join("r.plot.json")).unwrap()).unwrap();
    assert_eq!(plot[0]["name"], "diffuco:ce");

    // evaluation is reproducible and independent of the thread count
    ok(
        d,
        &[
            "eval",
            "--ckpt",
            "m.json",
            "m2.json",
            "--data",
            "test.jsonl",
            "--samples",
            "3",
            "--baselines",
            "greedy,sa",
            "--out",
            "r1",
        ],
    );
    let energies = |p: &str| -> Vec<String> {
        csv::Reader::from_path(d.join(p))
            .unwrap()
            .into_records()
            .map(|r| r.unwrap()[4].to_string())
            .collect()
    };
    assert_eq!(energies("r.csv"), energies("r1.csv"));

    ok(
        d,
        &[
            "eval",
            "--ckpt",
            "m.json",
            "--data",
            "test.jsonl",
            "--samples",
            "2",
            "--repeat",
            "2",
            "--decode",
            "ce-st:4",
            "--out",
            "r2",
        ],
    );
    let out = ok(d, &["report", "--inputs", "r.csv", "r2.csv", "--out", "all"]);
    assert!(out.contains("diffuco:ce-st:4"));
    let merged = csv::Reader::from_path(d.join("all.csv"))
        .unwrap()
        .into_records()
        .count();
    assert_eq!(merged, 24 + 4);
    let summary: Value = serde_json::from_str(&fs::read_to_string(d.join("all.json")).unwrap()).unwrap();
    let st = summary["methods"]
        .as_array()
        .unwrap()
        .iter()
        .find(|m| m["method"] == "diffuco:ce-st:4")
        .unwrap();
    assert_eq!(st["steps"], 4);
}

#[test]
fn oracle_skips_large_graphs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "gen",
            "--kind",
            "er",
            "--n",
            "30",
            "--p",
            "0.1",
            "--count",
            "1",
            "--out",
            "big.jsonl",
        ],
    );
    ok(
        d,
        &[
            "gen",
            "--kind",
            "er",
            "--n",
            "8",
            "--p",
            "0.3",
            "--count",
            "1",
            "--out",
            "small.jsonl",
        ],
    );
    let mut text = fs::read_to_string(d.join("big.jsonl")).unwrap();
    text += &fs::read_to_string(d.join("small.jsonl")).unwrap();
    fs::write(d.join("mixed.jsonl"), text).unwrap();
    let out = diffuco(d, &["oracle", "--data", "mixed.jsonl", "--out", "annotated.jsonl"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceed"));
    let recs = lines(&d.join("annotated.jsonl"));
    assert!(recs[0].get("oracle_energy").is_none_or(Value::is_null));
    assert!(recs[1]["oracle_energy"].is_f64());
}

#[test]
fn rb_generation_and_solvers_without_models() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "gen",
            "--kind",
            "rb",
            "--cliques",
            "4",
            "--ksize",
            "4",
            "--p",
            "0.3",
            "--count",
            "2",
            "--out",
            "rb.jsonl",
        ],
    );
    ok(
        d,
        &[
            "gen",
            "--kind",
            "rb",
            "--range",
            "small",
            "--count",
            "1",
            "--problem",
            "MVC",
            "--out",
            "rbs.jsonl",
        ],
    );
    assert_eq!(lines(&d.join("rb.jsonl"))[0]["n"], 16);
    assert_eq!(lines(&d.join("rbs.jsonl"))[0]["kind"], "MVC");
    ok(d, &["oracle", "--data", "rb.jsonl"]);
    let table = ok(
        d,
        &[
            "eval",
            "--data",
            "rb.jsonl",
            "--baselines",
            "greedy,mfa",
            "--samples",
            "2",
            "--out",
            "b",
        ],
    );
    assert!(table.contains("mfa"));
}

fn expect_code(d: &Path, args: &[&str], want: i32, stderr_has: &str) {
    let out = diffuco(d, args);
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(code(&out), want, "{args:?}: {err}");
    assert!(
        err.contains(stderr_has),
        "{args:?}: stderr {err:?} lacks {stderr_has:?}"
    );
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // usage
    expect_code(
        d,
        &["gen", "--kind", "er", "--n", "5", "--count", "1", "--out", "x"],
        1,
        "--p",
    );
    expect_code(
        d,
        &[
            "gen", "--kind", "er", "--n", "5", "--p", "0.3", "--m", "2", "--count", "1", "--out", "x",
        ],
        1,
        "--m",
    );
    expect_code(
        d,
        &["gen", "--kind", "tree", "--count", "1", "--out", "x"],
        1,
        "invalid value",
    );
    expect_code(
        d,
        &["train", "--preset", "desk", "--config", "c.json", "--data", "d"],
        1,
        "cannot be used with",
    );
    expect_code(d, &["train", "--data", "d"], 1, "--preset");
    expect_code(d, &["eval", "--data", "d", "--decode", "ce-st:0"], 1, "invalid value");
    expect_code(d, &["report"], 1, "--inputs");
    expect_code(d, &["frobnicate"], 1, "unrecognized subcommand");

    // data
    expect_code(d, &["oracle", "--data", "missing.jsonl"], 2, "missing.jsonl");
    fs::write(
        d.join("bad.jsonl"),
        "{\"n\":2,\"edges\":[[0,1]],\"kind\":\"MIS\",\"split\":\"train\"}\n\n{\"n\":2,\"edges\":[[0,5]],\"kind\":\"MIS\",\"split\":\"train\"}\n",
    )
    .unwrap();
    expect_code(d, &["oracle", "--data", "bad.jsonl"], 2, "bad.jsonl:3");
    ok(
        d,
        &[
            "gen",
            "--kind",
            "er",
            "--n",
            "6",
            "--p",
            "0.5",
            "--count",
            "2",
            "--problem",
            "MaxCut",
            "--out",
            "cut.jsonl",
        ],
    );
    fs::write(d.join("small.json"), SMALL_CONFIG).unwrap();
    expect_code(
        d,
        &["train", "--config", "small.json", "--data", "cut.jsonl"],
        2,
        "MaxCut",
    );
    expect_code(
        d,
        &[
            "train",
            "--config",
            "small.json",
            "--data",
            "cut.jsonl",
            "--split",
            "val",
        ],
        2,
        "no records",
    );
    fs::write(d.join("typo.json"), SMALL_CONFIG.replace("\"lr\"", "\"learning_rate\"")).unwrap();
    expect_code(
        d,
        &["train", "--config", "typo.json", "--data", "cut.jsonl"],
        2,
        "learning_rate",
    );
    fs::write(d.join("model.json"), "{\"format\":\"something-else\"}").unwrap();
    expect_code(
        d,
        &["eval", "--ckpt", "model.json", "--data", "cut.jsonl"],
        2,
        "model.json",
    );

    // informational output
    assert_eq!(code(&diffuco(d, &["--help"])), 0);
    assert_eq!(code(&diffuco(d, &["--version"])), 0);
    assert_eq!(code(&diffuco(d, &["eval", "--help"])), 0);
}

fn snapshot_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("snapshots")
}

/// Help texts are part of the interface; set `UPDATE_SNAPSHOTS=1` to
/// rewrite the stored copies after an intended change.
#[test]
fn help_texts_match_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let update = std::env::var_os("UPDATE_SNAPSHOTS").is_some();
    for sub in ["", "gen", "train", "eval", "oracle", "report"] {
        let args: Vec<&str> = if sub.is_empty() {
            vec!["--help"]
        } else {
            vec![sub, "--help"]
        };
        let text = ok(dir.path(), &args);
        let name = if sub.is_empty() {
            "help.txt".to_string()
        } else {
            format!("help-{sub}.txt")
        };
        let path = snapshot_dir().join(name);
        if update {
            fs::create_dir_all(snapshot_dir()).unwrap();
            fs::write(&path, &text).unwrap();
        } else {
            let stored = fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing snapshot {}", path.display()));
            assert_eq!(
                text, stored,
                "help of {sub:?} changed; rerun with UPDATE_SNAPSHOTS=1 if intended"
            );
        }
    }
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn gsc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsc")).current_dir(dir).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

/// Small SBM dataset plus a short training config in a fresh directory.
fn workspace() -> TempDir {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    write(d, "synth.cfg", "blocks = 2\nnodes_per_block = 15\np_in = 0.3\np_out = 0.02\nfeat_dim = 4\nseed = 3\n");
    let o = gsc(d, &["gen-synth", "--config", "synth.cfg", "--out", "data"]);
    assert!(o.status.success(), "{}", stderr(&o));
    write(
        d,
        "train.cfg",
        "edges = data/edges.tsv\nfeatures = data/features.csv\nlabels = data/labels.txt\nsplits = data/splits.tsv\n\
         epochs = 2\ndim = 8\nk = 5\nbatch_size = 10\not_subsample = 4\n",
    );
    dir
}

#[test]
fn train_writes_three_artifacts() {
    let dir = workspace();
    let o = gsc(dir.path(), &["train", "--config", "train.cfg", "--out", "run"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["checkpoint.bin", "metrics.tsv", "manifest.json"] {
        assert!(dir.path().join("run").join(f).exists(), "{f} missing");
    }
    let log = fs::read_to_string(dir.path().join("run/metrics.tsv")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(log.lines().all(|l| l.split('\t').count() == 7));

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 4);
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["config"]["train"]["lambda"], 0.5);
}

#[test]
fn train_is_idempotent() {
    let dir = workspace();
    for out in ["a", "b"] {
        let o = gsc(dir.path(), &["train", "--config", "train.cfg", "--out", out]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["checkpoint.bin", "checkpoint_best.bin", "metrics.tsv"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = workspace();
    gsc(dir.path(), &["train", "--config", "train.cfg", "--out", "a", "--seed", "1"]);
    gsc(dir.path(), &["train", "--config", "train.cfg", "--out", "b", "--seed", "2"]);
    let a = fs::read(dir.path().join("a/checkpoint.bin")).unwrap();
    let b = fs::read(dir.path().join("b/checkpoint.bin")).unwrap();
    assert_ne!(a, b);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("b/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 2);
}

#[test]
fn missing_features_file_exits_3_naming_it() {
    let dir = workspace();
    write(dir.path(), "bad.cfg", "edges = data/edges.tsv\nfeatures = data/missing.csv\n");
    let o = gsc(dir.path(), &["train", "--config", "bad.cfg", "--out", "run"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("missing.csv"), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
}

#[test]
fn malformed_edge_line_exits_3_with_location() {
    let dir = workspace();
    write(dir.path(), "edges_bad.tsv", "0\t1\n2\n");
    write(dir.path(), "bad.cfg", "edges = edges_bad.tsv\nfeatures = data/features.csv\n");
    let o = gsc(dir.path(), &["train", "--config", "bad.cfg", "--out", "run"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("edges_bad.tsv:2"), "{}", stderr(&o));
}

#[test]
fn lambda_out_of_range_exits_2() {
    let dir = workspace();
    write(dir.path(), "bad.cfg", "edges = data/edges.tsv\nfeatures = data/features.csv\nlambda = 1.5\n");
    let o = gsc(dir.path(), &["train", "--config", "bad.cfg", "--out", "run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lambda"), "{}", stderr(&o));
}

#[test]
fn unknown_key_exits_2() {
    let dir = workspace();
    write(dir.path(), "bad.cfg", "edges = data/edges.tsv\nfeatures = data/features.csv\nlamda = 0.5\n");
    let o = gsc(dir.path(), &["train", "--config", "bad.cfg", "--out", "run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lamda"));
}

#[test]
fn embed_is_deterministic_and_checks_dimensions() {
    let dir = workspace();
    let d = dir.path();
    assert!(gsc(d, &["train", "--config", "train.cfg", "--out", "run"]).status.success());
    write(d, "embed.cfg", "edges = data/edges.tsv\nfeatures = data/features.csv\ncheckpoint = run/checkpoint.bin\n");
    for out in ["e1", "e2"] {
        let o = gsc(d, &["embed", "--config", "embed.cfg", "--out", out]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).starts_with("rows=30 cols=8"));
    }
    let a = fs::read_to_string(d.join("e1/embeddings.csv")).unwrap();
    assert_eq!(a, fs::read_to_string(d.join("e2/embeddings.csv")).unwrap());
    assert_eq!(a.lines().count(), 30);
    assert!(a.lines().all(|l| l.split(',').count() == 8));

    // features of a different width do not fit the checkpoint
    let wide: String = (0..30).map(|_| "0,0,0,0,0\n").collect();
    write(d, "wide.csv", &wide);
    write(d, "wide.cfg", "edges = data/edges.tsv\nfeatures = wide.csv\ncheckpoint = run/checkpoint.bin\n");
    let o = gsc(d, &["embed", "--config", "wide.cfg", "--out", "e3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("checkpoint"));
}

#[test]
fn eval_on_separable_embeddings_reports_full_accuracy() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    write(d, "emb.csv", "2.0,0.1\n1.8,-0.2\n2.2,0.0\n-2.0,0.3\n-1.9,0.1\n-2.1,-0.2\n");
    write(d, "labels.txt", "0\n0\n0\n1\n1\n1\n");
    write(d, "splits.tsv", "0\ttrain\n1\ttest\n2\ttest\n3\ttrain\n4\ttest\n5\ttest\n");
    write(d, "eval.cfg", "embeddings = emb.csv\nlabels = labels.txt\nsplits = splits.tsv\n");
    let o = gsc(d, &["eval", "--config", "eval.cfg", "--out", "ev"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "accuracy=1.000000 micro_f1=1.000000 evaluated=4");
    assert!(d.join("ev/manifest.json").exists());
}

#[test]
fn eval_names_class_missing_from_training() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    write(d, "emb.csv", "1,0\n0,1\n1,1\n");
    write(d, "labels.txt", "0\n1\n2\n");
    write(d, "splits.tsv", "0\ttrain\n1\ttrain\n2\ttest\n");
    write(d, "eval.cfg", "embeddings = emb.csv\nlabels = labels.txt\nsplits = splits.tsv\n");
    let o = gsc(d, &["eval", "--config", "eval.cfg", "--out", "ev"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("class 2"));
}

fn field(line: &str, key: &str) -> f64 {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing in {line}"))
        .parse()
        .unwrap()
}

#[test]
fn ot_dist_of_a_subgraph_with_itself() {
    let dir = workspace();
    let d = dir.path();
    write(d, "ot.cfg", "edges = data/edges.tsv\nfeatures = data/features.csv\nbeta = 0.001\nk = 6\n");
    let o = gsc(d, &["ot-dist", "--config", "ot.cfg", "--a", "4", "--b", "4", "--out", "ot"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o);
    assert!(field(&line, "d_gw") <= 1e-2, "{line}");
    assert!(field(&line, "violation") < 1e-6, "{line}");

    let o = gsc(d, &["ot-dist", "--config", "ot.cfg", "--a", "4", "--b", "20", "--out", "ot"]);
    assert!(o.status.success());
    assert!(field(&stdout(&o), "d_w") > 0.0);
}

#[test]
fn gen_synth_with_complete_blocks() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    write(d, "s.cfg", "blocks = 2\nnodes_per_block = 3\np_in = 1\np_out = 0\nfeat_dim = 2\nnoise_sigma = 0\n");
    let o = gsc(d, &["gen-synth", "--config", "s.cfg", "--out", "data"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let edges = fs::read_to_string(d.join("data/edges.tsv")).unwrap();
    assert_eq!(edges, "0\t1\n0\t2\n1\t2\n3\t4\n3\t5\n4\t5\n");
    assert_eq!(fs::read_to_string(d.join("data/labels.txt")).unwrap(), "0\n0\n0\n1\n1\n1\n");
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("data/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["artifacts"].as_array().unwrap().len(), 4);
}

#[test]
fn gen_synth_rejects_inverted_probabilities() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "s.cfg", "p_in = 0.01\np_out = 0.1\n");
    let o = gsc(dir.path(), &["gen-synth", "--config", "s.cfg", "--out", "data"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("p_in"));
}

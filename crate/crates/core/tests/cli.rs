use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use votelstm::cli::{exit_code, EXIT_NUMERIC};
use votelstm::Error;

const TINY: &str = r#"
seed = 3
workers = 1
[train]
ensemble_size = 3
max_epochs = 3
hidden1 = 4
hidden2 = 3
[embedding]
dim = 8
[relations]
top_k = 4
[synth]
n_train = 60
n_dev = 20
n_test = 20
"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_votelstm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
    config: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("tiny.toml");
        fs::write(&config, TINY).unwrap();
        Fixture { dir, config }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn synth(&self) -> PathBuf {
        let out = self.path("data");
        assert_eq!(run(&["synth", "--config", s(&self.config), "--out", s(&out)]).status.code(), Some(0));
        out
    }

    fn trained(&self) -> (PathBuf, PathBuf) {
        let data = self.synth();
        let model = self.path("model.kprl");
        let (train, dev) = (data.join("train"), data.join("dev"));
        for cmd in ["train-a", "train-b"] {
            let o = run(&[cmd, "--config", s(&self.config), s(&train), s(&dev), "--out", s(&model)]);
            assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        }
        (data, model)
    }
}

#[test]
fn synth_writes_three_corpora_and_is_seeded() {
    let f = Fixture::new();
    let data = f.synth();
    for split in ["train", "dev", "test"] {
        for ext in ["txt", "ann", "conll"] {
            assert!(data.join(split).join(format!("corpus.{ext}")).is_file());
        }
    }
    let other = f.path("other");
    run(&["synth", "--config", s(&f.config), "--out", s(&other)]);
    assert_eq!(fs::read(data.join("dev/corpus.ann")).unwrap(), fs::read(other.join("dev/corpus.ann")).unwrap());
    let reseeded = f.path("reseeded");
    run(&["synth", "--config", s(&f.config), "--seed", "99", "--out", s(&reseeded)]);
    assert_ne!(fs::read(data.join("dev/corpus.txt")).unwrap(), fs::read(reseeded.join("dev/corpus.txt")).unwrap());
}

#[test]
fn config_and_usage_errors_exit_2() {
    let f = Fixture::new();
    let bad = f.path("bad.toml");
    fs::write(&bad, "[synth]\nnoise_rate = 1.0\n").unwrap();
    assert_eq!(run(&["synth", "--config", s(&bad), "--out", s(&f.path("x"))]).status.code(), Some(2));
    fs::write(&bad, "unknown_key = 1\n").unwrap();
    assert_eq!(run(&["synth", "--config", s(&bad), "--out", s(&f.path("x"))]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["predict", "m", "in", "--scenario", "4", "--out", "o"]).status.code(), Some(2));
}

#[test]
fn parse_errors_exit_2() {
    let f = Fixture::new();
    let data = f.synth();
    let broken = f.path("broken");
    fs::create_dir_all(&broken).unwrap();
    fs::copy(data.join("dev/corpus.txt"), broken.join("corpus.txt")).unwrap();
    fs::write(broken.join("corpus.ann"), "T1\tC1 0 3\tnot the text\n").unwrap();
    let o = run(&["eval", s(&broken), s(&data.join("dev"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("corpus.ann:1"));
    let o = run(&["train-a", "--config", s(&f.config), s(&broken), s(&data.join("dev")), "--out", s(&f.path("m"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!f.path("m").exists());
}

#[test]
fn numeric_failures_map_to_exit_3() {
    assert_eq!(exit_code(&Error::Numeric("nan loss".into())), EXIT_NUMERIC);
    assert_eq!(EXIT_NUMERIC, 3);
}

#[test]
fn eval_identical_and_empty_predictions() {
    let f = Fixture::new();
    let data = f.synth();
    let gold = data.join("test");
    let report = f.path("report.json");
    let o = run(&["eval", s(&gold), s(&gold), "--scenario", "1", "--out", s(&report)]);
    assert_eq!(o.status.code(), Some(0));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["overall"]["f1"], 1.0);
    assert_eq!(json["task_a"]["spurious"], 0);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("overall precision=1.0000 recall=1.0000 f1=1.0000"));

    let empty = f.path("empty");
    fs::create_dir_all(&empty).unwrap();
    fs::copy(gold.join("corpus.txt"), empty.join("corpus.txt")).unwrap();
    for scenario in ["1", "2", "3"] {
        let o = run(&["eval", s(&gold), s(&empty), "--scenario", scenario, "--out", s(&report)]);
        assert_eq!(o.status.code(), Some(0));
        let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
        assert_eq!(json["overall"]["f1"], 0.0, "scenario {scenario}");
        assert_eq!(json["scenario"], scenario.parse::<u8>().unwrap());
    }
}

fn ann_kinds(path: &Path) -> (usize, usize) {
    let text = fs::read_to_string(path).unwrap();
    let t = text.lines().filter(|l| l.starts_with('T')).count();
    let r = text.lines().filter(|l| l.starts_with('R')).count();
    (t, r)
}

#[test]
fn train_tune_predict_eval() {
    let f = Fixture::new();
    let (data, model) = f.trained();
    let test = data.join("test");
    let before: Vec<Vec<u8>> = ["txt", "ann", "conll"]
        .iter()
        .map(|e| fs::read(test.join(format!("corpus.{e}"))).unwrap())
        .collect();

    let tuned = f.path("tuned.kprl");
    let o = run(&["tune", s(&model), s(&data.join("dev")), "--top-k", "2", "--out", s(&tuned)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = votelstm::pipeline::PipelineModel::load(&tuned).unwrap();
    let rec = m.tuning.as_ref().unwrap();
    assert_eq!(rec.weights.len(), 4);
    assert_eq!(rec.active_relations.len(), 2);
    assert!(rec.dev_f1_after >= rec.dev_f1_before);
    assert_eq!(m.relations.as_ref().unwrap().ensembles.iter().filter(|e| e.active).count(), 2);

    for (scenario, want_t, want_r) in [("1", true, true), ("2", true, false), ("3", false, true)] {
        let out = f.path(&format!("pred{scenario}"));
        let o = run(&["predict", s(&tuned), s(&test), "--scenario", scenario, "--out", s(&out)]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let (t, r) = ann_kinds(&out.join("corpus.ann"));
        assert_eq!(t > 0, want_t, "scenario {scenario}");
        if !want_r {
            assert_eq!(r, 0);
        }
        if !want_t {
            assert!(r > 0);
        }
        let o = run(&["eval", s(&test), s(&out), "--scenario", scenario]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let last = String::from_utf8_lossy(&o.stdout).lines().last().unwrap().to_string();
        let json: serde_json::Value = serde_json::from_str(&last).unwrap();
        assert!(json["overall"]["f1"].as_f64().unwrap() >= 0.0);
    }

    let after: Vec<Vec<u8>> = ["txt", "ann", "conll"]
        .iter()
        .map(|e| fs::read(test.join(format!("corpus.{e}"))).unwrap())
        .collect();
    assert_eq!(before, after);
}

#[test]
fn scenario_input_mismatch_and_missing_dev_exit_2() {
    let f = Fixture::new();
    let (data, model) = f.trained();
    let bare = f.path("bare");
    fs::create_dir_all(&bare).unwrap();
    fs::copy(data.join("test/corpus.txt"), bare.join("corpus.txt")).unwrap();
    let o = run(&["predict", s(&model), s(&bare), "--scenario", "3", "--out", s(&f.path("p"))]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["tune", s(&model), "--out", s(&f.path("t.kprl"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no dev corpus"));

    // Text without a token-column file is tagged by the model's lexicon.
    let o = run(&["predict", s(&model), s(&bare), "--scenario", "2", "--out", s(&f.path("p2"))]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn train_b_keeps_existing_key_phrase_model() {
    let f = Fixture::new();
    let (_, model) = f.trained();
    let m = votelstm::pipeline::PipelineModel::load(&model).unwrap();
    assert!(m.kphrases.is_some());
    assert!(m.relations.is_some());
}

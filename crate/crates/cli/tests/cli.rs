use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use meshgnn::train::TrainLog;

const GEN: &str = r#"
seed = 7
family = "chain"
min_nodes = 10
max_nodes = 20

[[split]]
name = "train"
count = 12

[[split]]
name = "test"
count = 3
"#;

const EXPERIMENT: &str = r#"
preset = "surface_pressure"
checkpoint_every = 2

[model]
latent_size = 8
steps = 2
depth = 2
width = 8
decoder_depth = 2
decoder_width = 8

[features]
node_targets = "z_score"

[train]
epochs = 4
batch_size = 4
"#;

fn meshgnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meshgnn")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = meshgnn(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str], code: i32) -> String {
    let out = meshgnn(args);
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(out.status.code(), Some(code), "{args:?}: {stderr}");
    assert_eq!(stderr.trim_end().lines().count(), 1, "{stderr}");
    stderr
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        std::fs::write(root.join("gen.toml"), GEN).unwrap();
        std::fs::write(root.join("exp.toml"), EXPERIMENT).unwrap();
        Self { _dir: dir, root }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn generate(&self) {
        ok(&["gen", "--config", s(&self.path("gen.toml")), "--out", s(&self.path("data"))]);
        assert!(self.path("data/train.jsonl").exists() && self.path("data/test.jsonl").exists());
    }

    fn train(&self, out: &str, extra: &[&str]) {
        let data = self.path("data/train.jsonl");
        let (dir, config) = (self.path(out), self.path("exp.toml"));
        let mut args = vec!["train", "--config", s(&config), "--data", s(&data), "--out", s(&dir)];
        args.extend_from_slice(extra);
        ok(&args);
    }
}

#[test]
fn gen_train_eval_predict_inspect() {
    let ws = Workspace::new();
    ws.generate();
    ws.train("run", &[]);
    for f in ["run/model.ckpt", "run/config.toml", "run/train_log.jsonl", "run/checkpoints/epoch-00002.ckpt"] {
        assert!(ws.path(f).exists(), "missing {f}");
    }
    let log = TrainLog::from_jsonl(&std::fs::read_to_string(ws.path("run/train_log.jsonl")).unwrap()).unwrap();
    assert_eq!(log.records.len(), 4);

    let table = ok(&["eval", "--checkpoint", s(&ws.path("run/model.ckpt")), "--data", s(&ws.path("data/test.jsonl"))]);
    assert!(table.contains("test") && table.contains('%'), "{table}");
    let csv = std::fs::read_to_string(ws.path("run/eval_test.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("graph_id,num_nodes,eps_r_percent"));

    let pred = ok(&["predict", "--checkpoint", s(&ws.path("run/model.ckpt")), "--data", s(&ws.path("data/test.jsonl")), "--id", "chain-1-00000"]);
    let lines: Vec<_> = pred.lines().collect();
    assert_eq!(lines[0], "graph_id,node,prediction");
    assert!(lines.len() > 10);

    std::fs::write(ws.path("foil.dat"), "foil\n1 0\n0.5 0.05\n0 0\n0.5 -0.05\n1 0\n").unwrap();
    let out = ws.path("foil.csv");
    ok(&["predict", "--checkpoint", s(&ws.path("run/model.ckpt")), "--selig", s(&ws.path("foil.dat")), "--freestream", "-0.8,0.2", "--out", s(&out)]);
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 6);

    let info = ok(&["inspect", s(&ws.path("data/train.jsonl"))]);
    assert!(info.contains("12"), "{info}");
    let info = ok(&["inspect", s(&ws.path("run/model.ckpt"))]);
    assert!(info.contains("f64"), "{info}");
}

#[test]
fn resume_matches_uninterrupted_run() {
    let ws = Workspace::new();
    ws.generate();
    ws.train("full", &[]);
    let half = EXPERIMENT.replace("epochs = 4", "epochs = 2");
    std::fs::write(ws.path("half.toml"), half).unwrap();
    let data = ws.path("data/train.jsonl");
    ok(&["train", "--config", s(&ws.path("half.toml")), "--data", s(&data), "--out", s(&ws.path("part"))]);
    ws.train("part", &["--resume", s(&ws.path("part/model.ckpt"))]);
    let read = |p: &str| std::fs::read(ws.path(p)).unwrap();
    assert_eq!(read("full/model.ckpt"), read("part/model.ckpt"));
    let log = |p: &str| TrainLog::from_jsonl(&String::from_utf8(read(p)).unwrap()).unwrap().trajectory();
    assert_eq!(log("full/train_log.jsonl"), log("part/train_log.jsonl"));
}

#[test]
fn seed_flag_changes_the_run() {
    let ws = Workspace::new();
    ws.generate();
    ws.train("a", &["--seed", "1"]);
    ws.train("b", &["--seed", "2"]);
    assert_ne!(std::fs::read(ws.path("a/model.ckpt")).unwrap(), std::fs::read(ws.path("b/model.ckpt")).unwrap());
}

#[test]
fn errors_map_to_exit_codes() {
    let ws = Workspace::new();
    ws.generate();
    let data = ws.path("data/train.jsonl");

    std::fs::write(ws.path("bad.toml"), "preset = \"surface_pressure\"\n[model]\nlatent_sise = 3\n").unwrap();
    let msg = fails(&["train", "--config", s(&ws.path("bad.toml")), "--data", s(&data), "--out", s(&ws.path("x"))], 2);
    assert!(msg.contains("latent_sise"), "{msg}");

    std::fs::write(ws.path("bad.jsonl"), "{\"format\":\"meshgnn-graphs\",\"version\":1}\n{not json\n").unwrap();
    let msg = fails(&["inspect", s(&ws.path("bad.jsonl"))], 3);
    assert!(msg.contains("line 2"), "{msg}");

    std::fs::write(ws.path("v9.jsonl"), "{\"format\":\"meshgnn-graphs\",\"version\":9}\n").unwrap();
    fails(&["inspect", s(&ws.path("v9.jsonl"))], 3);

    ws.train("run", &[]);
    let ckpt = std::fs::read(ws.path("run/model.ckpt")).unwrap();
    std::fs::write(ws.path("trunc.ckpt"), &ckpt[..ckpt.len() / 2]).unwrap();
    fails(&["eval", "--checkpoint", s(&ws.path("trunc.ckpt")), "--data", s(&data)], 3);

    // Pressure scaling divides by the freestream magnitude.
    std::fs::write(ws.path("exp.toml"), EXPERIMENT.replace("z_score", "pressure")).unwrap();
    ws.train("pressure", &[]);
    std::fs::write(ws.path("foil.dat"), "foil\n1 0\n0 0\n1 0\n").unwrap();
    let ckpt = ws.path("pressure/model.ckpt");
    fails(&["predict", "--checkpoint", s(&ckpt), "--selig", s(&ws.path("foil.dat")), "--freestream", "0,0"], 2);
    fails(&["predict", "--checkpoint", s(&ckpt), "--selig", s(&ws.path("foil.dat")), "--freestream", "1,2,3"], 2);

    fails(&["inspect", s(&ws.path("missing.jsonl"))], 5);
}

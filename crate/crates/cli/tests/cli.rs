use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"
seeds = [0]
xi_values = [0.0, 1.0]

[benchmark]
n_source = 16
n_target_train = 16
n_target_eval = 8

[train]
eval_every = 10
log_every = 5

[train.schedule]
lr1 = 0.001
iters1 = 15
lr2 = 0.0001
iters2 = 5
"#;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("exp.toml"), config).unwrap();
        Self { dir }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_uadan"))
            .arg("--config")
            .arg(self.dir.path().join("exp.toml"))
            .args(args)
            .env("UADAN_OUT", self.out())
            .env_remove("RUST_LOG")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let o = self.run(args);
        assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
        o
    }
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn history(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn gen_is_seeded_and_guards_existing_data() {
    let w = Workspace::new(TINY);
    w.ok(&["gen", "--seed", "7"]);
    let manifest = w.out().join("data/source/manifest.json");
    let first = std::fs::read(&manifest).unwrap();
    assert_eq!(w.run(&["gen", "--seed", "7"]).status.code(), Some(5));
    w.ok(&["gen", "--seed", "7", "--force"]);
    assert_eq!(std::fs::read(&manifest).unwrap(), first);
    for split in ["target_train", "target_eval"] {
        assert!(w.out().join("data").join(split).join("manifest.json").exists());
    }
}

#[test]
fn train_eval_and_plot() {
    let w = Workspace::new(TINY);
    assert_eq!(w.run(&["train", "--mode", "Baseline"]).status.code(), Some(5), "training needs data");
    w.ok(&["gen"]);
    w.ok(&["train", "--mode", "Baseline"]);
    w.ok(&["train", "--mode", "UaDAN", "--xi", "0.5"]);
    let runs = w.out().join("runs");

    let base = history(&runs.join("Baseline_xi0.5_s0/history.jsonl"));
    assert_eq!(base.len(), 4);
    assert!(base.iter().all(|r| r["L_img"] == 0.0 && r["L_ins"] == 0.0));
    let ua = json(&runs.join("UaDAN_xi0.5_s0/summary.json"));
    assert_eq!(ua["xi"], 0.5);
    assert_eq!(ua["mode"], "UaDAN");
    assert_eq!(ua["target_train_label_reads"], 0);
    assert_eq!(w.run(&["train", "--mode", "UaDAN", "--xi", "0.5"]).status.code(), Some(5));

    let ck = runs.join("Baseline_xi0.5_s0/checkpoints/final.ckpt");
    w.ok(&["eval", ck.to_str().unwrap()]);
    let eval = w.out().join("eval/Baseline_xi0.5_s0");
    let metrics = json(&eval.join("metrics.json"));
    assert_eq!(metrics["checkpoint_iteration"], 20);
    let reference = eval.join("detections.json");
    let copy = w.dir.path().join("reference.json");
    std::fs::copy(&reference, &copy).unwrap();
    w.ok(&["eval", ck.to_str().unwrap(), "--compare", copy.to_str().unwrap()]);
    let ea = json(&eval.join("error_analysis.json"));
    assert_eq!(ea["recovered_count"], 0);
    assert_eq!(ea["induced_count"], 0);
    assert_eq!(std::fs::read(&reference).unwrap(), std::fs::read(&copy).unwrap());

    w.ok(&["plot"]);
    for name in ["Baseline_xi0.5_s0_loss.svg", "UaDAN_xi0.5_s0_loss.svg", "Baseline_xi0.5_s0_pr.svg"] {
        assert!(w.out().join("plots").join(name).exists(), "{name}");
    }
}

#[test]
fn ablation_rows_match_standalone_runs() {
    let w = Workspace::new(TINY);
    w.ok(&["gen"]);
    w.ok(&["ablate"]);
    let table = json(&w.out().join("tables/ablation.json"));
    let rows = table["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 7);
    let csv = std::fs::read_to_string(w.out().join("tables/ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 8);

    let solo = Workspace::new(TINY);
    solo.ok(&["gen"]);
    solo.ok(&["train", "--mode", "Baseline"]);
    let s = json(&solo.out().join("runs/Baseline_xi0.5_s0/summary.json"));
    let row = rows.iter().find(|r| r["label"] == "Baseline").unwrap();
    let cell = row["maps"]["0"].as_f64().unwrap();
    assert!((cell - 100.0 * s["final"]["mAP"].as_f64().unwrap()).abs() < 1e-9);

    w.ok(&["sweep-xi", "--xi", "0,1"]);
    let sweep = json(&w.out().join("tables/sweep_xi.json"));
    assert_eq!(sweep["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn invalid_arguments_exit_with_config_status() {
    let w = Workspace::new(TINY);
    w.ok(&["gen"]);
    assert_eq!(w.run(&["train", "--xi=-1"]).status.code(), Some(2));
    assert_eq!(w.run(&["train", "--mode", "NoSuchMode"]).status.code(), Some(2));
    let broken = Workspace::new("[train]\nlog_every = \"often\"\n");
    assert_eq!(broken.run(&["gen"]).status.code(), Some(2));
}

#[test]
fn divergence_exits_with_non_finite_status() {
    let w = Workspace::new(&TINY.replace("lr1 = 0.001", "lr1 = 1e12"));
    w.ok(&["gen"]);
    let o = w.run(&["train", "--mode", "Baseline"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

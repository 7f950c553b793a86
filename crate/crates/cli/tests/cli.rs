use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn jmpose(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jmpose")).args(args).env("RUST_LOG", "warn").output().expect("spawn jmpose")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const MODEL: &str = "[model]\nlayers = 2\nbackbone_widths = [4, 4, 4]\nfuse_channels = 4\nchannels = 4\nestimator_hidden = 8\n";

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let f = Self { dir };
        for (name, n, seed, hard) in [("train", 6, 3, 0.3), ("val", 4, 4, 0.5)] {
            let spec = f.path(&format!("{name}.toml"));
            std::fs::write(&spec, format!("num_clips = {n}\nseed = {seed}\nchallenging_fraction = {hard}\n")).unwrap();
            let o = jmpose(&["generate-data", "--spec", s(&spec), "--out", s(&f.path(name))]);
            assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        }
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self, name: &str, extra: &str) -> PathBuf {
        let p = self.path(name);
        let text = format!("seed = 0\nepochs = 2\nbatch_size = 3\n{extra}\n[lr]\ninitial = 1e-3\nmilestones = [1]\nfactor = 0.1\n[data]\ntrain_dir = \"train\"\nval_dir = \"val\"\n{MODEL}");
        std::fs::write(&p, text).unwrap();
        p
    }
}

#[test]
fn generate_train_eval_and_plot() {
    let f = Fixture::new();
    assert_eq!(std::fs::read_dir(f.path("train")).unwrap().count(), 6);
    let cfg = f.config("cfg.toml", "");
    let ck = f.path("run.ck");
    let o = jmpose(&["train", "--config", s(&cfg), "--out", s(&ck)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let metrics = std::fs::read_to_string(f.path("run.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = metrics.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l["epoch"], i + 1);
        assert!(l["l_h"].as_f64().unwrap() > 0.0);
        assert_eq!(l["l_io"].as_array().unwrap().len(), 2);
        assert!(l["mAP"].is_number());
        assert!(l["per_joint"].as_object().unwrap().contains_key("nose"));
    }

    for subset in ["all", "clean", "challenging"] {
        let o = jmpose(&["eval", "--ckpt", s(&ck), "--data", s(&f.path("val")), "--subset", subset, "--tau", "0.3"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(report["split"], subset);
        assert_eq!(report["tau"], 0.3);
        assert_eq!(report["num_clips"], if subset == "all" { 4 } else { 2 });
        let map = report["mAP"].as_f64().unwrap();
        assert!((0.0..=100.0).contains(&map));
    }

    let png = f.path("curves.png");
    let o = jmpose(&["plot", "--metrics", s(&f.path("run.jsonl")), "--out", s(&png)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(image::open(&png).is_ok());
}

#[test]
fn resumed_training_reproduces_the_uninterrupted_checkpoint() {
    let f = Fixture::new();
    let full = f.path("full.ck");
    let o = jmpose(&["train", "--config", s(&f.config("two.toml", "")), "--out", s(&full)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let part = f.path("part.ck");
    let one = f.config("one.toml", "").to_path_buf();
    std::fs::write(&one, std::fs::read_to_string(&one).unwrap().replace("epochs = 2", "epochs = 1")).unwrap();
    assert_eq!(code(&jmpose(&["train", "--config", s(&one), "--out", s(&part)])), 0);
    let resumed = f.path("resumed.ck");
    let o = jmpose(&["train", "--config", s(&f.config("two.toml", "")), "--out", s(&resumed), "--resume", s(&part)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(&resumed).unwrap(), std::fs::read(&full).unwrap());
}

#[test]
fn every_flow_provider_trains() {
    let f = Fixture::new();
    for p in ["oracle", "blockmatch", "file"] {
        let cfg = f.config(&format!("{p}.toml"), "epochs = 1\neval_every = 0");
        let cfg_text = std::fs::read_to_string(&cfg).unwrap().replacen("epochs = 2\n", "", 1);
        std::fs::write(&cfg, cfg_text).unwrap();
        let ck = f.path(&format!("{p}.ck"));
        let o = jmpose(&["train", "--config", s(&cfg), "--out", s(&ck), "--flow-provider", p]);
        assert_eq!(code(&o), 0, "{p}: {}", String::from_utf8_lossy(&o.stderr));
        let o = jmpose(&["eval", "--ckpt", s(&ck), "--data", s(&f.path("val")), "--flow-provider", p]);
        assert_eq!(code(&o), 0, "{p}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn ablation_reports_the_variant() {
    let f = Fixture::new();
    let cfg = f.config("cfg.toml", "");
    let out = f.path("no_cjl.json");
    let o = jmpose(&["ablate", "--variant", "no_cjl", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["split"], "val/no_cjl");
    assert_eq!(code(&jmpose(&["ablate", "--variant", "jm_pose_star", "--config", s(&cfg)])), 2);
}

#[test]
fn configuration_errors_exit_with_2() {
    let f = Fixture::new();
    let bad = f.config("bad.toml", "alpha = -1.0");
    assert_eq!(code(&jmpose(&["train", "--config", s(&bad), "--out", s(&f.path("x.ck"))])), 2);
    let unknown = f.config("unknown.toml", "learning_rate = 3");
    assert_eq!(code(&jmpose(&["train", "--config", s(&unknown), "--out", s(&f.path("x.ck"))])), 2);
    assert_eq!(code(&jmpose(&["train", "--config", s(&f.path("missing.toml")), "--out", s(&f.path("x.ck"))])), 2);
    assert_eq!(code(&jmpose(&["gradcheck", "--module", "nope"])), 2);
}

#[test]
fn numerical_failure_exits_with_3_and_dumps_the_batch() {
    let f = Fixture::new();
    let cfg = f.config("nan.toml", "");
    std::fs::write(&cfg, std::fs::read_to_string(&cfg).unwrap().replace("initial = 1e-3", "initial = 1e300")).unwrap();
    let ck = f.path("nan.ck");
    let o = jmpose(&["train", "--config", s(&cfg), "--out", s(&ck)]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let dump: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(f.path("nan.nan.json")).unwrap()).unwrap();
    assert_eq!(dump["epoch"], 0);
    assert!(dump["batch"].is_number());
}

#[test]
fn gradcheck_and_mi_bench() {
    let o = jmpose(&["gradcheck", "--module", "deform", "--seed", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).lines().all(|l| l.ends_with("ok")));

    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("calib.csv");
    let o = jmpose(&["mi-bench", "--out", s(&csv), "--rho", "0,0.9", "--steps", "50"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 3);
}

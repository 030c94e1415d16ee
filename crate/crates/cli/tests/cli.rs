use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
[dataset]
problems = ["P64", "P67"]
pop_size = 20
triplet_k = 1

[[dataset.schedules]]
severity = 10
frequency = 4
num_environments = 4

[train]
epochs = 1
batch_size = 16
hidden = 8
dict_size = 6
d_struct = 4
d_z = 3

[run]
problem = "FDA1"
population_size = 20
pf_samples = 50
record_timing = false

[run.schedule]
severity = 10
frequency = 3
num_environments = 3

[run.generate]
n_cand = 100
"#;

fn dbgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dbgen"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let o = dbgen(args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Pipeline {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Pipeline {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let config = root.join("tiny.toml");
        std::fs::write(&config, TINY).unwrap();
        Self { _dir: dir, root, config }
    }

    /// gen-data, train and a dbgen run into `tag/`.
    fn full(&self, tag: &str) -> PathBuf {
        let out = self.root.join(tag);
        let (cfg, data, ckpt, runs) = (s(&self.config), out.join("data"), out.join("model.ckpt"), out.join("run"));
        ok(&["gen-data", "--config", cfg, "--seed", "3", "--out-dir", s(&data)]);
        ok(&["train", "--config", cfg, "--seed", "3", "--dataset", s(&data), "--out-dir", s(&out), "--checkpoint", s(&ckpt)]);
        ok(&["run", "--config", cfg, "--seed", "3", "--checkpoint", s(&ckpt), "--out-dir", s(&runs)]);
        out
    }
}

#[test]
fn unknown_subcommand_and_flag_fail_with_usage() {
    let o = dbgen(&["frobnicate"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    let o = dbgen(&["run", "--no-such-flag"]);
    assert!(!o.status.success());
    let o = dbgen(&["run", "--strategy", "sideways"]);
    assert!(!o.status.success());
}

#[test]
fn dbgen_run_without_checkpoint_fails_before_evaluating() {
    let p = Pipeline::new();
    let out = p.root.join("none");
    let o = dbgen(&["run", "--config", s(&p.config), "--mode", "dbgen", "--out-dir", s(&out)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("checkpoint"));
    assert!(!out.exists());
    let missing = p.root.join("missing.ckpt");
    let o = dbgen(&["run", "--config", s(&p.config), "--checkpoint", s(&missing), "--out-dir", s(&out)]);
    assert!(!o.status.success());
    assert!(!out.exists());
}

#[test]
fn baseline_run_writes_result_columns() {
    let p = Pipeline::new();
    let out = p.root.join("base");
    ok(&["run", "--config", s(&p.config), "--mode", "restart_baseline", "--problem", "DF5", "--nt", "5", "--taut", "3", "--out-dir", s(&out)]);
    let text = std::fs::read_to_string(out.join("results.csv")).unwrap();
    let mut lines = text.lines().skip(1);
    assert_eq!(lines.next().unwrap(), "problem,n_t,tau_t,seed,env,igd,hv,inherited_igd,gen_ms");
    let row: Vec<&str> = lines.nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..5], &["DF5", "5", "3", "0", "1"]);
    assert!(out.join("archive-seed0.bin").exists());
}

#[test]
fn pipeline_is_byte_deterministic_and_eval_round_trips() {
    let p = Pipeline::new();
    let a = p.full("a");
    let b = p.full("b");
    for f in [
        "data/dataset.bin",
        "data/manifest.jsonl",
        "model.ckpt",
        "train.csv",
        "run/results.csv",
        "run/telemetry.csv",
        "run/summary.csv",
        "run/archive-seed3.bin",
    ] {
        let x = std::fs::read(a.join(f)).unwrap();
        let y = std::fs::read(b.join(f)).unwrap();
        assert!(x == y, "{f} differs between identical runs");
    }
    let summary = std::fs::read_to_string(a.join("run/summary.csv")).unwrap();
    let migd = summary.lines().nth(2).unwrap().split(',').nth(3).unwrap().to_string();
    let eval = ok(&["eval", "--out-dir", s(&a.join("run"))]);
    let got = eval.lines().nth(1).unwrap().split(',').nth(1).unwrap();
    assert_eq!(got, migd);

    let lat = |dir: &str| {
        let out = p.root.join(dir);
        ok(&["dump-latents", "--config", s(&p.config), "--checkpoint", s(&a.join("model.ckpt")), "--samples", "8", "--out-dir", s(&out)]);
        std::fs::read(out.join("latents.csv")).unwrap()
    };
    let first = lat("lat1");
    assert_eq!(first, lat("lat2"));
    assert_eq!(String::from_utf8(first).unwrap().lines().count(), 1 + 3);
}

#[test]
fn ablate_lists_five_jobs() {
    let out = ok(&["ablate", "--dataset", "unused", "--list"]);
    let names: Vec<&str> = out.lines().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(names, ["no_freq_decoupling", "no_basis", "no_vae", "no_triplet", "no_classify"]);
}

#[test]
fn ablate_runs_every_variant_on_one_dataset() {
    let p = Pipeline::new();
    let data = p.root.join("data");
    ok(&["gen-data", "--config", s(&p.config), "--out-dir", s(&data)]);
    let out = p.root.join("abl");
    let text = ok(&["ablate", "--config", s(&p.config), "--dataset", s(&data), "--out-dir", s(&out)]);
    assert_eq!(text.lines().count(), 5);
    for name in ["no_freq_decoupling", "no_basis", "no_vae", "no_triplet", "no_classify"] {
        assert!(out.join(name).join("model.ckpt").exists());
        assert!(out.join(name).join("summary.csv").exists());
    }
}

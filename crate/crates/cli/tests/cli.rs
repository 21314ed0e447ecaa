use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn pleas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pleas"))
        .args(args)
        .env_remove("PLEAS_LOG")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) -> Output {
    let o = pleas(args);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Task data and two trained models, shared by every test.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn path(&self, rel: &str) -> String {
        self.root.join(rel).to_string_lossy().into_owned()
    }

    fn merge_args(&self) -> Vec<String> {
        ["--a", &self.path("A"), "--b", &self.path("B"), "--data-a", &self.path("data/task_a_train.csv"), "--data-b", &self.path("data/task_b_train.csv")]
            .map(String::from)
            .to_vec()
    }
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let data = root.join("data");
        ok(&["make-task", "--angle", "1.2", "--proxy-angle", "0.6", "--train-per-class", "100", "--seed", "3", "--out", s(&data)]);
        for (name, seed) in [("a", "1"), ("b", "2")] {
            let train = data.join(format!("task_{name}_train.csv"));
            let out = root.join(name.to_uppercase());
            ok(&["train-toy", "--data", s(&train), "--widths", "12,16,16,6", "--steps", "400", "--seed", seed, "--out", s(&out)]);
        }
        Fixture { _dir: dir, root }
    })
}

fn run_merge(f: &Fixture, extra: &[&str], out: &Path) -> Output {
    let mut args = vec!["merge".to_string()];
    args.extend(f.merge_args());
    args.extend(extra.iter().map(|a| a.to_string()));
    args.extend(["--out".to_string(), s(out).to_string()]);
    pleas(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    assert!(pleas(&["--help"]).status.success());
    assert!(pleas(&["--version"]).status.success());
    assert!(pleas(&["merge", "--help"]).status.success());
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(pleas(&["merge", "--bogus"]).status.code(), Some(1));
    assert_eq!(pleas(&[]).status.code(), Some(1));
    assert_eq!(pleas(&["match", "--a", "x", "--b", "y", "--mode", "sideways", "--out", "p.json"]).status.code(), Some(1));
}

#[test]
fn merge_writes_checkpoint_and_records() {
    let f = fixture();
    let out = f.root.join("merge-happy");
    let o = run_merge(f, &["--budget", "1.3"], &out);
    assert!(o.status.success(), "{}", stderr(&o));
    for file in ["manifest.json", "tensors.bin", "merge_meta.json", "perms.json", "budget.json", "refit.json", "run.json"] {
        assert!(out.join(file).exists(), "{file}");
    }
    let meta = json(&out.join("merge_meta.json"));
    assert_eq!(meta["method"], "pleas");
    assert_eq!(meta["data_source"], "task");
    assert!(meta["footprint"].as_f64().unwrap() <= 1.3 + 1e-9);
    let budget = json(&out.join("budget.json"));
    assert_eq!(budget["format_version"], "pleas-budget/1");
    let run = json(&out.join("run.json"));
    assert_eq!(run["command"]["merge"]["budget"], 1.3);
    assert_eq!(run["global"]["seed"], 0);

    let ev = f.root.join("merge-happy-eval");
    ok(&["eval", "--model", s(&out), "--data", &f.path("data/task_a_test.csv"), "--data", &f.path("data/task_b_test.csv"), "--out", s(&ev)]);
    let results = json(&ev.join("eval.json"));
    assert_eq!(results["results"].as_array().unwrap().len(), 2);
    assert!(ev.join("run.json").exists());
}

#[test]
fn out_of_range_budget_exits_one() {
    let f = fixture();
    let o = run_merge(f, &["--budget", "0.5"], &f.root.join("bad-budget"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("budget must be in [1,2]"), "{}", stderr(&o));
    assert!(!f.root.join("bad-budget").join("tensors.bin").exists());
}

#[test]
fn sizing_must_be_given_exactly_once() {
    let f = fixture();
    assert_eq!(run_merge(f, &[], &f.root.join("no-size")).status.code(), Some(1));
    assert_eq!(run_merge(f, &["--budget", "1.2", "--ratios", "0.5,0.5"], &f.root.join("two-sizes")).status.code(), Some(1));
    assert_eq!(run_merge(f, &["--ratios", "0.5"], &f.root.join("short-ratios")).status.code(), Some(1));
}

#[test]
fn missing_inputs_exit_two() {
    let f = fixture();
    let out = f.root.join("missing");
    let o = pleas(&["merge", "--a", s(&f.root.join("absent")), "--b", &f.path("B"), "--proxy-data", &f.path("data/proxy.csv"), "--budget", "1.2", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = pleas(&["eval", "--model", &f.path("A"), "--data", s(&f.root.join("absent.csv")), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = pleas(&["eval", "--model", &f.path("A"), "--data", &f.path("data/task_a_test.csv"), "--out", s(&out), "--config", s(&f.root.join("absent.json"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn zero_jobs_is_rejected() {
    let f = fixture();
    let o = pleas(&["eval", "--jobs", "0", "--model", &f.path("A"), "--data", &f.path("data/task_a_test.csv"), "--out", s(&f.root.join("jobs"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn two_step_weight_merge_is_bit_exact() {
    let f = fixture();
    let perms = f.root.join("two-step").join("p.json");
    ok(&["match", "--mode", "weight", "--a", &f.path("A"), "--b", &f.path("B"), "--out", s(&perms)]);
    assert!(perms.with_file_name("run.json").exists());
    assert_eq!(json(&perms)["format_version"], "pleas-perm/1");

    let two = f.root.join("two-step").join("merged");
    let o = run_merge(f, &["--perms", s(&perms), "--budget", "1.0"], &two);
    assert!(o.status.success(), "{}", stderr(&o));
    let one = f.root.join("one-shot");
    let o = run_merge(f, &["--method", "pleas-weight", "--budget", "1.0"], &one);
    assert!(o.status.success(), "{}", stderr(&o));
    for file in ["manifest.json", "tensors.bin", "merge_meta.json", "perms.json", "budget.json", "refit.json"] {
        assert_eq!(std::fs::read(one.join(file)).unwrap(), std::fs::read(two.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn dry_run_writes_no_checkpoint() {
    let f = fixture();
    let out = f.root.join("dry");
    let o = run_merge(f, &["--budget", "1.5", "--dry-run"], &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("ratios") && text.contains("footprint"), "{text}");
    assert!(!out.join("tensors.bin").exists());
    assert!(!out.join("merge_meta.json").exists());
    assert!(out.join("run.json").exists());
}

#[test]
fn merges_are_deterministic() {
    let f = fixture();
    let (x, y) = (f.root.join("det-x"), f.root.join("det-y"));
    assert!(run_merge(f, &["--ratios", "0.5,0.75"], &x).status.success());
    assert!(run_merge(f, &["--ratios", "0.5,0.75", "--jobs", "1"], &y).status.success());
    assert_eq!(std::fs::read(x.join("tensors.bin")).unwrap(), std::fs::read(y.join("tensors.bin")).unwrap());
    assert_eq!(std::fs::read(x.join("merge_meta.json")).unwrap(), std::fs::read(y.join("merge_meta.json")).unwrap());
}

#[test]
fn config_fills_flags_and_command_line_wins() {
    let f = fixture();
    let cfg = f.root.join("cfg.json");
    std::fs::write(&cfg, r#"{"seed": 9, "budget": 1.2, "method": "permute_avg", "dry_run": true}"#).unwrap();
    let out = f.root.join("configured");
    let o = run_merge(f, &["--config", s(&cfg), "--seed", "4"], &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = json(&out.join("run.json"));
    assert_eq!(run["global"]["seed"], 4);
    assert_eq!(run["global"]["dry_run"], true);
    assert_eq!(run["command"]["merge"]["budget"], 1.2);
    assert_eq!(run["command"]["merge"]["method"], "permute_avg");
}

#[test]
fn plan_then_merge_uses_the_plan() {
    let f = fixture();
    let plan = f.root.join("planned").join("budget.json");
    let mut args = vec!["plan-budget".to_string(), "--budget".into(), "1.4".into()];
    args.extend(f.merge_args());
    args.extend(["--out".to_string(), s(&plan).to_string()]);
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let ratios = json(&plan)["ratios"].clone();

    let direct = f.root.join("planned-direct");
    assert!(run_merge(f, &["--budget", "1.4"], &direct).status.success());
    assert_eq!(json(&direct.join("budget.json"))["ratios"], ratios);

    let via = f.root.join("planned-merge");
    assert!(run_merge(f, &["--plan", s(&plan)], &via).status.success());
    assert_eq!(std::fs::read(direct.join("tensors.bin")).unwrap(), std::fs::read(via.join("tensors.bin")).unwrap());
}

#[test]
fn tradeoff_writes_csv_and_meta() {
    let f = fixture();
    let out = f.root.join("tradeoff");
    ok(&[
        "tradeoff", "--a", &f.path("A"), "--b", &f.path("B"),
        "--train-a", &f.path("data/task_a_train.csv"), "--train-b", &f.path("data/task_b_train.csv"),
        "--test", &f.path("data/task_a_test.csv"), "--test", &f.path("data/task_b_test.csv"),
        "--methods", "pleas,ensemble", "--budgets", "1.0,2.0", "--proxy-data", &f.path("data/proxy.csv"),
        "--out", s(&out),
    ]);
    let csv = std::fs::read_to_string(out.join("tradeoff.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("method,budget,footprint,task,accuracy,seed"));
    // 2 budgets for pleas plus one ensemble cell, per test set.
    assert_eq!(lines.clone().count(), 6);
    assert!(lines.all(|l| l.starts_with("pleas_free,") || l.starts_with("ensemble_free,")));
    let meta = json(&out.join("meta.json"));
    assert_eq!(meta["data_source"], "proxy:proxy");
    assert_eq!(meta["tasks"].as_array().unwrap().len(), 2);
    assert!(out.join("run.json").exists());
}

#[test]
fn probe_and_activations() {
    let f = fixture();
    let out = f.root.join("probe");
    ok(&["probe", "--model", &f.path("A"), "--with", &f.path("B"), "--train", &f.path("data/task_a_train.csv"), "--test", &f.path("data/task_a_test.csv"), "--epochs", "5", "--out", s(&out)]);
    let acc = json(&out.join("probe.json"))["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let acts = f.root.join("acts");
    ok(&["collect-acts", "--model", &f.path("A"), "--data", &f.path("data/task_a_test.csv"), "--out", s(&acts)]);
    assert_eq!(json(&acts.join("manifest.json"))["format_version"], "pleas-acts/1");
}

fn idx(magic: u32, dims: &[u32], data: &[u8]) -> Vec<u8> {
    let mut out = magic.to_be_bytes().to_vec();
    for d in dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}

#[test]
fn idx_pairs_are_accepted_as_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("images.idx");
    let labels = dir.path().join("labels.idx");
    let n = 40u32;
    let pixels: Vec<u8> = (0..n).flat_map(|i| if i % 2 == 0 { [255, 0, 0, 255] } else { [0, 255, 255, 0] }).collect();
    let classes: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    std::fs::write(&images, idx(0x0803, &[n, 2, 2], &pixels)).unwrap();
    std::fs::write(&labels, idx(0x0801, &[n], &classes)).unwrap();
    let pair = format!("{},{}", s(&images), s(&labels));
    let model = dir.path().join("m");
    ok(&["train-toy", "--data", &pair, "--widths", "4,8,2", "--steps", "200", "--out", s(&model)]);
    let ev = dir.path().join("ev");
    ok(&["eval", "--model", s(&model), "--data", &pair, "--out", s(&ev)]);
    assert_eq!(json(&ev.join("eval.json"))["results"][0]["accuracy"], 1.0);
}

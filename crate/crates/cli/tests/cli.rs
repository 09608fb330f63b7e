use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kooplab::consistency::{ConsistencyReport, Verdict};
use kooplab::dynamics::SnapshotDataset;
use kooplab::formulations::{KoopmanModel, Variant};
use kooplab_cli::config::{ExperimentConfig, CONFIG_SCHEMA};
use kooplab_cli::demo::{demo_config, run_demo, DEMOS};
use kooplab_cli::{pipeline, EXIT_INCONSISTENT, EXIT_OK, EXIT_USAGE};
use serde_json::{json, Value};
use tempfile::TempDir;

fn kooplab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kooplab")).args(args).output().expect("binary runs")
}

fn status(o: &Output) -> u8 {
    o.status.code().expect("exited normally") as u8
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, value: &Value) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, value.to_string()).unwrap();
    path
}

fn linear_config(n_samples: usize) -> Value {
    json!({
        "schema": CONFIG_SCHEMA,
        "system": { "name": "linear" },
        "dataset": { "n_samples": n_samples, "control": "uniform-random", "seed": 3, "dt": 0.1 },
        "formulations": [ { "variant": "affine" }, { "variant": "separable" }, { "variant": "joint" } ],
    })
}

fn bilinear_config(kind: &str, formulations: &[&str]) -> Value {
    let fs: Vec<Value> = formulations.iter().map(|v| json!({ "variant": v })).collect();
    json!({
        "schema": CONFIG_SCHEMA,
        "system": { "name": "bilinear-scalar", "params": { "a": -1.0, "b": 1.0 } },
        "dataset": { "n_samples": 300, "control": "uniform-random", "seed": 5, "dt": 0.1, "kind": kind },
        "dictionaries": { "joint": { "kind": "products", "state_degree": 1, "input_degree": 4 } },
        "formulations": fs,
    })
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_writes_deterministic_dataset() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &linear_config(500));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = kooplab(&["simulate", "--config", path_str(&cfg), "--out", path_str(out)]);
        assert_eq!(status(&o), EXIT_OK, "{}", stderr(&o));
        assert!(stdout(&o).contains("500"));
    }
    let csv = fs::read(a.join("dataset.csv")).unwrap();
    assert_eq!(csv, fs::read(b.join("dataset.csv")).unwrap());
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 501);

    let data = SnapshotDataset::read(&a.join("dataset.json")).unwrap();
    assert_eq!(data.len(), 500);
}

#[test]
fn invalid_config_is_a_usage_error_with_field_path() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &linear_config(0));
    let o = kooplab(&["simulate", "--config", path_str(&cfg), "--out", path_str(dir.path())]);
    assert_eq!(status(&o), EXIT_USAGE);
    assert!(stderr(&o).contains("dataset.n_samples"), "{}", stderr(&o));

    let o = kooplab(&["simulate"]);
    assert_eq!(status(&o), EXIT_USAGE);
    let o = kooplab(&["check", "--config", "/nonexistent/config.json", "--model", "m.json"]);
    assert_eq!(status(&o), EXIT_USAGE);
}

#[test]
fn config_validation_messages() {
    let mut bad = linear_config(10);
    bad["checks"] = json!(["T2-C1", "T9-C9"]);
    let err = ExperimentConfig::from_json(&bad.to_string()).unwrap_err();
    assert_eq!(err.path, "checks[1]");

    let mut bad = linear_config(10);
    bad["system"]["name"] = json!("pendulum");
    let err = ExperimentConfig::from_json(&bad.to_string()).unwrap_err();
    assert_eq!(err.path, "system.name");
    assert!(err.message.contains("bilinear-scalar"));

    let mut bad = linear_config(10);
    bad["grid"] = json!({ "state": { "lower": [-1, -1], "upper": [1, 1], "counts": [5, 1] },
                          "input": { "lower": [-1], "upper": [1], "counts": [3] } });
    assert_eq!(ExperimentConfig::from_json(&bad.to_string()).unwrap_err().path, "grid.state.counts[1]");

    let mut bad = linear_config(10);
    bad["formulations"] = json!([]);
    assert_eq!(ExperimentConfig::from_json(&bad.to_string()).unwrap_err().path, "formulations");

    let mut bad = linear_config(10);
    bad["formulations"] = json!([{ "variant": "kaiser-eigen" }]);
    assert_eq!(ExperimentConfig::from_json(&bad.to_string()).unwrap_err().path, "formulations[0].variant");
}

#[test]
fn config_round_trips() {
    let config = ExperimentConfig::from_json(&bilinear_config("discrete-pairs", &["separable", "joint"]).to_string()).unwrap();
    assert_eq!(ExperimentConfig::from_json(&config.to_json()).unwrap(), config);
}

#[test]
fn fit_orders_and_nests_residuals() {
    let dir = TempDir::new().unwrap();
    let config = ExperimentConfig::from_json(&bilinear_config("discrete-pairs", &["joint", "separable"]).to_string()).unwrap();
    let sim = pipeline::simulate(&config, dir.path()).unwrap();
    let fitted = pipeline::fit(&config, &sim.dataset, dir.path()).unwrap();
    let variants: Vec<_> = fitted.models.iter().map(|m| m.variant()).collect();
    assert_eq!(variants, vec![Variant::Separable, Variant::Joint]);
    let rms: Vec<f64> = fitted.models.iter().map(|m| m.fit_info().rms_residual).collect();
    assert!(rms[1] < rms[0], "{rms:?}");
    for (model, path) in fitted.models.iter().zip(&fitted.paths) {
        assert_eq!(&KoopmanModel::from_json(&fs::read_to_string(path).unwrap()).unwrap(), model);
    }
    let table = fs::read_to_string(dir.path().join("fit.csv")).unwrap();
    assert!(table.starts_with("formulation,train_rms,samples,ridge,unidentified\nseparable,"));
}

#[test]
fn fit_linear_is_exact_and_unexcited_input_names_b() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &linear_config(200));
    let out = dir.path().join("fit");
    let o = kooplab(&["fit", "--config", path_str(&cfg), "--out", path_str(&out)]);
    assert_eq!(status(&o), EXIT_OK, "{}", stderr(&o));
    for v in ["affine", "separable", "joint"] {
        let model = KoopmanModel::from_json(&fs::read_to_string(out.join(format!("model-{v}.json"))).unwrap()).unwrap();
        assert!(model.fit_info().rms_residual <= 1e-8, "{v}");
    }

    let mut zero = linear_config(200);
    zero["dataset"]["control"] = json!("zero");
    zero["formulations"] = json!([{ "variant": "affine" }]);
    let cfg = write_config(dir.path(), &zero);
    let o = kooplab(&["fit", "--config", path_str(&cfg), "--out", path_str(&out)]);
    assert_ne!(status(&o), EXIT_OK);
    let err = stderr(&o);
    assert!(err.contains("affine") && err.contains("block B"), "{err}");
}

#[test]
fn fit_reads_a_simulated_dataset() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &linear_config(100));
    let out = path_str(dir.path());
    assert_eq!(status(&kooplab(&["simulate", "--config", path_str(&cfg), "--out", out])), EXIT_OK);
    let envelope = dir.path().join("dataset.json");
    let o = kooplab(&["fit", "--config", path_str(&cfg), "--dataset", path_str(&envelope), "--out", out]);
    assert_eq!(status(&o), EXIT_OK, "{}", stderr(&o));
    assert!(stdout(&o).contains("joint"));
}

fn fit_then_check(config: &Value, variant: &str, extra: &[&str]) -> (Output, TempDir) {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), config);
    let out = path_str(dir.path()).to_string();
    let o = kooplab(&["fit", "--config", path_str(&cfg), "--out", &out]);
    assert_eq!(status(&o), EXIT_OK, "{}", stderr(&o));
    let model = dir.path().join(format!("model-{variant}.json"));
    let mut args = vec!["check", "--config", path_str(&cfg), "--model", path_str(&model), "--out", &out];
    args.extend_from_slice(extra);
    let o = kooplab(&args);
    (o, dir)
}

#[test]
fn check_exit_status_follows_verdict() {
    let (o, dir) = fit_then_check(&bilinear_config("discrete-pairs", &["joint"]), "joint", &[]);
    assert_eq!(status(&o), EXIT_OK, "{}{}", stdout(&o), stderr(&o));
    let reports: Vec<ConsistencyReport> =
        serde_json::from_str(&fs::read_to_string(dir.path().join("check-joint.json")).unwrap()).unwrap();
    assert!(reports.iter().any(|r| r.condition.as_str() == "COR8-C2"));
    let csv = fs::read_to_string(dir.path().join("check-joint.csv")).unwrap();
    assert_eq!(csv.lines().count(), reports.len() + 1);

    let (o, _dir) = fit_then_check(&bilinear_config("discrete-pairs", &["separable"]), "separable", &[]);
    assert_eq!(status(&o), EXIT_INCONSISTENT);
    let text = stdout(&o);
    let line = text.lines().find(|l| l.starts_with("COR4-FXU")).expect("COR4-FXU row");
    assert!(line.contains("inconsistent") && line.contains("at x=[2] u=[1]"), "{line}");
}

#[test]
fn check_kaiser_demo_model_is_consistent() {
    let config = demo_config("kaiser-eigen").unwrap();
    let value: Value = serde_json::from_str(&config.to_json()).unwrap();
    let (o, _dir) = fit_then_check(&value, "kaiser-eigen", &[]);
    assert_eq!(status(&o), EXIT_OK, "{}", stdout(&o));
}

#[test]
fn inapplicable_condition_is_an_error() {
    let mut config = bilinear_config("discrete-pairs", &["separable"]);
    config["checks"] = json!(["T5-C1"]);
    let (o, _dir) = fit_then_check(&config, "separable", &[]);
    assert_ne!(status(&o), EXIT_OK);
    assert!(stderr(&o).contains("separable"), "{}", stderr(&o));
}

#[test]
fn tolerance_override_changes_verdict() {
    let (o, _dir) = fit_then_check(&bilinear_config("discrete-pairs", &["separable"]), "separable", &["--tolerance", "10"]);
    assert_eq!(status(&o), EXIT_OK, "{}", stdout(&o));
}

fn read_compare(path: &Path) -> Vec<(String, Vec<f64>)> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("formulation,train_rms,rmse_1,rmse_5,rmse_20,worst_residual"));
    lines
        .map(|l| {
            let mut cells = l.split(',');
            let name = cells.next().unwrap().to_string();
            (name, cells.map(|c| c.parse().unwrap()).collect())
        })
        .collect()
}

#[test]
fn compare_bilinear_and_linear() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &bilinear_config("discrete-pairs", &["separable", "joint"]));
    let o = kooplab(&["compare", "--config", path_str(&cfg), "--out", path_str(dir.path())]);
    assert_eq!(status(&o), EXIT_OK, "{}", stderr(&o));
    let rows = read_compare(&dir.path().join("compare.csv"));
    assert_eq!(rows[0].0, "separable");
    assert!(rows[1].1[3] < rows[0].1[3]);
    let traj = fs::read_to_string(dir.path().join("trajectory-0.dat")).unwrap();
    assert!(traj.starts_with("# k t true_x1 separable_x1 joint_x1\n"));
    assert_eq!(traj.lines().count(), 22);

    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &linear_config(200));
    let o = kooplab(&["compare", "--config", path_str(&cfg), "--out", path_str(dir.path())]);
    assert_eq!(status(&o), EXIT_OK, "{}", stderr(&o));
    let rows = read_compare(&dir.path().join("compare.csv"));
    for k in 1..=3 {
        let vals: Vec<f64> = rows.iter().map(|r| r.1[k]).collect();
        let spread = vals.iter().cloned().fold(f64::MIN, f64::max) - vals.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread <= 1e-6, "{vals:?}");
    }
}

#[test]
fn compare_needs_two_formulations() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &bilinear_config("discrete-pairs", &["joint"]));
    let o = kooplab(&["compare", "--config", path_str(&cfg), "--out", path_str(dir.path())]);
    assert_eq!(status(&o), EXIT_USAGE);
    assert!(stderr(&o).contains("formulations"));
}

#[test]
fn demos_reach_documented_verdicts() {
    let expected = [
        ("corollary1-obstruction", Verdict::Inconsistent),
        ("joint-rescues-bilinear", Verdict::Consistent),
        ("kaiser-eigen", Verdict::Consistent),
        ("williams-equivalence", Verdict::Consistent),
        ("discussion-gxfu", Verdict::Inconsistent),
    ];
    assert_eq!(expected.map(|e| e.0), DEMOS);
    for (name, verdict) in expected {
        let dir = TempDir::new().unwrap();
        let outcome = run_demo(name, dir.path(), Default::default()).unwrap();
        assert_eq!(outcome.verdict, verdict, "{name}");
        assert!(dir.path().join("interpretation.txt").exists());
        let config = ExperimentConfig::load(&dir.path().join("config.json")).unwrap();
        assert_eq!(config, demo_config(name).unwrap());
    }
}

#[test]
fn unknown_demo_lists_available() {
    let o = kooplab(&["demo", "pendulum"]);
    assert_eq!(status(&o), EXIT_USAGE);
    assert!(stderr(&o).contains("kaiser-eigen"));
    let o = kooplab(&["demo", "--list"]);
    assert_eq!(stdout(&o).lines().count(), DEMOS.len());
}

#[test]
fn thread_cap_is_validated() {
    let o = Command::new(env!("CARGO_BIN_EXE_kooplab"))
        .args(["demo", "--list"])
        .env("KOOPLAB_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(status(&o), EXIT_USAGE);
    let o = Command::new(env!("CARGO_BIN_EXE_kooplab"))
        .args(["demo", "--list"])
        .env("KOOPLAB_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(status(&o), EXIT_OK);
}

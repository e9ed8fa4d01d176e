use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn fockrg(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fockrg"))
        .args(args)
        .env("FOCKRG_OUT", out)
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stderr).expect("error JSON on stderr")
}

fn sweep_rows(out: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(out.join("sweep.csv"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn reference_flow_writes_stamped_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = fockrg(dir.path(), &["flow"]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let summary = read_json(&dir.path().join("summary.json"));
    let cert = read_json(&dir.path().join("certificate.json"));
    assert_eq!(summary["verdict"], "CERTIFIED");
    assert!(summary["oracle_delta"].as_f64().unwrap().abs() <= 1e-8);
    let hash = summary["config_hash"].as_str().unwrap();
    assert_eq!(cert["config_hash"], hash);
    assert_eq!(cert["version"], env!("CARGO_PKG_VERSION"));
    assert!(cert["certificate"]["provenance"]
        .as_str()
        .unwrap()
        .contains(hash));
    let csv = fs::read_to_string(dir.path().join("flow.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().contains(hash));
    assert_eq!(
        lines.next().unwrap(),
        "n,W_norm,T0_plus_z,slope_dev,leak,cond"
    );
    assert_eq!(lines.count(), 7);
}

#[test]
fn decoupled_flow_is_trivial() {
    let dir = tempfile::tempdir().unwrap();
    let o = fockrg(
        dir.path(),
        &["flow", "--set", "model.g=0", "--set", "model.modes=6"],
    );
    assert_eq!(o.status.code(), Some(0));
    let summary = read_json(&dir.path().join("summary.json"));
    assert!(summary["z0"].as_f64().unwrap().abs() <= 1e-9);
    for level in summary["levels"].as_array().unwrap() {
        assert_eq!(level["w_norm"].as_f64().unwrap(), 0.0);
    }
    assert_eq!(summary["verdict"], "CERTIFIED");
}

#[test]
fn identical_config_gives_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["flow", "--set", "model.g=0.02", "--set", "model.modes=6"];
    assert_eq!(fockrg(a.path(), &args).status.code(), Some(0));
    assert_eq!(fockrg(b.path(), &args).status.code(), Some(0));
    for name in ["flow.csv", "summary.json", "certificate.json"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let o = fockrg(dir.path(), &["config", "--set", "model.modes=6"]);
    assert_eq!(o.status.code(), Some(0));
    let path = dir.path().join("run.json");
    fs::write(&path, &o.stdout).unwrap();
    let again = fockrg(dir.path(), &["config", "--config", path.to_str().unwrap()]);
    assert_eq!(again.stdout, o.stdout);
}

#[test]
fn config_errors_exit_two_with_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"flow": {"root_tol": 1e-9, "leak": 2}}"#).unwrap();
    let o = fockrg(dir.path(), &["flow", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr_json(&o);
    assert_eq!(err["error"], "config");
    assert_eq!(err["field"], "flow.leak");

    let o = fockrg(dir.path(), &["flow", "--set", "flow.leak_budget=-1"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["field"], "flow.leak_budget");

    fs::write(&path, "{not json").unwrap();
    let o = fockrg(dir.path(), &["flow", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = fockrg(dir.path(), &["flow", "--set", "model.g=0.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["field"], "model.g");
}

#[test]
fn numerical_breakdown_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = fockrg(
        dir.path(),
        &[
            "flow",
            "--set",
            "flow.leak_budget=1e-6",
            "--set",
            "model.modes=6",
        ],
    );
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(stderr_json(&o)["kind"], "flow_truncated");
}

#[test]
fn verify_suites_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    let o = fockrg(dir.path(), &["verify", "telescoping"]);
    assert_eq!(o.status.code(), Some(0));
    let report = read_json(&dir.path().join("verify.json"));
    assert_eq!(report["suites"][0]["failed"], 0);
    assert_eq!(report["suites"][0]["passed"], 14);

    let o = fockrg(dir.path(), &["verify", "feshbach"]);
    assert_eq!(o.status.code(), Some(0));
    let report = read_json(&dir.path().join("verify.json"));
    assert_eq!(report["suites"][0]["passed"], 51);

    let o = fockrg(
        dir.path(),
        &["verify", "dilation", "--set", "verify.dilation_tol=1e-20"],
    );
    assert_eq!(o.status.code(), Some(1));
    let o = fockrg(dir.path(), &["verify", "nothing"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn coupling_sweep_is_ordered_and_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let o = fockrg(
        dir.path(),
        &[
            "sweep",
            "--axis",
            "g",
            "--values",
            "0,0.01,0.02,0.05",
            "--set",
            "model.modes=6",
        ],
    );
    assert_eq!(o.status.code(), Some(0));
    let rows = sweep_rows(dir.path());
    let values: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(values, ["0", "0.01", "0.02", "0.05"]);
    let z0: Vec<f64> = rows.iter().map(|r| r[4].parse().unwrap()).collect();
    assert!(z0.windows(2).all(|w| w[1] <= w[0]));
    assert!(rows.iter().all(|r| r[3] == "CERTIFIED"));
}

#[test]
fn ratio_sweep_certifies() {
    let dir = tempfile::tempdir().unwrap();
    let o = fockrg(
        dir.path(),
        &[
            "sweep",
            "--axis",
            "rho",
            "--values",
            "0.4,0.45,0.5",
            "--set",
            "model.g=0.02",
        ],
    );
    assert_eq!(o.status.code(), Some(0));
    let rows = sweep_rows(dir.path());
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r[2] == "ok" && r[3] == "CERTIFIED"));
}

#[test]
fn failed_sweep_runs_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let o = fockrg(
        dir.path(),
        &[
            "sweep",
            "--axis",
            "max_total",
            "--values",
            "2,3",
            "--set",
            "model.modes=6",
            "--set",
            "flow.leak_budget=1e-6",
        ],
    );
    assert_eq!(o.status.code(), Some(0));
    let rows = sweep_rows(dir.path());
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r[2] == "error"));
    let o = fockrg(dir.path(), &["sweep", "--axis", "omega", "--values", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oracle_reports_ground_state() {
    let dir = tempfile::tempdir().unwrap();
    let o = fockrg(dir.path(), &["oracle", "--k", "3", "--set", "model.g=0"]);
    assert_eq!(o.status.code(), Some(0));
    let v = read_json(&dir.path().join("oracle.json"));
    assert_eq!(v["oracle"]["ground_energy"].as_f64().unwrap(), 0.0);
    assert_eq!(v["oracle"]["ground_multiplicity"], 1);
    assert_eq!(v["oracle"]["lowest"].as_array().unwrap().len(), 3);
}

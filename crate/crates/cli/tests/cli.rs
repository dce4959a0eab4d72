use std::path::Path;
use std::process::{Command, Output};

use lastzero::harness::Table;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lastzero"))
}

fn write_bm(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("bm.toml");
    std::fs::write(&p, "kind = \"bm\"\nmu = 0.0\nsigma = 1.0\n").unwrap();
    p
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

#[test]
fn scale_grid_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_bm(dir.path());
    let out = dir.path().join("w.csv");
    let o = run(bin()
        .args(["scale", "--q", "0.5", "--grid", "0:5:0.01", "--model"])
        .arg(&model)
        .arg("--out")
        .arg(&out));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let table = Table::from_csv(&text).unwrap();
    assert_eq!(table.rows.len(), 501);
    assert_eq!(table.to_csv().unwrap(), text);
    // W(1) = 2 sinh(1)
    let w1 = table.rows[100][1];
    assert!((w1 - 2.0 * 1f64.sinh()).abs() < 1e-12);
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_bm(dir.path());
    let o = run(bin().args(["identity", "--name", "nope", "--model"]).arg(&model));
    assert_eq!(o.status.code(), Some(2));
    let o = run(bin().args(["verify", "--n", "100"]).arg("--model").arg(&model));
    assert_eq!(o.status.code(), Some(2), "missing seed");
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "kind = \"bm\"\nmu = 0.0\nsigma = 0.0\n").unwrap();
    let o = run(bin().args(["scale", "--model"]).arg(&bad));
    assert_eq!(o.status.code(), Some(2), "monotone model");
}

#[test]
fn zero_budget_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_bm(dir.path());
    let o = run(bin().args(["verify", "--seed", "7", "--n", "0", "--model"]).arg(&model));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("simulate.n"));
}

#[test]
fn flags_win_unless_config_priority() {
    let dir = tempfile::tempdir().unwrap();
    write_bm(dir.path());
    let spec = dir.path().join("spec.toml");
    std::fs::write(&spec, "seed = 3\n[model]\nfile = \"bm.toml\"\n[identity]\nname = \"first_passage_up\"\nq = 0.5\n[identity.args]\na = 2.0\n").unwrap();
    let value = |extra: &[&str]| -> f64 {
        let o = run(bin().args(["identity", "--config"]).arg(&spec).args(extra));
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        v["value"].as_f64().unwrap()
    };
    assert!((value(&[]) - (-2.0f64).exp()).abs() < 1e-12);
    assert!((value(&["--arg", "a=1"]) - (-1.0f64).exp()).abs() < 1e-12);
    assert!((value(&["--arg", "a=1", "--config-priority"]) - (-2.0f64).exp()).abs() < 1e-12);
}

#[test]
fn generator_annihilates_martingale() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_bm(dir.path());
    let o = run(bin()
        .args(["generator", "--testfn", "expmart:beta=0.5", "--state", "0,0,1", "--model"])
        .arg(&model));
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["value"].as_f64().unwrap().abs() < 1e-12);
}

#[test]
fn trace_has_expected_columns() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_bm(dir.path());
    let out = dir.path().join("trace.csv");
    let o = run(bin()
        .args(["simulate", "--T", "2", "--h", "0.01", "--seed", "7", "--eps", "0.4", "--model"])
        .arg(&model)
        .arg("--emit")
        .arg(&out));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let t = Table::from_csv(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(t.columns, ["t", "X", "g", "U", "M_eps"]);
    assert_eq!(t.rows.len(), 201);
    for r in &t.rows {
        assert!(r[2] <= r[0] && (r[3] - (r[0] - r[2])).abs() < 1e-12);
    }
}

#[test]
fn verify_csv_independent_of_threads() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_bm(dir.path());
    let mut outs = Vec::new();
    for threads in ["1", "8"] {
        let out = dir.path().join(format!("report_{threads}.csv"));
        let json = dir.path().join(format!("report_{threads}.json"));
        let o = run(bin()
            .env("LASTZERO_THREADS", threads)
            .args(["verify", "--seed", "11", "--n", "2000", "--no-local-time", "--model"])
            .arg(&model)
            .arg("--out-csv")
            .arg(&out)
            .arg("--out-json")
            .arg(&json));
        assert!(matches!(o.status.code(), Some(0) | Some(1)), "{}", String::from_utf8_lossy(&o.stderr));
        outs.push(std::fs::read(&out).unwrap());
        let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
        assert_eq!(report["environment"]["threads"].as_u64().unwrap().to_string(), threads);
    }
    assert_eq!(outs[0], outs[1]);
}

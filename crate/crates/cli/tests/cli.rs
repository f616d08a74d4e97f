use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mctou::ParamsDocument;
use serde_json::Value;

fn preset() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets/table1.json")
}

fn mctou(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mctou"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn preset_is_the_published_parameter_set() {
    assert_eq!(
        ParamsDocument::load(&preset()).unwrap(),
        ParamsDocument::table1()
    );
}

#[test]
fn validate_preset() {
    let o = mctou(&["validate", "--params", preset().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("status,valid"));
}

#[test]
fn invalid_parameters_exit_one_and_list_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc = ParamsDocument::table1();
    doc.rho12 = 1.0;
    doc.kappa = -1.0;
    let p = dir.path().join("bad.json");
    fs::write(&p, doc.to_json()).unwrap();
    let o = mctou(&["validate", "--params", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("rho12") && err.contains("kappa"), "{err}");
}

#[test]
fn unknown_key_in_params_file_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("typo.json");
    fs::write(
        &p,
        ParamsDocument::table1()
            .to_json()
            .replace("\"kappa\"", "\"kapa\""),
    )
    .unwrap();
    let o = mctou(&["validate", "--params", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn one_contract_certainty_equivalent() {
    let o = mctou(&[
        "ce",
        "--params",
        preset().to_str().unwrap(),
        "--contracts",
        "T1",
        "--gamma",
        "1",
        "--horizon",
        "0.08333",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let row: Vec<&str> = out.lines().nth(1).unwrap().split(',').collect();
    let ce: f64 = row[4].parse().unwrap();
    let ce_e4: f64 = row[5].parse().unwrap();
    assert!((ce_e4 - 0.502).abs() / 0.502 < 0.01, "{ce_e4}");
    assert!((ce * 1e4 - ce_e4).abs() < 1e-12);
}

#[test]
fn duplicate_maturity_rejected() {
    let o = mctou(&[
        "ce",
        "--params",
        preset().to_str().unwrap(),
        "--contracts",
        "T1,T1",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("duplicate maturity"));
}

#[test]
fn redundant_contract_is_a_numerical_failure() {
    let o = mctou(&["strategy", "--contracts", "T1,0.0833333333334"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(mctou(&["ce", "--bogus"]).status.code(), Some(64));
    assert_eq!(mctou(&["frobnicate"]).status.code(), Some(64));
    assert_eq!(mctou(&["ce", "--gamma", "abc"]).status.code(), Some(64));
    assert_eq!(mctou(&["--help"]).status.code(), Some(0));
}

#[test]
fn unknown_figure_is_rejected() {
    let o = mctou(&["figures", "--which", "fig9"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("fig9"));
}

#[test]
fn curve_header_and_values() {
    let o = mctou(&["curve", "--contracts", "T3,T1"]);
    let out = stdout(&o);
    let mut lines = out.lines();
    assert_eq!(lines.next().unwrap(), "t,maturity,a1,a2,a3,beta,price");
    let first: Vec<f64> = lines
        .next()
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(first[1], 1.0 / 12.0);
    assert!((first[2] - 0.65924).abs() < 1e-5);
}

#[test]
fn strategy_header() {
    let o = mctou(&["strategy", "--contracts", "T1,T2"]);
    let out = stdout(&o);
    assert_eq!(
        out.lines().next().unwrap(),
        "t,pi_1,pi_2,lambda_sq,cond_number"
    );
    assert_eq!(out.lines().count(), 1 + 22);
}

#[test]
fn json_format() {
    let o = mctou(&[
        "price",
        "--format",
        "json",
        "--contracts",
        "T2",
        "--x",
        "0,0,0",
    ]);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["columns"][0], "contract");
    assert!(v["rows"][0][3].as_f64().unwrap() > 0.0);
}

fn run_into(dir: &Path, args: &[&str]) {
    let mut full: Vec<&str> = args.to_vec();
    full.extend(["--out", dir.to_str().unwrap()]);
    let o = mctou(&full);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn simulate_outputs_are_reproducible_with_manifest() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = [
        "simulate",
        "--paths",
        "3",
        "--seed",
        "7",
        "--contracts",
        "T1,T2",
    ];
    run_into(a.path(), &args);
    run_into(b.path(), &args);
    let csv_a = fs::read(a.path().join("simulate.csv")).unwrap();
    assert_eq!(csv_a, fs::read(b.path().join("simulate.csv")).unwrap());
    let text = String::from_utf8(csv_a).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "path_id,t,x1,x2,x3,F1,F2,pi1,pi2,wealth"
    );
    assert_eq!(text.lines().count(), 1 + 3 * 22);

    let m: Value =
        serde_json::from_str(&fs::read_to_string(a.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["seed"], 7);
    assert_eq!(m["config"]["grid"]["n_steps"], 21);
    assert_eq!(m["params"]["kappa"], 5.0);
    assert!(m["version"].is_string() && m["created"].is_string());

    let other = tempfile::tempdir().unwrap();
    run_into(
        other.path(),
        &[
            "simulate",
            "--paths",
            "3",
            "--seed",
            "8",
            "--contracts",
            "T1,T2",
        ],
    );
    assert_ne!(
        fs::read(other.path().join("simulate.csv")).unwrap(),
        fs::read(b.path().join("simulate.csv")).unwrap()
    );
}

#[test]
fn ce_table_files_match_published_grid() {
    let dir = tempfile::tempdir().unwrap();
    run_into(
        dir.path(),
        &["ce-table", "--params", preset().to_str().unwrap()],
    );
    let grid = fs::read_to_string(dir.path().join("ce_table.csv")).unwrap();
    assert_eq!(grid.lines().count(), 10);
    let cmp = fs::read_to_string(dir.path().join("ce_table_comparison.csv")).unwrap();
    assert_eq!(cmp.lines().count(), 1 + 63);
    assert!(cmp.lines().skip(1).all(|l| l.ends_with(",true")));
    let m: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(
        m["outputs"],
        serde_json::json!(["ce_table.csv", "ce_table_comparison.csv"])
    );
}

#[test]
fn figures_are_written() {
    let dir = tempfile::tempdir().unwrap();
    run_into(dir.path(), &["figures"]);
    for f in [
        "fig1.csv",
        "fig2.csv",
        "fig3.csv",
        "fig4.csv",
        "manifest.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let again = tempfile::tempdir().unwrap();
    run_into(again.path(), &["figures", "--which", "fig3"]);
    assert_eq!(
        fs::read(dir.path().join("fig3.csv")).unwrap(),
        fs::read(again.path().join("fig3.csv")).unwrap()
    );
}

#[test]
fn verify_mc_report() {
    let o = mctou(&["verify-mc", "--paths", "2000", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let r = &v["value_function"];
    assert_eq!(r["n_paths"], 2000);
    assert!(r["mc_se"].as_f64().unwrap() > 0.0);
    assert!((r["closed_form"].as_f64().unwrap() + 0.95899).abs() < 1e-4);
    assert_eq!(v["martingale"].as_array().unwrap().len(), 3);
    assert_eq!(
        mctou(&["verify-mc", "--paths", "10"]).status.code(),
        Some(1)
    );
}

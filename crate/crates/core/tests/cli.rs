use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn spec_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../specs")
        .join(name)
}

fn rdg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rdg"))
        .args(args)
        .output()
        .expect("rdg runs")
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("JSON report")
}

fn without_wall_time(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("wall_time_ms");
    v
}

#[test]
fn solve_e2_reports_the_value_and_the_argmin_kernel() {
    let out = rdg(&["solve", spec_path("e2.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r["command"], "solve");
    assert!((r["results"]["V0"].as_f64().unwrap() - 1.2).abs() < 1e-12);
    assert_eq!(r["results"]["p_star"]["0"], 1);
    assert_eq!(
        r["results"]["gamma_star_depth_histogram"],
        serde_json::json!([0, 2])
    );
    assert_eq!(r["spec_digest"].as_str().unwrap().len(), 64);
}

#[test]
fn oracle_e1_has_zero_gaps() {
    let out = rdg(&[
        "oracle",
        spec_path("e1.json").to_str().unwrap(),
        "--all-orders",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out)["results"].clone();
    assert_eq!(r["coincidence_gap"], 0.0);
    assert_eq!(r["lower"], 2.0);
    assert_eq!(r["upper"], 2.0);
    assert_eq!(r["counts"]["stopping_times"], 2);
    assert_eq!(r["counts"]["policies"], 1);
    assert_eq!(r["orders"].as_object().unwrap().len(), 6);
}

#[test]
fn converge_e3_gaps() {
    let out = rdg(&[
        "converge",
        spec_path("e3.json").to_str().unwrap(),
        "--n-max",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let rows = report(&out)["results"]["rows"].as_array().unwrap().clone();
    let gaps: Vec<f64> = rows.iter().map(|r| r["gap"].as_f64().unwrap()).collect();
    assert_eq!(gaps, vec![10.0, 0.0, 0.0]);
    assert_eq!(rows[0]["V_n0"], 0.0);
}

#[test]
fn dump_values_writes_the_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("values.csv");
    let out = rdg(&[
        "solve",
        spec_path("e3.json").to_str().unwrap(),
        "--dump-values",
        csv_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    let headers: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        headers,
        [
            "node_id",
            "depth",
            "L",
            "U",
            "g",
            "cont",
            "v",
            "tau_star",
            "gamma_star"
        ]
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 7);
    assert_eq!(&rows[1][6], "10");
    assert_eq!(&rows[1][7], "1");
}

#[test]
fn sweep_is_byte_identical_across_runs_and_workers() {
    let a = rdg(&["sweep", "--count", "3", "--seed", "7", "--workers", "1"]);
    let b = rdg(&["sweep", "--count", "3", "--seed", "7", "--workers", "1"]);
    let c = rdg(&["sweep", "--count", "3", "--seed", "7", "--workers", "4"]);
    assert_eq!(a.status.code(), Some(0));
    let (a, b, c) = (
        without_wall_time(report(&a)),
        without_wall_time(report(&b)),
        without_wall_time(report(&c)),
    );
    assert_eq!(a.to_string(), b.to_string());
    assert_eq!(a.to_string(), c.to_string());
}

#[test]
fn invalid_spec_exits_with_two_and_names_the_node() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(spec_path("e1.json")).unwrap();
    let bad = text.replace(r#""U": {"0": 2.0"#, r#""U": {"0": -1.0"#);
    assert_ne!(bad, text);
    let path = dir.path().join("bad.json");
    std::fs::write(&path, bad).unwrap();
    let out = rdg(&["solve", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("node 0"), "{err}");
}

#[test]
fn a_failed_tolerance_exits_with_one() {
    let out = rdg(&[
        "oracle",
        spec_path("e2.json").to_str().unwrap(),
        "--tol-oracle=-1",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(report(&out)["passed"], false);
}

#[test]
fn sde_check_on_the_singular_lattice() {
    let out = rdg(&[
        "sde-check",
        spec_path("sde_singular.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out)["results"].clone();
    assert_eq!(r["singular"], true);
    assert_eq!(r["root_pairs_disjoint"], r["root_pairs_checked"]);
    assert_eq!(r["scaling"].as_array().unwrap().len(), 3);
}

#[test]
fn sde_check_needs_a_generator() {
    let out = rdg(&["sde-check", spec_path("e1.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn paste_check_passes_on_a_lattice() {
    let out = rdg(&[
        "paste-check",
        spec_path("sde_dominated.json").to_str().unwrap(),
        "--count",
        "20",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(report(&out)["results"]["closure_failures"], 0);
}

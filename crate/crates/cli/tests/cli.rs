use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn lcm(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lcm"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = lcm(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_degenerate_pool_gives_all_ones() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        &["simulate", "--n", "4", "--j", "3", "--l", "1", "--theta-pool", "1.0", "--out", "r.csv", "--truth", "t.json"],
        d,
    );
    assert_eq!(std::fs::read_to_string(d.join("r.csv")).unwrap(), "1,1,1\n".repeat(4));
    let t = json(d.join("t.json"));
    assert_eq!(t["model"], "random");
    assert_eq!(t["theta"].as_array().unwrap().len(), 3);
    assert_eq!(t["p"], serde_json::json!([1.0]));
    assert_eq!(t["seed"], 0);
}

#[test]
fn simulate_rejects_two_items() {
    let dir = tempfile::tempdir().unwrap();
    let out = lcm(
        &["simulate", "--n", "4", "--j", "2", "--l", "1", "--out", "r.csv", "--truth", "t.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("J >= 3"));
}

#[test]
fn simulate_fixed_writes_labels() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        &["simulate", "--n", "30", "--j", "6", "--l", "2", "--model", "fixed", "--seed", "3", "--out", "r.csv", "--truth", "t.json"],
        d,
    );
    let t = json(d.join("t.json"));
    let z = t["z"].as_array().unwrap();
    assert_eq!(z.len(), 30);
    assert!(z.iter().all(|v| (1..=2).contains(&v.as_u64().unwrap())));
    assert!(t.get("p").is_none());
}

#[test]
fn tensor_em_improves_on_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        &["simulate", "--n", "1000", "--j", "30", "--l", "3", "--seed", "9", "--out", "r.csv", "--truth", "t.json"],
        d,
    );
    ok(&["fit", "--data", "r.csv", "--l", "3", "--method", "tensor", "--out", "a.json"], d);
    ok(&["fit", "--data", "r.csv", "--l", "3", "--method", "tensor-em", "--out", "b.json"], d);
    let (a, b) = (json(d.join("a.json")), json(d.join("b.json")));
    assert_eq!(b["converged"], true);
    assert!(b["loglik"].as_f64().unwrap() >= a["loglik"].as_f64().unwrap());
    for key in ["p", "theta", "loglik", "iterations", "converged", "runtime_ms", "method"] {
        assert!(b.get(key).is_some(), "missing {key}");
    }
    assert_eq!(b["method"], "tensor-em");
}

#[test]
fn em_init_wiring_and_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        &["simulate", "--n", "500", "--j", "9", "--l", "2", "--seed", "1", "--out", "r.csv", "--truth", "t.json"],
        d,
    );
    let out = lcm(&["fit", "--data", "r.csv", "--l", "2", "--method", "em-init", "--out", "f.json"], d);
    assert_eq!(out.status.code(), Some(2));
    ok(
        &["fit", "--data", "r.csv", "--l", "2", "--method", "em-init", "--init", "t.json", "--out", "f.json"],
        d,
    );
    let f = json(d.join("f.json"));
    assert_eq!(f["method"], "em-init");
    assert_eq!(f["converged"], true);
}

#[test]
fn fit_round_trips_through_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        &["simulate", "--n", "400", "--j", "12", "--l", "2", "--model", "fixed", "--seed", "5", "--out", "r.csv", "--truth", "t.json"],
        d,
    );
    ok(&["fit", "--data", "r.csv", "--l", "2", "--model", "fixed", "--out", "f.json"], d);
    let v: Value = serde_json::from_str(&ok(&["eval", "--truth", "t.json", "--est", "f.json"], d)).unwrap();
    assert!(v["mse"].as_f64().unwrap() < 0.01);
    assert!(v["n_errors"].as_u64().is_some());
    assert_eq!(v["permutation"].as_array().unwrap().len(), 2);

    // An estimate equal to the truth.
    let same: Value = serde_json::from_str(&ok(&["eval", "--truth", "t.json", "--est", "t.json"], d)).unwrap();
    assert_eq!(same["mse"], 0.0);
    assert_eq!(same["n_errors"], 0);
    assert_eq!(same["permutation"], serde_json::json!([1, 2]));
}

#[test]
fn eval_eight_subject_example_and_swap() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let theta = "[[0.9, 0.1], [0.8, 0.3], [0.2, 0.7]]";
    std::fs::write(
        d.join("t.json"),
        format!(r#"{{"model":"fixed","z":[1,1,1,1,2,1,2,2],"theta":{theta},"seed":0}}"#),
    )
    .unwrap();
    std::fs::write(
        d.join("e.json"),
        r#"{"z":[1,1,1,1,1,2,2,2],"theta":[[0.1, 0.9], [0.3, 0.8], [0.7, 0.2]]}"#,
    )
    .unwrap();
    let v: Value = serde_json::from_str(&ok(&["eval", "--truth", "t.json", "--est", "e.json"], d)).unwrap();
    assert_eq!(v["n_errors"], 2);
    assert_eq!(v["error_rate"], 0.25);
    assert_eq!(v["mse"], 0.0);
    assert_eq!(v["permutation"], serde_json::json!([2, 1]));

    let only: Value = serde_json::from_str(&ok(
        &["eval", "--truth", "t.json", "--est", "e.json", "--metric", "errors"],
        d,
    ))
    .unwrap();
    assert_eq!(only["n_errors"], 2);
    assert!(only["mse"].is_null());

    std::fs::write(d.join("bad.json"), r#"{"theta":[[0.5],[0.5],[0.5]]}"#).unwrap();
    let out = lcm(&["eval", "--truth", "t.json", "--est", "bad.json"], d);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn select_reports_consistent_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        &["simulate", "--n", "800", "--j", "24", "--l", "3", "--seed", "2", "--out", "r.csv", "--truth", "t.json"],
        d,
    );
    let stdout = ok(
        &["select", "--data", "r.csv", "--l-min", "3", "--l-max", "3", "--criterion", "gic1", "--out", "g.csv"],
        d,
    );
    assert_eq!(stdout.trim(), "selected_L=3");
    let stdout = ok(
        &["select", "--data", "r.csv", "--l-min", "1", "--l-max", "5", "--criterion", "gic2", "--out", "g.csv"],
        d,
    );
    assert_eq!(stdout.trim(), "selected_L=3");
    let mut reader = csv::Reader::from_path(d.join("g.csv")).unwrap();
    let mut rows = 0;
    for rec in reader.records() {
        let rec = rec.unwrap();
        let f = |i: usize| rec[i].parse::<f64>().unwrap();
        let (ll, dim) = (f(1), f(2));
        assert!((f(4) - (-2.0 * ll + f(3) * dim)).abs() < 1e-9 * f(4).abs().max(1.0));
        assert!((f(6) - (-2.0 * ll + f(5) * dim)).abs() < 1e-9 * f(6).abs().max(1.0));
        rows += 1;
    }
    assert_eq!(rows, 5);
    let out = lcm(&["select", "--data", "r.csv", "--l-min", "2", "--l-max", "4", "--out", "g.csv"], d);
    assert_eq!(out.status.code(), Some(2), "criterion is required");
}

#[test]
fn ingest_recodes_by_sign() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("raw.csv"), "q1,q2,q3\n4,1,5\n5,3,2\n7,4,6\n").unwrap();
    std::fs::write(d.join("key.csv"), "item_index,sign\n1,+\n2,-\n3,+\n").unwrap();
    ok(&["ingest", "--raw", "raw.csv", "--has-header", "--key", "key.csv", "--out", "r.csv"], d);
    assert_eq!(
        std::fs::read_to_string(d.join("r.csv")).unwrap(),
        "0,1,1\n1,1,0\n1,0,1\n"
    );
    std::fs::write(d.join("raw.csv"), "0,1,5\n").unwrap();
    let out = lcm(&["ingest", "--raw", "raw.csv", "--key", "key.csv", "--out", "r.csv"], d);
    assert_eq!(out.status.code(), Some(3));
    std::fs::write(d.join("raw.csv"), "1,1\n").unwrap();
    let out = lcm(&["ingest", "--raw", "raw.csv", "--key", "key.csv", "--out", "r.csv"], d);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn profile_grid() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("f.json"),
        r#"{"p":[0.5,0.5],"theta":[[0.3,0.7],[0.3,0.7],[0.5,0.5],[0.5,0.5],[0.7,0.3],[0.7,0.3]]}"#,
    )
    .unwrap();
    std::fs::write(d.join("g.csv"), "item,group\n1,A\n2,A\n3,B\n4,B\n5,C\n6,C\n").unwrap();
    ok(&["profile", "--est", "f.json", "--groups", "g.csv", "--out", "p.csv", "--means-out", "m.csv"], d);
    assert_eq!(
        std::fs::read_to_string(d.join("p.csv")).unwrap(),
        "group,class_1,class_2\nA,low,high\nB,medium,medium\nC,high,low\n"
    );
    assert!(std::fs::read_to_string(d.join("m.csv")).unwrap().starts_with("group,class_1,class_2\nA,0.3,0.7\n"));
    std::fs::write(d.join("g.csv"), "1,A\n9,B\n").unwrap();
    let out = lcm(&["profile", "--est", "f.json", "--groups", "g.csv", "--out", "p.csv"], d);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn benchmark_csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        &["benchmark", "--n", "300", "--j", "12", "--l", "2", "--model", "fixed", "--reps", "2", "--threads", "2", "--out", "b.csv"],
        d,
    );
    let text = std::fs::read_to_string(d.join("b.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "setting_id,method,rep,mse,loglik,runtime_ms,error_rate"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 8);
    assert!(rows[0].starts_with("s1,em_true,0,"));
    for row in rows {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols.len(), 7);
        assert!(cols[6].parse::<f64>().is_ok());
    }
}

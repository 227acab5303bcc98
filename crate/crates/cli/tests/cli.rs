use std::path::Path;
use std::process::{Command, Output};

fn racetee(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_racetee")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name).display().to_string()
}

#[test]
fn lists_bundled_scenarios() {
    let o = racetee(&["list"]);
    assert!(o.status.success());
    let names: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(names.len(), 8);
    assert!(names.contains(&"key_rotation".to_string()));
}

#[test]
fn schema_is_json() {
    let o = racetee(&["schema"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["properties"]["script"].is_object());
}

#[test]
fn clean_run_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = racetee(&["run", "compute_cost", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["scenario"], "compute_cost");
    assert!(v["invariant_violations"].as_array().unwrap().is_empty());
    for f in ["report.json", "chain.jsonl", "metrics.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert_eq!(std::fs::read_to_string(out.join("report.json")).unwrap().trim(), stdout(&o).trim());
}

#[test]
fn csv_format_and_seed_override() {
    let a = racetee(&["run", "auction", "--format", "csv", "--seed", "4"]);
    assert!(a.status.success());
    assert!(stdout(&a).starts_with("script_index,user,action"));
    let b = racetee(&["run", "auction", "--seed", "4"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&b)).unwrap();
    assert_eq!(v["seed"], 4);
}

#[test]
fn leak_exits_one() {
    let o = racetee(&["run", &fixture("leaky.toml")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("taint"));
}

#[test]
fn bad_input_exits_two() {
    let o = racetee(&["run", "no_such_scenario"]);
    assert_eq!(o.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "name = \"x\"\nseed = 1\nnodes = 2\ncommittee = 1\nend_tick = 60\nusers = []\nbogus = 1\n").unwrap();
    let o = racetee(&["run", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 7"), "{}", stderr(&o));
}

#[test]
fn analyze_rsts() {
    let o = racetee(&["analyze", "rsts", "--n", "10", "--m", "4", "--s", "5", "--t", "4", "--trials", "20000"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["epsilon_exact"], "1/42");
    assert!(v["montecarlo"]["p"].as_f64().unwrap() > 0.0);

    let o = racetee(&["analyze", "rsts", "--n", "10000", "--m", "3333", "--s", "38", "--t", "35", "--format", "csv"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let row = text.lines().nth(1).unwrap();
    let log10: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
    assert!(log10 < -12.0);

    let o = racetee(&["analyze", "rsts", "--n", "10", "--m", "4", "--s", "11", "--t", "4"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn analyze_liveness() {
    let o = racetee(&["analyze", "liveness", "--n", "20", "--c", "4", "--t", "5"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["delta_exact"], "2101/3125");
    assert!((v["delta"].as_f64().unwrap() - 0.67232).abs() < 1e-12);
    let o = racetee(&["analyze", "liveness", "--n", "3", "--c", "4", "--t", "5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_runs_a_small_grid() {
    let o = racetee(&["sweep", "dropout_recovery", "--param", "committee=1,2", "--trials", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("committee,c_over_n,runs,mean_availability_gaps,mean_redundant_publishes,mean_latency_blocks,invariant_failures")
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.ends_with(",0")));
}

#[test]
fn sweep_refuses_oversized_grids() {
    let o = racetee(&[
        "sweep", "token", "--param", "committee=1,2,3,4", "--param", "network.max_delay=2,3,4,5,6", "--trials", "30",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("budget"), "{}", stderr(&o));
    let o = racetee(&["sweep", "token", "--param", "a=1", "--param", "b=1", "--param", "c=1"]);
    assert_eq!(o.status.code(), Some(2));
}

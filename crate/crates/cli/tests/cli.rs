use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn castel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_castel"))
        .args(args)
        .env_remove("CASTEL_STATE_LIMIT")
        .output()
        .expect("spawn castel")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn zero_horizon_is_config_error() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");
    let o = castel(&["simulate", "--horizon", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("horizon"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(castel(&["simulate", "--bogus"]).status.code(), Some(2));
    assert_eq!(castel(&["frobnicate"]).status.code(), Some(2));
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(castel(&["simulate", "--jobs", "0", "--out", out]).status.code(), Some(2));
    assert_eq!(castel(&["simulate", "--runs", "0", "--out", out]).status.code(), Some(2));
    let missing = dir.path().join("missing.json");
    let o = castel(&["simulate", "--scenario", missing.to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn both_models_in_one_scenario_rejected() {
    let dir = TempDir::new().unwrap();
    let s = write(
        &dir,
        "s.json",
        r#"{"deadspot": {}, "net": {"places": [], "transitions": []}}"#,
    );
    let o = castel(&["simulate", "--scenario", &s, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn no_jmp_reports_zero_jumps() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");
    let o = castel(&[
        "simulate",
        "--scenario",
        data("dense.json").to_str().unwrap(),
        "--runs",
        "10",
        "--no-jmp",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = json(&out.join("summary.json"));
    assert_eq!(s["jumps"], 0);
    assert_eq!(s["jmp"], false);
    assert!(s["transitions"].get("jmp").is_none());
    assert_eq!(s["delivery"]["empty_jumps"], 0);

    let with = dir.path().join("w");
    let o = castel(&[
        "simulate",
        "--scenario",
        data("dense.json").to_str().unwrap(),
        "--runs",
        "10",
        "--out",
        with.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(json(&with.join("summary.json"))["jumps"].as_u64().unwrap() > 0);
}

#[test]
fn simulate_writes_outputs() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");
    let o = castel(&["simulate", "--runs", "3", "--horizon", "20", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["summary.json", "trace.csv", "trace.bin", "deliveries.csv", "timing.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let s = json(&out.join("summary.json"));
    assert_eq!(s["runs"], 3);
    assert_eq!(s["seed"], 42);
    let per: u64 = s["transitions"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(per, s["events"].as_u64().unwrap());
}

#[test]
fn simulate_generic_net() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");
    let o = castel(&["simulate", "--scenario", data("toy.json").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = json(&out.join("summary.json"));
    assert_eq!(s["model"], "net");
    assert!(s["delivery"].is_null());
    // Every run moves the three tokens well within the horizon almost surely.
    assert!(s["transitions"]["move"].as_u64().unwrap() <= 150);
    assert_eq!(s["events"], s["transitions"]["move"]);

    let o = castel(&["simulate", "--scenario", data("toy.json").to_str().unwrap(), "--no-jmp"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn outputs_independent_of_jobs() {
    let dir = TempDir::new().unwrap();
    let run = |jobs: &str| {
        let out = dir.path().join(format!("j{jobs}"));
        let o = castel(&[
            "simulate",
            "--runs",
            "8",
            "--horizon",
            "30",
            "--jobs",
            jobs,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let (a, b) = (run("1"), run("3"));
    for f in ["summary.json", "trace.csv", "trace.bin", "deliveries.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn reach_toy_net_has_four_states() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");
    let o = castel(&["reach", "--scenario", data("toy.json").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("states: 4"), "{text}");
    assert!(text.contains("edges: 3"), "{text}");
    let tra = fs::read_to_string(out.join("reach.tra")).unwrap();
    assert_eq!(tra.lines().count(), 4, "{tra}");
    let lab = fs::read_to_string(out.join("reach.lab")).unwrap();
    assert!(lab.contains("deadlock"));
    assert!(fs::read_to_string(out.join("reach.dot")).unwrap().starts_with("digraph"));
}

#[test]
fn reach_unfold_tiny_is_isomorphic() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");
    let o = castel(&[
        "reach",
        "--scenario",
        data("tiny.json").to_str().unwrap(),
        "--unfold",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("isomorphic: true"));
    let eq = json(&out.join("equivalence.json"));
    assert_eq!(eq["coloured_states"], eq["basic_states"]);
    assert!(json(&out.join("unfolded.json"))["transitions"].as_array().unwrap().len() > 0);
}

#[test]
fn reach_over_limit_fails_with_frontier() {
    let dir = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_castel"))
        .args(["reach", "--out", dir.path().to_str().unwrap()])
        .env("CASTEL_STATE_LIMIT", "500")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("frontier"), "{}", stderr(&o));

    let o = Command::new(env!("CARGO_BIN_EXE_castel"))
        .args(["reach", "--out", dir.path().to_str().unwrap()])
        .env("CASTEL_STATE_LIMIT", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn check_tautology_holds() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "f.txt", "P>=0.5 [ F[t<=5] true ]\n");
    let out = dir.path().join("o");
    let o = castel(&["check", "--formula", &f, "--runs", "50", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = json(&out.join("check.json"));
    assert_eq!(r["smc"]["verdict"], "holds");
    assert_eq!(r["smc"]["successes"], 50);
    assert!(r["exact"].is_null());
}

#[test]
fn check_exact_on_tiny_reports_both() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "f.txt", "P>=0.5 [ count(Z) = 0 U[t<=1] count(Z) = 1 ]");
    let out = dir.path().join("o");
    let o = castel(&[
        "check",
        "--scenario",
        data("tiny.json").to_str().unwrap(),
        "--formula",
        &f,
        "--exact",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = json(&out.join("check.json"));
    let p = r["exact"]["probability"].as_f64().unwrap();
    // Two free slots enter at rate 1 each.
    assert!((p - (1.0 - (-2.0f64).exp())).abs() < 1e-6, "{p}");
    let (lo, hi) = (r["smc"]["lo"].as_f64().unwrap(), r["smc"]["hi"].as_f64().unwrap());
    assert!(lo <= p && p <= hi, "{lo} {p} {hi}");

    let unf = dir.path().join("u");
    let o = castel(&[
        "check",
        "--scenario",
        data("tiny.json").to_str().unwrap(),
        "--formula",
        &f,
        "--exact",
        "--unfold",
        "--out",
        unf.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let q = json(&unf.join("check.json"))["exact"]["probability"].as_f64().unwrap();
    assert!((p - q).abs() < 1e-9);
}

#[test]
fn check_bubble_on_dense_scenario() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "f.txt", "P>=0.2 [ F[t<=20] bubble(3) ]");
    let out = dir.path().join("o");
    let o = castel(&[
        "check",
        "--scenario",
        data("dense.json").to_str().unwrap(),
        "--formula",
        &f,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = json(&out.join("check.json"));
    let est = r["smc"]["estimate"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&est));
    assert!(["holds", "fails", "undecided"].contains(&r["smc"]["verdict"].as_str().unwrap()));
    assert!(stdout(&o).contains("bubble(3)"));
}

#[test]
fn check_bad_formula_reports_offset() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "f.txt", "P>=0.5 [ F[t<=5] count(K) >< 2 ]");
    let o = castel(&["check", "--formula", &f, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("offset"), "{}", stderr(&o));
}

#[test]
fn check_exact_over_limit_fails() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "f.txt", "P>=0.5 [ F[t<=1] count(Z) = 1 ]");
    let o = Command::new(env!("CARGO_BIN_EXE_castel"))
        .args(["check", "--formula", &f, "--exact", "--runs", "10", "--out", dir.path().to_str().unwrap()])
        .env("CASTEL_STATE_LIMIT", "100")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("frontier"));
}

#[test]
fn sweep_single_cell_one_row_per_metric() {
    let dir = TempDir::new().unwrap();
    let g = write(&dir, "g.json", r#"{"grid": {"N": [3, 3]}, "runs": 2, "metrics": ["mean_delay"]}"#);
    let out = dir.path().join("o");
    let o = castel(&["sweep", "--grid", &g, "--horizon", "20", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("duplicate"), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2, "{csv}");
    assert!(lines[1].starts_with("3,mean_delay,"));
    let long = fs::read_to_string(out.join("sweep_long.csv")).unwrap();
    assert_eq!(long.lines().count(), 3);
}

#[test]
fn sweep_nested_keys_and_unknown_keys() {
    let dir = TempDir::new().unwrap();
    let g = write(&dir, "g.json", r#"{"grid": {"rates.jmp": [1.0, 2.0]}, "runs": 1, "metrics": ["jumps"]}"#);
    let out = dir.path().join("o");
    let o = castel(&["sweep", "--grid", &g, "--horizon", "10", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("sweep.csv")).unwrap().lines().count(), 3);

    let g = write(&dir, "h.json", r#"{"grid": {"rates.warp": [1.0]}, "runs": 1}"#);
    assert_eq!(castel(&["sweep", "--grid", &g, "--out", out.to_str().unwrap()]).status.code(), Some(2));
    let g = write(&dir, "i.json", r#"{"grid": {"N": [0]}, "runs": 1}"#);
    assert_eq!(castel(&["sweep", "--grid", &g, "--out", out.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn satellite_sweep_has_fit_footer() {
    let dir = TempDir::new().unwrap();
    let g = write(&dir, "g.json", r#"{"grid": {"satellite": [1, 5, 9]}, "runs": 3, "metrics": ["mean_delay"]}"#);
    let out = dir.path().join("o");
    let o = castel(&["sweep", "--grid", &g, "--horizon", "20", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let footer: Vec<&str> = csv.lines().filter(|l| l.starts_with('#')).collect();
    assert_eq!(footer.len(), 2, "{csv}");
    assert!(footer[1].contains("A=") && footer[1].contains("R2="));
    let rep = json(&out.join("satellite.json"));
    assert_eq!(rep["points"].as_array().unwrap().len(), 3);
}

//! End-to-end tests of the `bootperc` binary: output formats, exit codes,
//! and the reproducibility contract.

use std::process::{Command, Output};

fn bootperc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bootperc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8 stdout")
}

#[test]
fn alpha_reproduces_the_table() {
    let out = bootperc(&["alpha", "--max-s", "14"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for needle in ["2 0 1\n", "3 1 5/3\n", "6 2 15/4\n", "11 3 38/5\n", "14 3 10\n"] {
        assert!(text.contains(needle), "missing row {needle:?} in: {text}");
    }
}

#[test]
fn classify_prints_class_and_stable_set() {
    let out = bootperc(&["classify", "--family", "N[1,2,4]r=6"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("critical, stable set S1_2 ∪ S1_3"));

    let out = bootperc(&["classify", "--family", "N[2,3,4]r=5"]);
    assert!(stdout(&out).contains("critical, stable set {±e1, ±e2, ±e3}"));

    let out = bootperc(&["classify", "--family", "N[1,1,1]r=4"]);
    assert!(stdout(&out).contains("subcritical, stable set S2"));

    // below the critical range there is no closed form; the probe summary
    // reports the stable directions found
    let out = bootperc(&["classify", "--family", "N[1,2,4]r=4"]);
    let text = stdout(&out);
    assert!(text.contains("supercritical"), "got: {text}");
    assert!(text.contains("probe summary"), "got: {text}");

    let out = bootperc(&["classify", "--family", "N[2,2,2]r=2"]);
    assert!(stdout(&out).contains("supercritical, stable set ∅ (probe-based)"));
}

#[test]
fn usage_errors_exit_1() {
    let out = bootperc(&["classify", "--family", "nope"]);
    assert_eq!(out.status.code(), Some(1));

    let out = bootperc(&["lc", "--family", "N[1,1]r=2"]);
    // missing required --p
    assert_eq!(out.status.code(), Some(1));

    let out = bootperc(&["grow", "--family", "N[1,1,2]r=4", "--base", "2,2", "--dir", "e3", "--p", "0.5"]);
    assert_eq!(out.status.code(), Some(1), "malformed --base triple");
}

#[test]
fn precondition_errors_exit_2() {
    // subcritical family has no critical length
    let out = bootperc(&[
        "lc", "--family", "N[1,1]r=3", "--p", "0.5", "--trials", "10", "--seed", "1",
    ]);
    assert_eq!(out.status.code(), Some(2));

    // density outside (0, 1]
    let out = bootperc(&[
        "prob", "--family", "N[1,1]r=2", "--l", "4", "--p", "0", "--trials", "10", "--seed", "1",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn resource_limit_exits_3() {
    let out = bootperc(&[
        "prob", "--family", "N[1,1]r=2", "--l", "100", "--p", "0.5", "--trials", "1",
        "--seed", "1", "--max-cells", "99",
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn lc_json_reproduces_bitwise() {
    let args = [
        "lc", "--family", "N[1,1]r=2", "--p", "0.25", "--trials", "300", "--seed", "42",
        "--lmax", "256",
    ];
    let a = bootperc(&args);
    let b = bootperc(&args);
    assert!(a.status.success());
    assert_eq!(stdout(&a), stdout(&b), "same seed must reproduce bit-identically");

    let doc: serde_json::Value = serde_json::from_str(&stdout(&a)).expect("valid json");
    assert_eq!(doc["command"], "lc");
    assert_eq!(doc["config"]["seed"], 42);
    assert!(doc["bracket"].is_array());
    assert!(doc["trace"].is_array());
    let first = &doc["trace"][0];
    for key in ["L", "succ", "trials", "ci"] {
        assert!(!first[key].is_null(), "trace entries carry {key}");
    }

    // round trip: re-running the embedded config reproduces the result
    let config = &doc["config"];
    let rerun = bootperc(&[
        "lc",
        "--family",
        config["family"].as_str().unwrap(),
        "--p",
        &config["p"].to_string(),
        "--trials",
        &config["trials"].to_string(),
        "--seed",
        &config["seed"].to_string(),
        "--lmax",
        &config["lmax"].to_string(),
        "--target",
        &config["target"].to_string(),
    ]);
    let redoc: serde_json::Value = serde_json::from_str(&stdout(&rerun)).unwrap();
    assert_eq!(doc["bracket"], redoc["bracket"]);
    assert_eq!(doc["trace"], redoc["trace"]);
}

#[test]
fn missing_seed_is_generated_and_printed() {
    let out = bootperc(&[
        "prob", "--family", "N[1,1]r=2", "--l", "3", "--p", "0.5", "--trials", "5",
    ]);
    assert!(out.status.success());
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    assert!(err.contains("seed:"), "generated seed must be printed: {err}");
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(doc["config"]["seed"].is_u64());
}

#[test]
fn closure_snapshot_round_trip() {
    let dir = std::env::temp_dir().join(format!("bootperc-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let input = dir.join("seed.bp");
    // diagonal of [3]^2 fills the box under N_2^{1,1}
    std::fs::write(&input, "BPGRID 2 3 3 closed\n0 1 3 1 3 1\n").unwrap();
    let out_path = dir.join("closed.bp");
    let out = bootperc(&[
        "closure", "--family", "N[1,1]r=2", "--in", input.to_str().unwrap(),
        "--out", out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&out_path).unwrap();
    assert_eq!(text, "BPGRID 2 3 3 closed\n0 9\n");

    // malformed snapshot is a usage error
    std::fs::write(&input, "BPGRID 2 3 3 closed\n0 4\n").unwrap();
    let out = bootperc(&[
        "closure", "--family", "N[1,1]r=2", "--in", input.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn grow_emits_csv_row() {
    let out = bootperc(&[
        "grow", "--family", "N[1,1,2]r=4", "--base", "3,3,3", "--dir", "e3",
        "--p", "0.9", "--trials", "50", "--seed", "7",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# bootperc"));
    assert_eq!(lines.next().unwrap(), "l,h,w,dir,succ,trials,ci_lo,ci_hi");
    let row = lines.next().unwrap();
    assert!(row.starts_with("3,3,3,e3,"), "row: {row}");
}

#[test]
fn decay_emits_csv_table() {
    let out = bootperc(&[
        "decay", "--family2d", "N[1,2]r=4", "--eps", "0.05", "--window", "41",
        "--n", "1:3:1", "--trials", "200", "--seed", "5",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("n,tail,censored_frac,ci_lo,ci_hi"));
    assert_eq!(text.lines().count(), 6, "header, columns, 3 rows, slope: {text}");

    // supercritical 2D family is a precondition error
    let out = bootperc(&[
        "decay", "--family2d", "N[1,2]r=2", "--eps", "0.05", "--window", "41",
        "--n", "1:3:1", "--trials", "10", "--seed", "5",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pattern_reports_exact_probability() {
    let out = bootperc(&["pattern", "--s", "3", "--k", "6", "--p", "0.5"]);
    assert!(out.status.success());
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["probability"], "555/4096");
}

#[test]
fn beams_and_al_check_run() {
    let out = bootperc(&[
        "beams", "--family", "N[1,1,1]r=2", "--l", "10", "--p", "0.04", "--seed", "3",
        "--verify-stop",
    ]);
    assert!(out.status.success());
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["stop_verified"], true);
    assert!(doc["seeds"].as_u64().unwrap() > 0);

    let out = bootperc(&[
        "al-check", "--family", "N[1,1,1]r=2", "--l", "10", "--p", "0.04", "--seed", "3",
        "--scales", "1:1,64:64",
    ]);
    assert!(out.status.success());
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let scales = doc["scales"].as_array().unwrap();
    assert_eq!(scales.len(), 2);
}

#[test]
fn enum_beams_respects_bound() {
    let out = bootperc(&["enum-beams", "--h-max", "2", "--k-max", "2", "--window", "5,5,5"]);
    assert!(out.status.success());
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["within_bound"], true);
    assert!(doc["count"].as_u64().unwrap() > 0);
}

#[test]
fn explicit_rules_file_drives_the_engine() {
    let dir = std::env::temp_dir().join(format!("bootperc-rules-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    // modern bootstrap (two opposite-pair rules): the [3]^2 diagonal fills
    let rules = dir.join("rules.txt");
    std::fs::write(&rules, "# pairs\n1,0 0,1\n1,0 0,-1\n-1,0 0,1\n-1,0 0,-1\n1,0 -1,0\n0,1 0,-1\n").unwrap();
    let input = dir.join("seed.bp");
    std::fs::write(&input, "BPGRID 2 3 3 closed\n0 1 3 1 3 1\n").unwrap();
    let out = bootperc(&[
        "closure", "--rules", rules.to_str().unwrap(), "--dims", "2",
        "--in", input.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(stdout(&out), "BPGRID 2 3 3 closed\n0 9\n");

    let out = bootperc(&[
        "prob", "--rules", rules.to_str().unwrap(), "--dims", "2", "--l", "3",
        "--p", "0.9", "--trials", "20", "--seed", "8",
    ]);
    assert!(out.status.success());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn workers_flag_does_not_change_output() {
    let base = [
        "prob", "--family", "N[1,1]r=2", "--l", "6", "--p", "0.3", "--trials", "500",
        "--seed", "11",
    ];
    let one: Vec<&str> = base.iter().copied().chain(["--workers", "1"]).collect();
    let four: Vec<&str> = base.iter().copied().chain(["--workers", "4"]).collect();
    assert_eq!(stdout(&bootperc(&one)), stdout(&bootperc(&four)));
}

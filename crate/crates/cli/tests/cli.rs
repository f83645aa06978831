//! Exit-code and report-contract tests for the binary.

use std::path::Path;
use std::process::{Command, Output};

use procmat::process::{single_condition_violator, WCondition};
use procmat::report::ReportDoc;

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_procmat"))
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8(output.stdout.clone()).unwrap()
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8(output.stderr.clone()).unwrap()
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

#[test]
fn violating_w_exits_one_but_still_emits_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let w_path = dir.path().join("bad.json");
    let w = single_condition_violator([2, 2, 2, 2], WCondition::Condition3, 1);
    write(&w_path, &w.to_json());

    let output = cli().args(["validate-w", "--in"]).arg(&w_path).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
    let report = ReportDoc::from_json(&stdout_of(&output)).unwrap();
    assert!(!report.pass());
    let failing = report.checks.iter().find(|c| !c.pass).unwrap();
    assert_eq!(failing.name, "condition-3");
}

#[test]
fn malformed_json_exits_two_with_byte_offset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    write(&path, "{\"dims\": [2,2,2,2], \"basis\": \"computational\"");

    let output = cli().args(["validate-w", "--in"]).arg(&path).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let err = stderr_of(&output);
    assert!(err.contains("parse error"), "stderr: {err}");
    assert!(err.contains("byte"), "stderr: {err}");
}

#[test]
fn missing_field_is_named_in_the_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("incomplete.json");
    write(&path, "{\"basis\": \"computational\", \"matrix\": []}");

    let output = cli().args(["validate-w", "--in"]).arg(&path).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_of(&output).contains("dims"), "stderr: {}", stderr_of(&output));
}

#[test]
fn dimension_mismatch_exits_two_and_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let w_path = dir.path().join("w.json");
    let big_path = dir.path().join("qutrit.json");
    let small_path = dir.path().join("qubit.json");
    run_ok(cli().args(["gen", "w", "--seed", "1"]).arg("--out").arg(&w_path));
    run_ok(
        cli()
            .args(["gen", "instrument", "--dims", "3,3", "--seed", "2"])
            .arg("--out")
            .arg(&big_path),
    );
    run_ok(
        cli()
            .args(["gen", "instrument", "--dims", "2,2", "--seed", "3"])
            .arg("--out")
            .arg(&small_path),
    );

    let output = cli()
        .args(["prob", "--w"])
        .arg(&w_path)
        .arg("--alice")
        .arg(&big_path)
        .arg("--bob")
        .arg(&small_path)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_of(&output).contains("dimension mismatch"));
}

#[test]
fn non_finite_numbers_are_flagged_as_numerical_failure() {
    // a deliberately non-Hermitian matrix with an entry so large that the
    // hermiticity residual overflows to infinity
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("huge.json");
    let d = 16usize;
    let mut entries: Vec<String> = Vec::with_capacity(d * d);
    for r in 0..d {
        for c in 0..d {
            entries.push(if (r, c) == (0, 1) {
                "[1e308, 0.0]".to_string()
            } else if r == c {
                "[0.25, 0.0]".to_string()
            } else {
                "[0.0, 0.0]".to_string()
            });
        }
    }
    write(
        &path,
        &format!(
            "{{\"dims\": [2,2,2,2], \"basis\": \"computational\", \"matrix\": [{}]}}",
            entries.join(",")
        ),
    );

    let output = cli().args(["validate-w", "--in"]).arg(&path).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
    let report = ReportDoc::from_json(&stdout_of(&output)).unwrap();
    assert!(report.notes.iter().any(|n| n.contains("NumericalFailure")), "{:?}", report.notes);
}

#[test]
fn reports_are_deterministic_given_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let w_path = dir.path().join("w.json");
    run_ok(cli().args(["gen", "w", "--seed", "11"]).arg("--out").arg(&w_path));

    let run = || {
        let output = cli()
            .args(["check-theorem", "--trials", "10", "--seed", "42", "--target"])
            .arg(&w_path)
            .output()
            .unwrap();
        assert_eq!(output.status.code(), Some(0));
        ReportDoc::from_json(&stdout_of(&output)).unwrap()
    };
    let r1 = run();
    let r2 = run();
    // everything except the timestamp matches
    assert_eq!(serde_json::to_string(&r1.checks).unwrap(), serde_json::to_string(&r2.checks).unwrap());
    assert_eq!(serde_json::to_string(&r1.tables).unwrap(), serde_json::to_string(&r2.tables).unwrap());
    // histograms present, one per identity
    assert_eq!(r1.tables.iter().filter(|t| t.name.starts_with("residual-histogram")).count(), 4);
}

#[test]
fn check_theorem_accepts_both_file_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let w_path = dir.path().join("w.json");
    let eta_path = dir.path().join("eta.json");
    run_ok(cli().args(["gen", "w", "--seed", "12"]).arg("--out").arg(&w_path));
    run_ok(cli().args(["w2eta", "--in"]).arg(&w_path).arg("--out").arg(&eta_path));

    for path in [&w_path, &eta_path] {
        let output = cli()
            .args(["check-theorem", "--trials", "5", "--seed", "1", "--target"])
            .arg(path)
            .output()
            .unwrap();
        assert_eq!(output.status.code(), Some(0), "target {}", path.display());
    }
}

#[test]
fn simulate_round_trip_against_prob() {
    let dir = tempfile::tempdir().unwrap();
    let w_path = dir.path().join("w.json");
    let eta_path = dir.path().join("eta.json");
    let alice = dir.path().join("alice.json");
    let bob = dir.path().join("bob.json");
    run_ok(cli().args(["gen", "w", "--seed", "21"]).arg("--out").arg(&w_path));
    run_ok(cli().args(["w2eta", "--in"]).arg(&w_path).arg("--out").arg(&eta_path));
    run_ok(
        cli()
            .args(["gen", "instrument", "--outcomes", "2", "--seed", "22"])
            .arg("--out")
            .arg(&alice),
    );
    run_ok(
        cli()
            .args(["gen", "instrument", "--outcomes", "2", "--seed", "23"])
            .arg("--out")
            .arg(&bob),
    );

    let sim = cli()
        .args(["simulate", "--protocol", "fig3", "--state"])
        .arg(&eta_path)
        .arg("--alice")
        .arg(&alice)
        .arg("--bob")
        .arg(&bob)
        .output()
        .unwrap();
    assert_eq!(sim.status.code(), Some(0));
    let sim_report = ReportDoc::from_json(&stdout_of(&sim)).unwrap();
    let conditional = sim_report.tables.iter().find(|t| t.name == "conditional").unwrap();

    let prob = cli()
        .args(["prob", "--w"])
        .arg(&w_path)
        .arg("--alice")
        .arg(&alice)
        .arg("--bob")
        .arg(&bob)
        .output()
        .unwrap();
    assert_eq!(prob.status.code(), Some(0));
    let prob_report = ReportDoc::from_json(&stdout_of(&prob)).unwrap();
    let table = prob_report.tables.iter().find(|t| t.name == "probability").unwrap();

    assert_eq!(conditional.shape, table.shape);
    for (a, b) in conditional.values.iter().zip(table.values.iter()) {
        assert!((a - b).abs() < 1e-9);
    }
}

fn run_ok(cmd: &mut Command) {
    let output = cmd.output().unwrap();
    assert!(
        output.status.success(),
        "command failed: {cmd:?}\nstderr: {}",
        stderr_of(&output)
    );
}

//! End-to-end checks of the `psygame` binary: exit codes, stream separation,
//! reproducibility, thread-count independence, and the documented output
//! layouts.

use std::path::PathBuf;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psygame"))
        .args(args)
        .env_remove("PG_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

// ---------------------------------------------------------------------------
// Exit codes
// ---------------------------------------------------------------------------

#[test]
fn usage_problems_exit_one() {
    for args in [
        &["solve", "no_such_model"][..],
        &["solve", "confidence", "-c", "junk"],
        &["solve", "confidence", "-c", "mu=1"],
        &["solve", "crossing", "-c", "mu=0.5.1"],
        &["sweep", "crossing", "--sweep", "mu=5:1:1"],
        &["sweep", "crossing", "--sweep", "mu=1:5:0"],
        &["csg", "crossing_multi", "-k", "0"],
        &["csg", "confidence", "-k", "2"],
        &["solve", "crossing_multi"],
        &["verify", "ultimatum", "-p", "fair=2"],
        &["solve", "confidence", "--threads", "0"],
        &["nonsense"],
    ] {
        let out = run(args);
        assert_eq!(code(&out), 1, "{args:?}: {}", stderr(&out));
        assert!(stderr(&out).contains("error:"), "{args:?}");
    }
}

#[test]
fn verification_failures_exit_two() {
    let out = run(&["verify", "ultimatum", "-p", "greedy=1", "-p", "accept=1"]);
    assert_eq!(code(&out), 2);
    assert!(stdout(&out).contains("not an equilibrium"));

    let ok = run(&["verify", "ultimatum", "-p", "fair=1", "-p", "accept=1"]);
    assert_eq!(code(&ok), 0);
    assert!(stdout(&ok).contains("verdict: equilibrium"));
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["solve", "--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
}

// ---------------------------------------------------------------------------
// Stream separation and reproducibility
// ---------------------------------------------------------------------------

#[test]
fn record_output_owns_stdout_and_reruns_are_byte_identical() {
    let args = ["solve", "confidence", "--all", "--format", "csv"];
    let a = run(&args);
    assert_eq!(code(&a), 0);
    let csv = stdout(&a);
    assert!(csv.starts_with("model,eq_index,player,action,prob,utility,welfare,residual"));
    let head = stderr(&a);
    assert!(head.contains("seed: 0"));
    assert!(head.contains("equilibria: 3"));

    let b = run(&args);
    assert_eq!(a.stdout, b.stdout, "same command, same bytes");
}

#[test]
fn thread_count_does_not_change_results() {
    let base = run(&["solve", "cyclist_vehicle", "--all", "--format", "csv"]);
    let four = run(&["solve", "cyclist_vehicle", "--all", "--format", "csv", "--threads", "4"]);
    let env = Command::new(env!("CARGO_BIN_EXE_psygame"))
        .args(["solve", "cyclist_vehicle", "--all", "--format", "csv"])
        .env("PG_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(base.stdout, four.stdout);
    assert_eq!(base.stdout, env.stdout);
}

#[test]
fn reports_name_the_seed_in_use() {
    let out = run(&["solve", "example2", "--seed", "42"]);
    assert!(stdout(&out).contains("seed: 42"));
    let out = run(&["solve", "example2"]);
    assert!(stdout(&out).contains("seed: 0"));
}

#[test]
fn output_files_receive_the_records() {
    let dir = std::env::temp_dir().join(format!("psygame-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path: PathBuf = dir.join("confidence.json");
    let out = run(&["solve", "confidence", "--all", "-o", path.to_str().unwrap(), "--format", "json"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("wrote 1 record"));
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let records = parsed.as_array().unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0]["model"], "confidence");
    assert_eq!(records[0]["equilibria"].as_array().unwrap().len(), 3);
    std::fs::remove_dir_all(&dir).unwrap();
}

// ---------------------------------------------------------------------------
// Command behaviours
// ---------------------------------------------------------------------------

#[test]
fn solve_reports_equilibria_and_welfare() {
    let out = run(&["solve", "crossing", "-c", "mu=5", "--all"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("equilibria: 1"));
    assert!(text.contains("{maintain} x {wait}"));
    assert!(text.contains("parameters: mu=5"));
}

#[test]
fn sweeps_enumerate_the_parameter_grid() {
    let out = run(&["sweep", "crossing", "--sweep", "mu=1:5:1", "--all"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("points: 5"));
    assert!(text.contains("failures: 0"));
    assert!(text.contains("mu=5 -> 1 equilibrium"));

    let csv = run(&["sweep", "ultimatum", "--sweep", "theta1=0:1:0.5", "--format", "csv"]);
    let body = stdout(&csv);
    // Three points, six rows each (four probabilities, two utilities).
    assert_eq!(body.lines().count(), 1 + 3 * 6);
    assert!(body.lines().nth(1).unwrap().starts_with("ultimatum,0,"));
}

#[test]
fn swept_names_cannot_collide_with_fixed_constants() {
    let out = run(&[
        "sweep", "ultimatum",
        "-c", "theta1=1",
        "--sweep", "theta1=0:1:0.5",
    ]);
    assert_eq!(code(&out), 1);
    let out = run(&[
        "sweep", "ultimatum",
        "--sweep", "theta1=0:1:0.5",
        "--sweep", "theta1=0:1:0.5",
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn stats_counts_states_and_transitions() {
    let out = run(&["stats", "crossing_multi", "-c", "gamma=0.3", "-k", "5"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("states: 91"));
    assert!(text.contains("transitions: 701"));

    let out = run(&["stats", "crossing_multi", "-c", "gamma=0", "-k", "1"]);
    let text = stdout(&out);
    assert!(text.contains("states: 2"));
    assert!(text.contains("transitions: 5"));
}

#[test]
fn csg_prints_stage_strategies_and_initial_values() {
    let out = run(&["csg", "crossing_multi", "-c", "gamma=1", "-k", "2", "--starts", "8"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("initial values:"));
    assert!(text.contains("t=2 <j=0,cr=0,cw=0>"));
    assert!(text.contains("t=1 <j=1,"));
}

#[test]
fn csg_experiments_report_means_and_probabilities() {
    let out = run(&[
        "csg", "crossing_multi",
        "-c", "gamma=0", "-k", "3",
        "-r", "2", "--starts", "8", "--seed", "7",
    ]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("runs: 2"));
    assert!(text.contains("utility mean:"));
    assert!(text.contains("action probabilities (mean):"));
}

#[test]
fn list_models_names_the_catalog() {
    let out = run(&["list-models"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    for name in [
        "confidence", "example2", "reciprocity", "ultimatum",
        "crossing", "cyclist_vehicle", "cyclist_bimatrix", "crossing_multi",
    ] {
        assert!(text.contains(name), "missing {name}");
    }
}

#[test]
fn model_files_load_from_paths() {
    let path = format!("{}/models/crossing.pg", env!("CARGO_MANIFEST_DIR"));
    let out = run(&["solve", &path, "-c", "mu=5"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("{maintain} x {wait}"));
}

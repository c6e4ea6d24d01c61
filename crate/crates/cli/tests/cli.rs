use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
task = "blobs-mlp"
seeds = [1]
warmup_epochs = 1
trace = true

[data]
train_samples = 1200
test_samples = 300
dim = 4
classes = 3
hidden = 6
partition = { kind = "iid" }

[sim]
num_peers = 12
rounds = 10
mrt = 2
initiators_per_round = 4
synergy_size_law = { kind = "fixed", size = 3 }

[baselines]
fl = false
centralized = false
"#;

fn p4l(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_p4l"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Runs the small config into `dir` and returns the trace path.
fn small_run(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let out_dir = dir.join("out");
    let out = p4l(&[
        "run",
        "-c",
        cfg.to_str().unwrap(),
        "-o",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("seed 1:"));
    for f in ["metrics.csv", "summary.csv", "config.toml"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    out_dir.join("trace-seed1.jsonl")
}

#[test]
fn run_writes_outputs_and_its_trace_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let trace = small_run(dir.path());
    let out = p4l(&["verify-trace", trace.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("0 violations"));

    let out = p4l(&["verify-trace", "--json", trace.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["violations"].as_array().map(Vec::len), Some(0));
}

#[test]
fn tampered_traces_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let trace = small_run(dir.path());
    let text = fs::read_to_string(&trace).unwrap();
    let lines: Vec<&str> = text.lines().collect();

    // A replayed initiation is an invariant violation.
    let initiated = lines.iter().find(|l| l.contains("\"initiated\"")).unwrap();
    let duplicated = dir.path().join("duplicated.jsonl");
    fs::write(&duplicated, format!("{text}{initiated}\n")).unwrap();
    assert_eq!(
        code(&p4l(&["verify-trace", duplicated.to_str().unwrap()])),
        3
    );

    // A line cut in half is malformed input.
    let last = lines[lines.len() - 1];
    let truncated = dir.path().join("truncated.jsonl");
    let head = lines[..lines.len() - 1].join("\n");
    fs::write(&truncated, format!("{head}\n{}\n", &last[..last.len() / 2])).unwrap();
    assert_eq!(
        code(&p4l(&["verify-trace", truncated.to_str().unwrap()])),
        2
    );

    let missing = dir.path().join("missing.jsonl");
    assert_eq!(code(&p4l(&["verify-trace", missing.to_str().unwrap()])), 2);
}

#[test]
fn config_errors_exit_with_two() {
    let out = p4l(&["run", "--dry-run", "--set", "task=\"no-such-task\""]);
    assert_eq!(code(&out), 2);
    let out = p4l(&["run", "--dry-run", "--set", "sim.no_such_key=1"]);
    assert_eq!(code(&out), 2);
    let out = p4l(&["run", "--dry-run", "--set", "sim.mrr=2.0"]);
    assert_eq!(code(&out), 2);
    let out = p4l(&["run", "-c", "/nonexistent/config.toml"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn dry_run_prints_the_resolved_config() {
    let out = p4l(&["run", "--dry-run", "--set", "sim.num_peers=17"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("num_peers = 17"), "{text}");
    assert!(text.contains("[protocol]"), "{text}");
}

#[test]
fn grid_runs_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL.replace("trace = true", "trace = false")).unwrap();
    let out_dir = dir.path().join("grid");
    let out = p4l(&[
        "run",
        "-c",
        cfg.to_str().unwrap(),
        "-o",
        out_dir.to_str().unwrap(),
        "--grid",
        "sim.mrt=1,2",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(
        text.contains("[sim.mrt=1]") && text.contains("[sim.mrt=2]"),
        "{text}"
    );
    let cells = fs::read_dir(&out_dir).unwrap().count();
    assert_eq!(cells, 2);
}

#[test]
fn bench_checks_arguments_and_fit_quality() {
    assert_eq!(
        code(&p4l(&["bench-he", "--counts", "20,10", "--reps", "1"])),
        2
    );
    assert_eq!(
        code(&p4l(&["bench-he", "--counts", "10,20", "--reps", "0"])),
        2
    );

    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    let args = [
        "bench-he",
        "--counts",
        "10,20,40",
        "--reps",
        "1",
        "--csv",
        csv.to_str().unwrap(),
    ];
    let out = p4l(&args);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("R²"));
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 4);

    // No fit can reach an R² above one.
    let out = p4l(&[
        "bench-he", "--counts", "10,20,40", "--reps", "1", "--min-r2", "1.5",
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn selftest_reports_success_and_crypto_failure() {
    let out = p4l(&["selftest", "--key-bits", "512"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("passed"));
    // Keys below the supported minimum cannot be generated.
    assert_eq!(code(&p4l(&["selftest", "--key-bits", "64"])), 4);
}

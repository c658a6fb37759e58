use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_reservoir-bench"));
    c.env_remove("RESERVOIR_BENCH_JOBS").env_remove("RUST_LOG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}",
            String::from_utf8_lossy(&out.stdout)
        )
    })
}

const SMALL: &[&str] = &[
    "--washout",
    "20",
    "--train",
    "200",
    "--test",
    "40",
    "--n",
    "10",
];

#[test]
fn help_works_everywhere() {
    for sub in [
        &[][..],
        &["gen-signal"],
        &["run"],
        &["sweep"],
        &["mc"],
        &["report"],
    ] {
        let mut args: Vec<&str> = sub.to_vec();
        args.push("--help");
        let out = run(&args);
        assert_eq!(out.status.code(), Some(0), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));
    }
}

#[test]
fn usage_and_config_errors_exit_1() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["run", "--model", "xyz"]).status.code(), Some(1));
    assert_eq!(
        run(&["run", "--model", "an", "--b", "0.1"]).status.code(),
        Some(1)
    );
    assert_eq!(run(&["run", "--leak", "1.5"]).status.code(), Some(1));
    assert_eq!(
        run(&["gen-signal", "--input", "nope"]).status.code(),
        Some(1)
    );
    assert_eq!(
        run(&["sweep", "--preset", "nope", "--output", "/tmp/x.csv"])
            .status
            .code(),
        Some(1)
    );
    let out = run(&["sweep"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
}

#[test]
fn io_and_parse_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let out = run(&["report", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    assert!(!out.stderr.is_empty());

    let bad = dir.path().join("bad.csv");
    fs::write(
        &bad,
        "model,N,b,input_id,topology,run,nmse,blowup,wout_db,mc_total\nASN,x,0,clean,0,0,,,,\n",
    )
    .unwrap();
    let out = run(&["report", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 2"));

    let cfg = dir.path().join("nope.json");
    assert_eq!(
        run(&["sweep", "--config", cfg.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn run_is_deterministic_and_prints_json() {
    let mut args = vec!["run", "--model", "bsn", "--seed", "7"];
    args.extend_from_slice(SMALL);
    let a = run(&args);
    let b = run(&args);
    assert_eq!(
        a.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&a.stderr)
    );
    assert_eq!(a.stdout, b.stdout);
    let v = json(&a);
    assert_eq!(v["model"], "bsn");
    assert_eq!(v["N"], 10);
    assert_eq!(v["b"], 0.05);
    assert!(v["result"]["blowup"].is_boolean());
    assert_eq!(v["result"]["w_out"]["len"], 10);

    let mut other = vec!["run", "--model", "bsn", "--seed", "8"];
    other.extend_from_slice(SMALL);
    assert_ne!(run(&other).stdout, a.stdout);
}

#[test]
fn trace_and_weights_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let wdir = dir.path().join("w");
    let mut args = vec![
        "run",
        "--model",
        "an",
        "--trace",
        trace.to_str().unwrap(),
        "--save-weights",
        wdir.to_str().unwrap(),
    ];
    args.extend_from_slice(SMALL);
    let first = run(&args);
    assert_eq!(
        first.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    let text = fs::read_to_string(&trace).unwrap();
    assert_eq!(text.lines().next().unwrap(), "step,target,predicted");
    assert_eq!(text.lines().count(), 41);
    for f in ["w_in.csv", "w_s.csv", "w_out.csv"] {
        assert!(wdir.join(f).exists());
    }

    let mut again = vec![
        "run",
        "--model",
        "an",
        "--load-weights",
        wdir.to_str().unwrap(),
    ];
    again.extend_from_slice(SMALL);
    let second = run(&again);
    assert_eq!(second.status.code(), Some(0));
    assert_eq!(json(&first)["result"], json(&second)["result"]);
}

#[test]
fn gen_signal_writes_csv() {
    let out = run(&[
        "gen-signal",
        "--input",
        "distorted",
        "--length",
        "5",
        "--seed",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[0], "t,u");
    let again = run(&[
        "gen-signal",
        "--input",
        "distorted",
        "--length",
        "5",
        "--seed",
        "3",
    ]);
    assert_eq!(text.as_bytes(), &again.stdout[..]);
    let clean = run(&["gen-signal", "--length", "2"]);
    let clean = String::from_utf8(clean.stdout).unwrap();
    // u(0) = A cos 0 + B sin 0
    assert_eq!(clean.lines().nth(1).unwrap(), "0,1");
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "schema_version": 1,
        "models": ["an", "asn"],
        "sizes": [6],
        "noise_levels": [0.05],
        "inputs": ["clean"],
        "topologies": 2,
        "runs_per_topology": 2,
        "plan": {"washout_steps": 20, "train_steps": 150, "test_steps": 30},
        "output_path": dir.join("sweep.csv"),
    });
    let path = dir.join("cfg.json");
    fs::write(&path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn sweep_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = run(&["sweep", "--config", cfg.to_str().unwrap(), "--jobs", "2"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v = json(&out);
    assert_eq!(v["rows"], 8);
    let csv = dir.path().join("sweep.csv");
    let first = fs::read(&csv).unwrap();
    assert_eq!(
        String::from_utf8_lossy(&first).lines().next().unwrap(),
        "model,N,b,input_id,topology,run,nmse,blowup,wout_db,mc_total"
    );

    // env var sets the worker count; output must not change
    let out = bin()
        .args(["sweep", "--config", cfg.to_str().unwrap(), "--fresh"])
        .env("RESERVOIR_BENCH_JOBS", "3")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(first, fs::read(&csv).unwrap());

    let rep_dir = dir.path().join("rep");
    let out = run(&[
        "report",
        csv.to_str().unwrap(),
        "--out-dir",
        rep_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v = json(&out);
    assert_eq!(v["rows"], 8);
    for f in [
        "summary.csv",
        "histograms.csv",
        "dynamic_range.csv",
        "blowup.csv",
        "report.json",
    ] {
        assert!(rep_dir.join(f).exists(), "{f}");
    }
}

#[test]
fn changed_seed_refuses_stale_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    assert_eq!(
        run(&["sweep", "--config", cfg.to_str().unwrap()])
            .status
            .code(),
        Some(0)
    );
    let out = run(&["sweep", "--config", cfg.to_str().unwrap(), "--seed", "5"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "5",
        "--fresh",
    ]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn small_mc_suite() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = serde_json::json!({
        "schema_version": 1,
        "families": ["analog"],
        "sizes": [8],
        "noise_levels": [0.0],
        "topologies": 1,
        "runs_per_topology": 2,
        "plan": {"washout": 60, "train": 300, "eval": 200, "ridge_lambda": 1e-8},
        "output_path": dir.path().join("mc.csv"),
    });
    let path = dir.path().join("mc.json");
    fs::write(&path, serde_json::to_vec(&cfg).unwrap()).unwrap();
    let out = run(&["mc", "--config", path.to_str().unwrap(), "--seed", "2"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v = json(&out);
    assert_eq!(v["k_max"], 50);
    let mc = v["cells"][0]["mean_mc"].as_f64().unwrap();
    // the default input is mostly periodic, so the bound is k_max rather than N
    assert!(mc > 0.0 && mc <= 50.0, "{mc}");
}

use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn mlonsim() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mlonsim"));
    cmd.env_remove("MLONSIM_OUT");
    cmd
}

fn run(args: &[&str], out: &Path) -> Output {
    mlonsim().args(args).arg("--out-dir").arg(out).output().unwrap()
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header
        .iter()
        .position(|h| *h == name)
        .unwrap_or_else(|| panic!("no column {name}"));
    lines.map(|l| l.split(',').nth(idx).unwrap().to_string()).collect()
}

fn floats(values: Vec<String>) -> Vec<f64> {
    values.iter().map(|v| v.parse().unwrap()).collect()
}

#[test]
fn smoke_run_is_fast_and_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let out = run(
        &["--synth", "d=2,n=100", "--workers", "1", "--pb", "0", "--runs", "1"],
        dir.path(),
    );
    assert!(start.elapsed() < Duration::from_secs(1));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let trace = std::fs::read_to_string(dir.path().join("trace_run0000.csv")).unwrap();
    assert!(trace.starts_with("run_id,k,f,l1,l2,l3,l4,c_k,cum_cost,G,grads_received,mean_queue_len\n"));
    let f = floats(column(&trace, "f"));
    assert_eq!(f.len(), 101);
    assert!(f.windows(2).all(|p| p[1] <= p[0]));
    for name in ["summary.csv", "aggregate.csv", "runs.csv"] {
        assert!(dir.path().join(name).is_file(), "{name} missing");
    }
}

#[test]
fn invalid_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["--synth", "d=2,n=10", "--workers", "0"][..],
        &["--synth", "d=2,n=10", "--beta", "1.5"],
        &["--synth", "d=2,n=10", "--pb", "-0.1"],
        &["--synth", "d=2,n=10", "--mode", "minibatch", "--ts", "0"],
        &["--synth", "d=2,n=10", "--max-iters", "0"],
        &["--synth", "d=2,n=10", "--runs", "0"],
        &["--synth", "d=2,n=10", "--workers", "11"],
    ] {
        let out = run(args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn missing_dataset_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["--mnist-dir", dir.path().join("absent").to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn compare_of_identical_modes_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "compare",
            "--synth",
            "d=2,n=100",
            "--a-mode",
            "batch",
            "--b-mode",
            "batch",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn uncontended_compare_has_identical_objectives() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "compare",
            "--synth",
            "d=3,n=60",
            "--workers",
            "1",
            "--pb",
            "0",
            "--runs",
            "3",
            "--max-iters",
            "30",
            "--a-mode",
            "batch",
            "--b-mode",
            "minibatch",
            "--b-ts",
            "1",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    assert!(csv.starts_with("run_id,k,G_batch,cum_cost_batch,G_minibatch_ts1,cum_cost_minibatch_ts1\n"));
    assert_eq!(csv.lines().count(), 1 + 3 * 31, "{csv}");
    assert_eq!(column(&csv, "G_batch"), column(&csv, "G_minibatch_ts1"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(
        &cfg,
        "workers = 3\nruns = 2\nmax_iters = 7\nbackground_prob = 0.0\n\n[dataset]\nkind = \"synth\"\nd = 2\nn = 30\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&["--config", cfg.to_str().unwrap(), "--max-iters", "4"], &out_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let runs = std::fs::read_to_string(out_dir.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 3);
    let trace = std::fs::read_to_string(out_dir.join("trace_run0001.csv")).unwrap();
    assert_eq!(column(&trace, "k").last().unwrap(), "4");
    assert!(column(&trace, "grads_received")[1..].iter().all(|g| g == "3"));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "wrokers = 3\n").unwrap();
    let out = run(&["--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn output_dir_defaults_to_env() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from-env");
    let out = mlonsim()
        .env("MLONSIM_OUT", &target)
        .args(["--synth", "d=2,n=20", "--workers", "2", "--max-iters", "3"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(target.join("trace_run0000.csv").is_file());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "--synth",
        "d=2,n=100",
        "--workers",
        "5",
        "--pb",
        "0.05",
        "--mode",
        "minibatch",
        "--runs",
        "4",
        "--max-iters",
        "20",
        "--trace-slots",
    ];
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run(&args, &a).status.success());
    assert!(mlonsim()
        .args(args)
        .arg("--jobs")
        .arg("3")
        .arg("--out-dir")
        .arg(&b)
        .output()
        .unwrap()
        .status
        .success());
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.iter().any(|n| n.to_string_lossy().starts_with("slots_run")));
    for name in names {
        assert_eq!(
            std::fs::read(a.join(&name)).unwrap(),
            std::fs::read(b.join(&name)).unwrap(),
            "{name:?}"
        );
    }
}

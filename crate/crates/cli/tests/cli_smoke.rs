//! End-to-end checks of the binary's subcommands and exit codes.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_expstep"))
}

#[test]
fn run_writes_csvs_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("exp.cfg");
    std::fs::write(
        &cfg_path,
        format!(
            "method = k-exp\nproblem = synthetic\nn = 30\nd = 4\nlambda = 0.05\nT = 200\nseeds = 2\ncheckpoint_every = 50\nout = {}\n",
            dir.path().join("out").display()
        ),
    )
    .unwrap();
    let status = bin()
        .args(["run", "--config"])
        .arg(&cfg_path)
        .args(["--threads", "1"])
        .status()
        .unwrap();
    assert!(status.success());
    let files: Vec<_> = std::fs::read_dir(dir.path().join("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert!(files.iter().any(|f| f.starts_with("aggregate_")));
    assert!(files.iter().any(|f| f.starts_with("trace_")));
    assert!(files.iter().any(|f| f.starts_with("summary_")));
}

#[test]
fn run_out_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("exp.cfg");
    std::fs::write(
        &cfg_path,
        "method = k-cnst\nproblem = synthetic\nn = 10\nd = 2\nlambda = 0.1\nT = 50\nseeds = 1\nout = should_not_be_used\n",
    )
    .unwrap();
    let out = dir.path().join("flagged");
    let status = bin()
        .args(["run", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("summary_k-cnst.csv").exists());
}

#[test]
fn missing_config_exits_two() {
    let status = bin()
        .args(["run", "--config", "/nonexistent/nowhere.cfg"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn bad_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("bad.cfg");
    std::fs::write(&cfg_path, "method = k-exp\nteapot = short\n").unwrap();
    let status = bin().args(["run", "--config"]).arg(&cfg_path).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn verify_lowerbounds_passes_with_reduced_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["verify-lowerbounds", "--seeds", "2000", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("lowerbound_verdicts.csv").exists());
}

#[test]
fn inspect_schedule_prints_table() {
    let out = bin()
        .args([
            "inspect-schedule",
            "--schedule",
            "exp",
            "--beta",
            "1",
            "-T",
            "10",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("alpha_k"));
    assert!(text.contains("sum alpha_k"));
}

#[test]
fn thread_count_env_var_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("exp.cfg");
    std::fs::write(
        &cfg_path,
        format!(
            "method = k-cnst\nproblem = synthetic\nn = 10\nd = 2\nlambda = 0.1\nT = 50\nseeds = 2\nout = {}\n",
            dir.path().join("out").display()
        ),
    )
    .unwrap();
    let status = bin()
        .env("EXPSTEP_THREADS", "1")
        .args(["run", "--config"])
        .arg(&cfg_path)
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn inspect_schedule_kr20_prints_steps() {
    let out = bin()
        .args([
            "inspect-schedule",
            "--schedule",
            "kr20",
            "-T",
            "100",
            "--smoothness",
            "1",
            "--strong-convexity",
            "1",
            "--growth",
            "1",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("step_size"));
}

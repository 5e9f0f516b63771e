use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn yoasovi(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_yoasovi"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn yoasovi")
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("exp.toml"),
        r#"
[experiment]
replicates = 5
out = "from-file"

[[datasets]]
preset = "sim-p2k3"
n = 80

[[methods]]
method = "qmcvi"
lr = 1e-5
max_iters = 20
"#,
    )
    .unwrap();
    let out = yoasovi(
        &[
            "run",
            "--config",
            "exp.toml",
            "--replicates",
            "2",
            "--out",
            "res",
            "--seed",
            "3",
            "--max-iters",
            "7",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("sim-p2k3") && stdout.contains("qmcvi"));
    assert!(!dir.path().join("from-file").exists());
    let runs = fs::read_to_string(dir.path().join("res/runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 3);
    assert!(runs.lines().nth(1).unwrap().starts_with("sim-p2k3,qmcvi,0,3,7,"));
    assert!(dir.path().join("res/traces/sim-p2k3__qmcvi__r001.csv").exists());
}

#[test]
fn method_flag_and_temper_run_without_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = yoasovi(
        &[
            "run",
            "--preset",
            "sim-p2k2",
            "--method",
            "yoasovi-metropolis",
            "--temper",
            "linear",
            "--k",
            "0.5",
            "--patience",
            "4",
            "--out",
            "o",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = fs::read_to_string(dir.path().join("o/traces/sim-p2k2__yoasovi-metropolis__r000.csv")).unwrap();
    let second = trace.lines().nth(2).unwrap();
    assert!(second.ends_with(",1"), "M(2) = 0.5·2 = 1, got {second}");
}

#[test]
fn trajectory_subcommand_filters_by_horizon() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("t.csv"),
        "iter,elapsed_s,elbo,accepted,M\n1,0.5,-10,1,\n2,1.5,-9,1,\n3,2.5,-8,1,\n",
    )
    .unwrap();
    let out = yoasovi(
        &["trajectory", "--trace", "t.csv", "--horizon", "2", "--out", "traj.csv"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        fs::read_to_string(dir.path().join("traj.csv")).unwrap(),
        "elapsed_s,elbo\n0.5,-10\n1.5,-9\n"
    );
}

#[test]
fn bad_input_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = yoasovi(&["run", "--preset", "sim-p9k9"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown preset"));
    let out = yoasovi(&["run", "--method", "mcvi", "--samples", "0", "--out", "o"], dir.path());
    assert!(!out.status.success());
}

#[test]
fn all_failed_cell_gives_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    // The default step size diverges for QMCVI on this preset.
    let out = yoasovi(
        &[
            "run",
            "--preset",
            "sim-p2k2",
            "--method",
            "qmcvi",
            "--replicates",
            "2",
            "--out",
            "o",
        ],
        dir.path(),
    );
    assert!(!out.status.success());
    assert!(dir.path().join("o/summary.csv").exists());
}

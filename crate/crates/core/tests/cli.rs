use std::path::Path;
use std::process::Command;

fn zosam() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_zosam"));
    c.env_remove("ZOSAM_OUT_DIR");
    c
}

const CONFIG: &str = "objective=mlp\nlayers=2,6,2\nn_samples=120\nbatch_size=24\nepochs=2\nseeds=0,1\nrge_m=4\nslice=true\n";

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("exp.cfg");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn run_writes_metrics_states_and_slices() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("out");
    let status = zosam()
        .arg("run")
        .arg(&cfg)
        .arg("--out-dir")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("# zosam metrics\n# objective=mlp\n"));
    let rows = metrics.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(rows, 1 + 2 * 3 * 2);
    let state = std::fs::read_to_string(out.join("final_zosam_seed1.txt")).unwrap();
    let mut lines = state.lines();
    assert_eq!(lines.next().unwrap(), "32 3");
    assert_eq!(lines.next().unwrap().split(' ').count(), 32);
    assert_eq!(lines.next().unwrap().split(' ').count(), 32);
    let slice = std::fs::read_to_string(out.join("slice_sgd_seed0.csv")).unwrap();
    assert!(slice.starts_with("# loss_slice\n"));
}

#[test]
fn seed_override_env_dir_and_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("env-out");
    let status = zosam()
        .env("ZOSAM_OUT_DIR", &out)
        .args([
            "run",
            cfg.to_str().unwrap(),
            "--seed-override",
            "7",
            "--jobs",
            "1",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.contains("# seeds=7\n"));
    assert!(metrics
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .all(|l| l.split(',').nth(1) == Some("7")));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "objective=mlp\nepochs=1\nalpha=2\n");
    let out = zosam()
        .arg("run")
        .arg(&cfg)
        .arg("--out-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("alpha") && err.contains("line 3"), "{err}");
    let missing = zosam().args(["run", "/nonexistent/cfg"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
    let bad_flag = zosam().args(["run"]).output().unwrap();
    assert_eq!(bad_flag.status.code(), Some(2));
}

#[test]
fn diverging_runs_exit_with_one_and_keep_siblings() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "objective=rosenbrock\nrosenbrock_dim=4\nalpha=0\nlr=1000\nlr_schedule=constant\nepochs=3\nseeds=0\noptimizers=sgd\n",
    );
    let out = dir.path().join("o");
    let status = zosam()
        .arg("run")
        .arg(&cfg)
        .arg("--out-dir")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.contains("sgd,0,failed,"));
}

#[test]
fn compare_prints_table_and_rejects_bad_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("out");
    assert!(zosam()
        .arg("run")
        .arg(&cfg)
        .arg("--out-dir")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let report = zosam()
        .arg("compare")
        .arg(out.join("metrics.csv"))
        .output()
        .unwrap();
    assert!(report.status.success());
    let table = String::from_utf8(report.stdout).unwrap();
    assert!(table.starts_with("method,alpha,runs,failed,epochs_to_0.9,"));
    assert_eq!(table.lines().count(), 4);

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "# alpha=0.5\nvariant,seed,status,epoch,steps\n").unwrap();
    let report = zosam().arg("compare").arg(&bad).output().unwrap();
    assert_eq!(report.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&report.stderr).contains("step"));
}

#[test]
fn slice_verb_writes_one_file_per_optimizer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &CONFIG.replace("slice=true\n", "slice_dirs=2\nslice_grid=5\n"),
    );
    let out = dir.path().join("s");
    let res = zosam()
        .arg("slice")
        .arg(&cfg)
        .arg("--out-dir")
        .arg(&out)
        .output()
        .unwrap();
    assert!(res.status.success());
    assert_eq!(String::from_utf8(res.stdout).unwrap().lines().count(), 3);
    let csv = std::fs::read_to_string(out.join("slice_zosam_seed0.csv")).unwrap();
    assert!(csv.contains("# n_dirs=2\n"));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 1 + 25);
}

#[test]
fn selftest_passes() {
    let out = zosam().arg("selftest").output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    assert_eq!(
        String::from_utf8(out.stdout)
            .unwrap()
            .lines()
            .filter(|l| l.starts_with("PASS"))
            .count(),
        4
    );
}

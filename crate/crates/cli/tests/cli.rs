use std::path::Path;
use std::process::{Command, Output};

fn kerrcat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kerrcat")).args(args).env("KERRCAT_THREADS", "1").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("terminated by signal")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: &[&str] = &["--set", "params.n1=10", "--set", "params.n2=10", "--set", "wigner.points=5"];

fn run_cat_gen(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "cat_gen", "--out", out.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    kerrcat(&args)
}

#[test]
fn run_writes_manifest_and_reports_checks() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_cat_gen(dir.path(), &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("fidelity_mode1 = "));
    assert!(text.contains("PASS joint_parity"));
    let manifest = std::fs::read_to_string(dir.path().join("manifest.toml")).unwrap();
    assert!(manifest.contains("experiment = \"cat_gen\""));
    for f in ["trajectory.csv", "final_state.txt", "wigner_mode1.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn failed_checks_exit_4_with_check_flag() {
    // per-mode parity is not conserved once the modes are coupled
    let dir = tempfile::tempdir().unwrap();
    let o = run_cat_gen(dir.path(), &["--check"]);
    assert!(stdout(&o).contains("FAIL parity_mode1"));
    assert_eq!(code(&o), 4);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_cat_gen(dir.path(), &["--set", "params.no_such_key=1"])), 2);
    assert_eq!(code(&run_cat_gen(dir.path(), &["--set", "params.n1=0"])), 2);
    assert_eq!(code(&run_cat_gen(dir.path(), &["--config", "/nonexistent/kerrcat.toml"])), 2);
    assert_eq!(code(&kerrcat(&["run", "no_such_experiment"])), 2);
}

#[test]
fn reconstruct_reads_a_written_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("tomo");
    let o = kerrcat(&[
        "run",
        "tomography",
        "--out",
        run_dir.to_str().unwrap(),
        "--set",
        "params.n1=8",
        "--set",
        "params.n2=8",
        "--set",
        "wigner.points=5",
        "--set",
        "tomography.reconstruction.dims=[2,2]",
        "--set",
        "tomography.reconstruction.max_iterations=20",
        "--set",
        "tomography.reconstruction.restarts=1",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = dir.path().join("rc.toml");
    std::fs::write(&cfg, "max_iterations = 20\nrestarts = 1\n").unwrap();
    let out = dir.path().join("rec");
    let manifest = run_dir.join("dataset/manifest.toml");
    let args = [
        "reconstruct",
        "--dataset",
        manifest.to_str().unwrap(),
        "--dims",
        "2,2",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    let o = kerrcat(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("iterations = 20"));
    assert!(out.join("rho.txt").exists());
    let again = kerrcat(&args);
    assert_eq!(stdout(&o), stdout(&again));
    assert_eq!(code(&kerrcat(&["reconstruct", "--dataset", "/nonexistent/manifest.toml", "--dims", "2,2"])), 2);
}

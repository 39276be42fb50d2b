//! End-to-end checks of the `mftc` binary: exit codes, artifact layout,
//! reproducibility of outputs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mftc"))
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mftc-cli-{tag}-{}", std::process::id()));
    std::fs::remove_dir_all(&dir).ok();
    dir
}

#[test]
fn solve_scalar_tanh_writes_artifacts() {
    let out = tmp_dir("tanh");
    let output = run(&[
        "solve",
        repo_config("scalar_tanh.cfg").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");

    for file in [
        "trajectory.csv",
        "summary.csv",
        "gradient.csv",
        "riccati.csv",
        "riccati_p.svg",
        "trajectories.svg",
    ] {
        assert!(out.join(file).exists(), "missing {file}");
    }

    // P column of riccati.csv must match tanh(T - t) within 1e-6
    let riccati = std::fs::read_to_string(out.join("riccati.csv")).unwrap();
    let mut checked = 0;
    for line in riccati.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields[2] != "P" {
            continue;
        }
        let t: f64 = fields[1].parse().unwrap();
        let v: f64 = fields[5].parse().unwrap();
        assert!(
            (v - (0.5 - t).tanh()).abs() <= 1e-6,
            "P({t}) = {v} too far from tanh"
        );
        checked += 1;
    }
    assert_eq!(checked, 401);

    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let value_line = summary
        .lines()
        .find(|l| l.starts_with("value,"))
        .expect("value row");
    let value: f64 = value_line.split(',').nth(1).unwrap().parse().unwrap();
    assert!((value - 0.5 * 0.5_f64.tanh()).abs() <= 1e-6);

    std::fs::remove_dir_all(&out).ok();
}

#[test]
fn solve_zero_cost_is_constant_with_zero_value() {
    let out = tmp_dir("zero");
    let output = run(&[
        "solve",
        repo_config("zero_cost.cfg").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");

    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.contains("value,0\n"));
    assert!(summary.contains("iterations,1\n"));

    let trajectory = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    for line in trajectory.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let particle = fields[2];
        let y: f64 = fields[3].parse().unwrap();
        let z: f64 = fields[4].parse().unwrap();
        let expected = match particle {
            "0" => 1.0,
            "1" => -1.0,
            _ => 0.5,
        };
        assert_eq!(y, expected);
        assert_eq!(z, 0.0);
    }
    std::fs::remove_dir_all(&out).ok();
}

#[test]
fn malformed_config_exits_2_and_names_the_key() {
    let dir = tmp_dir("bad");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("bad.cfg");
    std::fs::write(
        &path,
        "[model]\nkind = quadratic\nn = 1\nq = oops\nlambda = 1\n[ensemble]\npoints = 1\n[solver]\nhorizon = 0.5\n",
    )
    .unwrap();
    let output = run(&["solve", path.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("model.q"), "stderr was: {stderr}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn missing_config_file_exits_2() {
    let output = run(&["solve", "/nonexistent/path.cfg"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn inadmissible_exits_3_unless_forced() {
    let out = tmp_dir("inadm");
    let config = repo_config("inadmissible.cfg");
    let output = run(&["solve", config.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("margin"), "stderr was: {stderr}");

    let forced = run(&[
        "solve",
        config.to_str().unwrap(),
        "--force-inadmissible",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(forced.status.success(), "{forced:?}");
    std::fs::remove_dir_all(&out).ok();
}

#[test]
fn nonconvergence_exits_4() {
    let dir = tmp_dir("noconv");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("noconv.cfg");
    std::fs::write(
        &path,
        "[model]\nkind = quadratic\nn = 1\nq = 1\nlambda = 1\n[ensemble]\npoints = 1\n[solver]\nhorizon = 0.5\ngrid = 50\nmax_iter = 2\n",
    )
    .unwrap();
    let output = run(&["solve", path.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(4));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn grid_and_tol_overrides_apply() {
    let out = tmp_dir("override");
    let output = run(&[
        "solve",
        repo_config("zero_cost.cfg").to_str().unwrap(),
        "--grid",
        "8",
        "--tol",
        "1e-6",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success());
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.contains("grid_intervals,8\n"));
    std::fs::remove_dir_all(&out).ok();
}

#[test]
fn kernel_config_solves() {
    let out = tmp_dir("kernel");
    let output = run(&[
        "solve",
        repo_config("kernel_gaussian.cfg").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");
    assert!(out.join("trajectory.csv").exists());
    assert!(!out.join("riccati.csv").exists());
    std::fs::remove_dir_all(&out).ok();
}

#[test]
fn solve_outputs_are_reproducible() {
    let out1 = tmp_dir("repro1");
    let out2 = tmp_dir("repro2");
    let config = repo_config("gaussian_n2.cfg");
    assert!(run(&["solve", config.to_str().unwrap(), "--out", out1.to_str().unwrap()])
        .status
        .success());
    assert!(run(&["solve", config.to_str().unwrap(), "--out", out2.to_str().unwrap()])
        .status
        .success());
    for file in ["trajectory.csv", "summary.csv", "gradient.csv", "riccati.csv"] {
        let a = std::fs::read(out1.join(file)).unwrap();
        let b = std::fs::read(out2.join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
    std::fs::remove_dir_all(&out1).ok();
    std::fs::remove_dir_all(&out2).ok();
}

#[test]
fn audit_unknown_suite_exits_2() {
    let output = run(&["audit", "bogus", "--seed", "1"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn audit_refuses_forced_inadmissible_with_exit_3() {
    let output = run(&["audit", "estimates", "--seed", "1", "--force-inadmissible"]);
    assert_eq!(output.status.code(), Some(3));
}

#[test]
fn audit_reports_are_byte_identical_for_a_seed() {
    let out1 = tmp_dir("audit1");
    let out2 = tmp_dir("audit2");
    for out in [&out1, &out2] {
        let output = run(&[
            "audit",
            "gradients",
            "--seed",
            "11",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(output.status.success(), "{output:?}");
    }
    let a = std::fs::read(out1.join("report.csv")).unwrap();
    let b = std::fs::read(out2.join("report.csv")).unwrap();
    assert_eq!(a, b);
    let a = std::fs::read(out1.join("report.txt")).unwrap();
    let b = std::fs::read(out2.join("report.txt")).unwrap();
    assert_eq!(a, b);
    std::fs::remove_dir_all(&out1).ok();
    std::fs::remove_dir_all(&out2).ok();
}

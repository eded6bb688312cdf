//! End-to-end tests that drive the compiled binary the way a user would.

use std::path::Path;
use std::process::{Command, Output};

fn pinnworks(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pinnworks"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn version_and_help_exit_zero() {
    assert_eq!(pinnworks(&["--version"]).status.code(), Some(0));
    assert_eq!(pinnworks(&["--help"]).status.code(), Some(0));
    assert_eq!(pinnworks(&["train", "--help"]).status.code(), Some(0));
}

#[test]
fn missing_config_file_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = pinnworks(&[
        "train",
        "--config",
        "/nonexistent/run.ini",
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("error"));
}

#[test]
fn unknown_preset_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = pinnworks(&[
        "simulate",
        "--preset",
        "bogus",
        "--out",
        dir.path().join("x.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    assert!(err.contains("bogus"), "names the offending preset: {err}");
}

#[test]
fn step_that_does_not_divide_the_domain_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = pinnworks(&[
        "simulate",
        "--preset",
        "normal",
        "--dt",
        "0.3",
        "--out",
        dir.path().join("x.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("divide"));
}

#[test]
fn simulate_dsl_with_default_adaptive_solver_matches_exact_decay() {
    let dir = tempfile::tempdir().unwrap();
    let dsl = dir.path().join("decay.ode");
    std::fs::write(&dsl, "d(x)/dt = -x;\ninit x=1;\ndomain 0 1\n").unwrap();
    let csv = dir.path().join("decay.csv");
    let out = pinnworks(&[
        "simulate",
        "--system",
        dsl.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));

    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,x");
    assert_eq!(lines.len(), 102, "header plus 101 output-grid rows");
    let last: Vec<f64> = lines[101].split(',').map(|c| c.parse().unwrap()).collect();
    assert_eq!(last[0], 1.0);
    assert!(
        (last[1] - (-1.0f64).exp()).abs() < 1e-6,
        "endpoint {} vs e^-1",
        last[1]
    );
}

fn write_config(path: &Path, body: &str) {
    std::fs::write(path, body).unwrap();
}

#[test]
fn train_then_compare_produces_full_artifact_set() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.ini");
    write_config(
        &cfg,
        "[system]\npreset = normal\n\n[sampler]\nkind = grid\ndt = 0.1\n\n\
         [optimizer]\nmax_iterations = 400\n\n[run]\nseed = 2\n",
    );
    let train_dir = dir.path().join("train");
    let out = pinnworks(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        train_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    for name in ["model.ckpt", "report.txt", "loss_history.csv"] {
        assert!(train_dir.join(name).exists(), "{name} missing");
    }

    let cmp_dir = dir.path().join("cmp");
    let out = pinnworks(&[
        "compare",
        "--checkpoint",
        train_dir.join("model.ckpt").to_str().unwrap(),
        "--preset",
        "normal",
        "--out",
        cmp_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));

    let report = std::fs::read_to_string(cmp_dir.join("report.txt")).unwrap();
    assert!(report.contains("rmse_delta = "));
    assert!(report.contains("rmse_omega = "));
    assert!(report.contains("equilibrium_reached = "));

    let errors = std::fs::read_to_string(cmp_dir.join("errors.csv")).unwrap();
    assert_eq!(errors.lines().next().unwrap(), "t,err_delta,err_omega");
    assert_eq!(errors.lines().count(), 1002, "header plus one row per grid point");

    for name in ["overlay_delta.svg", "overlay_omega.svg", "phase.svg"] {
        let svg = std::fs::read_to_string(cmp_dir.join(name)).unwrap();
        assert!(svg.starts_with("<svg"), "{name} is not an SVG document");
        assert!(svg.contains("polyline"), "{name} has no data paths");
    }
}

#[test]
fn compare_against_a_one_state_system_skips_the_phase_plot() {
    let dir = tempfile::tempdir().unwrap();
    let dsl = dir.path().join("decay.ode");
    std::fs::write(&dsl, "d(x)/dt = -x;\ninit x=1;\ndomain 0 1\n").unwrap();
    let cfg = dir.path().join("run.ini");
    write_config(
        &cfg,
        &format!(
            "[system]\ndsl = {}\n\n[sampler]\nkind = grid\ndt = 0.1\n\n\
             [optimizer]\nmax_iterations = 60\n",
            dsl.display()
        ),
    );
    let train_dir = dir.path().join("train");
    let out = pinnworks(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        train_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));

    let cmp_dir = dir.path().join("cmp");
    let out = pinnworks(&[
        "compare",
        "--checkpoint",
        train_dir.join("model.ckpt").to_str().unwrap(),
        "--system",
        dsl.to_str().unwrap(),
        "--out",
        cmp_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    assert!(cmp_dir.join("overlay_x.svg").exists());
    assert!(!cmp_dir.join("phase.svg").exists(), "one state cannot make a phase plane");
    let report = std::fs::read_to_string(cmp_dir.join("report.txt")).unwrap();
    assert!(report.contains("equilibrium_reached = n/a"));
}

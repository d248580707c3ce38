use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tactile_cli::RunManifest;

const SMALL_GRID: &str = "grid_nx = 4\ngrid_ny = 4\ndepths = 0.6, 1.2\n";

fn tactile(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tactile"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).trim().to_string()
}

fn ok(o: Output) -> String {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        o.status.code(),
        stdout(&o),
        String::from_utf8_lossy(&o.stderr)
    );
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 1, "summary must be one line: {out}");
    out
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("study.cfg");
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small dataset plus config, generated once per test.
fn small(dir: &Path) -> (PathBuf, PathBuf) {
    let cfg = write_config(dir, SMALL_GRID);
    let out = dir.join("gen");
    let line = ok(tactile(&["--config", s(&cfg), "--out", s(&out), "generate"]));
    assert!(line.starts_with("samples 32 "), "{line}");
    (cfg, out.join("dataset.tds"))
}

#[test]
fn single_indentation_grid_gives_one_sample() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "grid_nx = 1\ngrid_ny = 1\ndepths = 1.0\n");
    let out = dir.path().join("g");
    let line = ok(tactile(&["--config", s(&cfg), "--out", s(&out), "generate"]));
    assert!(line.starts_with("samples 1 "), "{line}");
    assert!(line.contains("uncovered_fraction"), "{line}");
    let bytes = std::fs::read(out.join("dataset.tds")).unwrap();
    assert_eq!(&bytes[..4], b"TDS1");
    let m = RunManifest::load(&out).unwrap();
    assert_eq!(m.subcommand, "generate");
    assert!(m.outputs.iter().any(|o| o == "dataset.tds"));
}

#[test]
fn unwritable_output_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "not a directory").unwrap();
    let out = blocker.join("sub");
    let o = tactile(&["--out", s(&out), "coverage"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(o.stdout.is_empty());
    assert!(!o.stderr.is_empty());
}

#[test]
fn invalid_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bin_nx = 0\n");
    let o = tactile(&["--config", s(&cfg), "--out", s(dir.path()), "generate"]);
    assert_eq!(o.status.code(), Some(2));
    let cfg = write_config(dir.path(), "no_such_key = 3\n");
    let o = tactile(&["--config", s(&cfg), "--out", s(dir.path()), "generate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_key"));
}

#[test]
fn dimension_reports_every_variant() {
    let dir = tempfile::tempdir().unwrap();
    let line = ok(tactile(&["--out", s(dir.path()), "dimension"]));
    assert_eq!(
        line,
        "as-built 17.45 | relocated-connector 14.55 | relocated-board 13.45 | ideal-minimal 5.00"
    );
    let one = ok(tactile(&["--out", s(dir.path()), "dimension", "--variant", "relocated-connector"]));
    assert_eq!(one, "relocated-connector 14.55");
    let bad = tactile(&["--out", s(dir.path()), "dimension", "--variant", "thin"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn coverage_writes_polygons() {
    let dir = tempfile::tempdir().unwrap();
    let line = ok(tactile(&["--out", s(dir.path()), "coverage"]));
    assert!(line.starts_with("cameras 4 uncovered_fraction 0"), "{line}");
    let csv = std::fs::read_to_string(dir.path().join("coverage.csv")).unwrap();
    assert!(csv.starts_with("camera,vertex,x_mm,y_mm"));
}

#[test]
fn zero_epoch_training_reports_initial_metrics_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = small(dir.path());
    let run = |name: &str| {
        let out = dir.path().join(name);
        let line = ok(tactile(&[
            "--config",
            s(&cfg),
            "--out",
            s(&out),
            "train",
            "--dataset",
            s(&data),
            "--max-epochs",
            "0",
        ]));
        (line, out)
    };
    let (line, a) = run("a");
    assert!(line.starts_with("RMSE_dist ") && line.contains(" | RMSE_total "), "{line}");
    let csv = std::fs::read_to_string(a.join("train.csv")).unwrap();
    assert_eq!(csv.trim(), "epoch,train_loss,val_rmse");
    let (line_b, b) = run("b");
    assert_eq!(line, line_b);
    for f in ["model.tnm", "train.csv", "metrics.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert!(RunManifest::load(&a).unwrap().same_run(&RunManifest::load(&b).unwrap()));
}

#[test]
fn mismatched_model_and_dataset_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = small(dir.path());
    // a dataset rendered at another image size
    let other_cfg = dir.path().join("other.cfg");
    std::fs::write(&other_cfg, format!("{SMALL_GRID}image_size = 32\n")).unwrap();
    let other = dir.path().join("other");
    ok(tactile(&["--config", s(&other_cfg), "--out", s(&other), "generate"]));
    let o = tactile(&[
        "--config",
        s(&cfg),
        "--out",
        s(dir.path()),
        "train",
        "--dataset",
        s(&other.join("dataset.tds")),
        "--max-epochs",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(2));

    let model_dir = dir.path().join("m");
    ok(tactile(&[
        "--config", s(&cfg), "--out", s(&model_dir), "train", "--dataset", s(&data), "--max-epochs", "0",
    ]));
    let o = tactile(&[
        "--config",
        s(&other_cfg),
        "--out",
        s(dir.path()),
        "predict",
        "--model",
        s(&model_dir.join("model.tnm")),
        "--at",
        "24,25,1",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn predict_writes_grids_and_rejects_off_surface_points() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = small(dir.path());
    let model_dir = dir.path().join("m");
    ok(tactile(&[
        "--config", s(&cfg), "--out", s(&model_dir), "train", "--dataset", s(&data), "--max-epochs", "1",
    ]));
    let model = model_dir.join("model.tnm");

    let off = tactile(&["--config", s(&cfg), "--out", s(dir.path()), "predict", "--model", s(&model), "--at", "60,10,1"]);
    assert_eq!(off.status.code(), Some(2));

    let zero = dir.path().join("zero");
    let line = ok(tactile(&["--config", s(&cfg), "--out", s(&zero), "predict", "--model", s(&model), "--at", "24,25,0"]));
    assert!(line.contains("total 0.00000e0 0.00000e0 0.00000e0"), "{line}");
    for kind in ["pred", "truth"] {
        for axis in ["fx", "fy", "fz"] {
            let csv = std::fs::read_to_string(zero.join(format!("{kind}_{axis}.csv"))).unwrap();
            let rows: Vec<&str> = csv.lines().collect();
            assert_eq!(rows.len(), 26);
            assert!(rows.iter().all(|r| r.split(',').count() == 25));
            assert!(
                csv.split([',', '\n']).filter(|t| !t.is_empty()).all(|t| t.parse::<f64>().unwrap() == 0.0),
                "{kind}_{axis}"
            );
            let pgm = std::fs::read(zero.join(format!("{kind}_{axis}.pgm"))).unwrap();
            assert!(pgm.starts_with(b"P5\n25 26\n255\n"));
            assert!(pgm[13..].iter().all(|&b| b == 128), "zero maps to mid-grey");
        }
    }

    let by_id = dir.path().join("id");
    let line = ok(tactile(&[
        "--config", s(&cfg), "--out", s(&by_id), "predict", "--model", s(&model), "--sample", "5", "--dataset", s(&data),
    ]));
    assert!(line.contains("RMSE_dist"), "{line}");
}

#[test]
fn recalibration_rows_and_freeze_check() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = small(dir.path());
    let three = dir.path().join("three");
    ok(tactile(&[
        "--config", s(&cfg), "--out", s(&three), "train", "--dataset", s(&data), "--cameras", "0,1,2", "--max-epochs", "1",
    ]));
    let model = three.join("model.tnm");

    let single = dir.path().join("single");
    let line = ok(tactile(&[
        "--config", s(&cfg), "--out", s(&single), "recalibrate", "--model", s(&model), "--dataset", s(&data),
        "--fractions", "1.0", "--seeds", "1", "--max-epochs", "1",
    ]));
    assert_eq!(line, "rows 1 | frozen_layers_identical true");
    let csv = std::fs::read_to_string(single.join("recalibration.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.starts_with("fraction,seed,epochs,dist_xy,total_xy,dist_z,total_z"));

    let sweep = dir.path().join("sweep");
    let line = ok(tactile(&[
        "--config", s(&cfg), "--out", s(&sweep), "recalibrate", "--model", s(&model), "--dataset", s(&data),
        "--fractions", "0.1,0.25,0.5,0.75,1.0", "--seeds", "1,2,3", "--max-epochs", "1",
    ]));
    assert_eq!(line, "rows 15 | frozen_layers_identical true");
    let csv = std::fs::read_to_string(sweep.join("recalibration.csv")).unwrap();
    assert_eq!(csv.lines().count(), 16);
    let trend = std::fs::read_to_string(sweep.join("trend.csv")).unwrap();
    assert_eq!(trend.lines().count(), 5);
    let m = RunManifest::load(&sweep).unwrap();
    assert_eq!(m.outputs.iter().filter(|o| o.ends_with(".tnm")).count(), 15);
}

#[test]
fn seed_flag_changes_the_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "grid_nx = 2\ngrid_ny = 2\ndepths = 1.0\n");
    let gen = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        ok(tactile(&["--config", s(&cfg), "--seed", seed, "--out", s(&out), "generate"]));
        std::fs::read(out.join("dataset.tds")).unwrap()
    };
    let a = gen("5", "a");
    assert_eq!(a, gen("5", "b"));
    assert_ne!(a, gen("6", "c"));
}

#[test]
fn threads_flag_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    ok(tactile(&["--threads", "1", "--out", s(dir.path()), "coverage"]));
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cellsplit::raster::{rasterize_2d, Image2D, Mesh3D};
use cellsplit::{Blob, Dim, Model};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cellsplit"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_model(dir: &Path, name: &str, model: &Model) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, model.to_json()).unwrap();
    path
}

fn target_model() -> Model {
    let mut a = Blob::disc(0.9, 1.0, 0.5, [0.35, 0.5], 0.2);
    a.y_s = 0.12;
    a.z_r = 0.2;
    let b = Blob::disc(0.05, 0.8, 0.5, [0.7, 0.3], 0.1);
    Model::with_blobs(Dim::Two, 0.15, vec![a, b]).unwrap()
}

const FAST: &str = r#"{
  "search": {
    "num_rounds": 1,
    "split_count": 2,
    "cma": { "population_size": 20, "parent_count": 10, "max_iterations": 40 },
    "prime": { "max_blobs": 3, "scan_grid": 5 }
  },
  "error_threshold": 4.0
}"#;

/// Renders the target picture and a fast config into `dir`.
fn setup(dir: &Path) -> (PathBuf, PathBuf) {
    let model = write_model(dir, "target.json", &target_model());
    let target = dir.join("target.pgm");
    assert!(
        run(&["render", p(&model), "--out", p(&target), "--dims", "24x24"])
            .status
            .success()
    );
    let config = dir.join("fast.json");
    fs::write(&config, FAST).unwrap();
    (target, config)
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn render_blank_white() {
    let tmp = tempfile::tempdir().unwrap();
    let m = write_model(tmp.path(), "m.json", &Model::blank(Dim::Two, 1.0));
    let out = tmp.path().join("white.pgm");
    assert!(run(&["render", p(&m), "--out", p(&out), "--dims", "8x5"])
        .status
        .success());
    let img = Image2D::load(&out).unwrap();
    assert_eq!((img.width, img.height), (8, 5));
    assert!(img.pixels.iter().all(|&v| v == 255));
}

#[test]
fn render_matches_rasterizer_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let model = target_model();
    let m = write_model(tmp.path(), "m.json", &model);
    let expected = rasterize_2d(&model, 40, 30).unwrap();
    for name in ["r.pgm", "r.png"] {
        let out = tmp.path().join(name);
        assert!(run(&["render", p(&m), "--out", p(&out), "--dims", "40x30"])
            .status
            .success());
        assert_eq!(Image2D::load(&out).unwrap(), expected, "{name}");
    }
}

#[test]
fn render_3d_slices() {
    let tmp = tempfile::tempdir().unwrap();
    let model = Model::with_blobs(
        Dim::Three,
        0.5,
        vec![Blob::ball(0.9, 1.0, 0.5, [0.5, 0.5, 0.5], 0.3)],
    )
    .unwrap();
    let m = write_model(tmp.path(), "m.json", &model);
    let out = tmp.path().join("slices");
    assert!(
        run(&["render", p(&m), "--out", p(&out), "--dims", "6x7x10"])
            .status
            .success()
    );
    let slices = fs::read_dir(&out)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .starts_with("slice_")
        })
        .count();
    assert_eq!(slices, 10);
    let mesh = Mesh3D::load(&out.join("mesh.txt")).unwrap();
    assert_eq!((mesh.nx, mesh.ny, mesh.nz), (6, 7, 10));
}

#[test]
fn render_dimension_mismatch_is_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let m = write_model(tmp.path(), "m.json", &Model::blank(Dim::Two, 0.5));
    let out = run(&[
        "render",
        p(&m),
        "--out",
        p(&tmp.path().join("x")),
        "--dims",
        "4x4x4",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn discover_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let (target, config) = setup(tmp.path());
    let out_dir = tmp.path().join("run");
    let out = run(&[
        "discover",
        p(&target),
        "--config",
        p(&config),
        "--out",
        p(&out_dir),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("final error"));

    let m = manifest(&out_dir);
    for f in m["outputs"].as_array().unwrap() {
        assert!(out_dir.join(f.as_str().unwrap()).exists());
    }
    let err = m["final_error"].as_f64().unwrap();
    assert!(err < 4.0, "{err}");
    assert_eq!(m["threshold_met"], true);

    // the reported error is the error of the written model
    let model = Model::from_json(&fs::read_to_string(out_dir.join("model.json")).unwrap()).unwrap();
    let recon = rasterize_2d(&model, 24, 24).unwrap();
    assert_eq!(
        Image2D::load(&out_dir.join("reconstruction.pgm")).unwrap(),
        recon
    );
    let target_img = Image2D::load(&target).unwrap();
    let direct = recon
        .pixels
        .iter()
        .zip(&target_img.pixels)
        .map(|(a, b)| (*a as f64 - *b as f64).abs())
        .sum::<f64>()
        / recon.pixels.len() as f64;
    assert_eq!(direct, err);

    let trace = fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    assert!(trace.starts_with("evaluations,best_error,stage\n"));
    assert!(trace.contains(",split\n"));
}

#[test]
fn zero_rounds_never_split() {
    let tmp = tempfile::tempdir().unwrap();
    let (target, config) = setup(tmp.path());
    let out_dir = tmp.path().join("run");
    let args = [
        "discover",
        p(&target),
        "--config",
        p(&config),
        "--rounds",
        "0",
    ];
    assert!(bin()
        .args(args)
        .args(["--out", p(&out_dir)])
        .status()
        .unwrap()
        .success());
    let trace = fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    assert!(!trace.contains("split"));
    assert_eq!(manifest(&out_dir)["config"]["search"]["num_rounds"], 0);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (target, config) = setup(tmp.path());
    let dirs = [tmp.path().join("a"), tmp.path().join("b")];
    for d in &dirs {
        let args = [
            "discover",
            p(&target),
            "--config",
            p(&config),
            "--seed",
            "9",
        ];
        assert!(bin()
            .args(args)
            .args(["--out", p(d)])
            .status()
            .unwrap()
            .success());
    }
    for f in [
        "model.json",
        "trace.csv",
        "cma_trace.csv",
        "reconstruction.pgm",
    ] {
        assert_eq!(
            fs::read(dirs[0].join(f)).unwrap(),
            fs::read(dirs[1].join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn existing_manifest_is_never_overwritten() {
    let tmp = tempfile::tempdir().unwrap();
    let (target, config) = setup(tmp.path());
    let out_dir = tmp.path().join("run");
    let args = [
        "discover",
        p(&target),
        "--config",
        p(&config),
        "--out",
        p(&out_dir),
    ];
    assert!(run(&args).status.success());
    let before = fs::read(out_dir.join("manifest.json")).unwrap();
    assert_eq!(run(&args).status.code(), Some(6));
    assert_eq!(fs::read(out_dir.join("manifest.json")).unwrap(), before);
}

#[test]
fn failure_classes_have_distinct_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let (target, _) = setup(tmp.path());
    let out = |name: &str| tmp.path().join(name);

    let missing = run(&["discover", p(&out("nope.pgm")), "--out", p(&out("r1"))]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(!String::from_utf8_lossy(&missing.stderr).is_empty());

    let typo = out("typo.json");
    fs::write(&typo, r#"{"serach": {}}"#).unwrap();
    let bad_config = run(&[
        "discover",
        p(&target),
        "--config",
        p(&typo),
        "--out",
        p(&out("r2")),
    ]);
    assert_eq!(bad_config.status.code(), Some(2));

    let garbage = out("garbage.pgm");
    fs::write(&garbage, b"not an image").unwrap();
    let bad_image = run(&["discover", p(&garbage), "--out", p(&out("r3"))]);
    assert_eq!(bad_image.status.code(), Some(5));

    assert_eq!(run(&["discover"]).status.code(), Some(2));
}

#[test]
fn jobs_launch_independent_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let (target, config) = setup(tmp.path());
    let parent = tmp.path().join("runs");
    let args = [
        "discover",
        p(&target),
        "--config",
        p(&config),
        "--rounds",
        "0",
        "--jobs",
        "2",
    ];
    let status = bin()
        .args(args)
        .args(["--seed", "4", "--out", p(&parent)])
        .status()
        .unwrap();
    assert!(status.success());
    let seeds: Vec<u64> = ["run-000", "run-001"]
        .iter()
        .map(|d| manifest(&parent.join(d))["seed"].as_u64().unwrap())
        .collect();
    assert_eq!(seeds, vec![4, 5]);
}

fn fake_run(dir: &Path, name: &str, error: f64) {
    let d = dir.join(name);
    fs::create_dir_all(&d).unwrap();
    fs::write(
        d.join("manifest.json"),
        format!("{{\"final_error\": {error}}}"),
    )
    .unwrap();
}

#[test]
fn compare_separated_triples() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for (i, e) in [1.0, 2.0, 3.0].iter().enumerate() {
        fake_run(&a, &format!("r{i}"), *e);
    }
    for (i, e) in [4.0, 5.0, 6.0].iter().enumerate() {
        fake_run(&b, &format!("r{i}"), *e);
    }
    let json = tmp.path().join("report.json");
    let out = run(&["compare", p(&a), p(&b), "--json", p(&json)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("p = 0.100000"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(json).unwrap()).unwrap();
    assert!((report["p_value"].as_f64().unwrap() - 0.1).abs() < 1e-12);
    assert_eq!(report["a"]["mean"], 2.0);
    assert_eq!(report["b"]["mean"], 5.0);
    assert_eq!(report["a"]["best"], 1.0);
    assert_eq!(report["b"]["worst"], 6.0);
}

#[test]
fn compare_identical_and_empty() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for i in 0..3 {
        fake_run(&a, &format!("r{i}"), 0.5);
        fake_run(&b, &format!("r{i}"), 0.5);
    }
    let out = run(&["compare", p(&a), p(&b)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("p = 1.000000"));
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert_eq!(run(&["compare", p(&empty), p(&b)]).status.code(), Some(3));
}

fn model_3d() -> Model {
    let mut a = Blob::ball(0.95, 1.0, 0.5, [0.3, 0.4, 0.3], 0.2);
    a.y_s = 0.15;
    let b = Blob::ball(0.2, 0.9, 0.5, [0.7, 0.6, 0.5], 0.2);
    Model::with_blobs(Dim::Three, 0.6, vec![a, b]).unwrap()
}

#[test]
fn invert3d_synthetic() {
    let tmp = tempfile::tempdir().unwrap();
    let m = write_model(tmp.path(), "m.json", &model_3d());
    let data = tmp.path().join("data.txt");
    assert!(run(&["synth", p(&m), "--out", p(&data)]).status.success());
    let config = tmp.path().join("c.json");
    fs::write(
        &config,
        r#"{"search": {"num_rounds": 1, "split_count": 1, "evaluation_budget": 4000,
            "prime": {"max_blobs": 2, "scan_grid": 4}}}"#,
    )
    .unwrap();
    let out_dir = tmp.path().join("run");
    let out = run(&[
        "invert3d",
        p(&data),
        "--config",
        p(&config),
        "--out",
        p(&out_dir),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let mesh = fs::read_to_string(out_dir.join("mesh.txt")).unwrap();
    assert_eq!(mesh.lines().next(), Some("13 14 10"));
    let m = manifest(&out_dir);
    assert_eq!(m["problem"]["kind"], "mesh");
    assert!(m["final_error"].as_f64().unwrap().is_finite());
}

#[test]
fn invert3d_missing_solver_is_forward_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data.txt");
    fs::write(&data, "1.0 0.1\n").unwrap();
    let out_dir = tmp.path().join("run");
    let out = run(&[
        "invert3d",
        p(&data),
        "--forward",
        "exec:/definitely/not/a/solver",
        "--out",
        p(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/definitely/not/a/solver"));
    assert!(!out_dir.join("manifest.json").exists());
}

#[test]
fn invert3d_data_length_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data.txt");
    fs::write(&data, "1.0\n2.0\n").unwrap();
    let out = run(&["invert3d", p(&data), "--out", p(&tmp.path().join("run"))]);
    assert_eq!(out.status.code(), Some(5));
}

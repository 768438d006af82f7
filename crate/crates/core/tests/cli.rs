use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vamoforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vamoforge"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn single_source_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ph = d.join("phantom");
    let out = vamoforge(&["phantom", "--kind", "y", "--seed", "3", "--out", p(&ph)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&ph.join("phantom.json"))["schema_version"], 1);

    let out = vamoforge(&["graph", "--mask", p(&ph.join("mask.vvol")), "--out", p(&d.join("graph.json"))]);
    assert!(out.status.success());
    let g = json(&d.join("graph.json"));
    assert_eq!(g["branches"].as_array().unwrap().len(), 3);
    assert_eq!(g["schema_version"], 1);

    let out = vamoforge(&["fit", "--mask", p(&ph.join("mask.vvol"))]);
    assert!(out.status.success());
    let fits: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(fits["splines"].as_array().unwrap().len(), 3);
    assert_eq!(fits["splines"][0]["spline"]["order"], 4);

    let gen = d.join("gen");
    let out = vamoforge(&[
        "generate",
        "--tof",
        p(&ph.join("tof.vvol")),
        "--mask",
        p(&ph.join("mask.vvol")),
        "--label",
        "A-B",
        "--seed",
        "9",
        "--out",
        p(&gen),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let meta = json(&gen.join("patch_00000.meta.json"));
    assert_eq!(meta["label"], "A-B");
    assert_eq!(meta["seed"], 9);

    let out = vamoforge(&[
        "metrics",
        p(&gen.join("patch_00000.vvol")),
        "--reference",
        p(&ph.join("tof.vvol")),
        "--out",
        p(&d.join("metrics.json")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = json(&d.join("metrics.json"));
    assert_eq!(m["schema_version"], 1);
    assert_eq!(m["reports"][0]["report"]["quantization_levels"], 32);
    assert!(m["comparisons"][0]["difference"]["tenengrad"].is_number());

    let png = d.join("png");
    let out = vamoforge(&[
        "render",
        "--intensity",
        p(&gen.join("patch_00000.vvol")),
        "--vessel",
        p(&gen.join("patch_00000.vessel.vvol")),
        "--ica",
        p(&gen.join("patch_00000.ica.vvol")),
        "--axis",
        "y",
        "--out",
        p(&png),
    ]);
    assert!(out.status.success());
    assert_eq!(fs::read_dir(&png).unwrap().count(), 128);
}

#[test]
fn batch_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("cfg.json");
    fs::write(&cfg, r#"{"schema_version": 1, "counts": {"C-D": 2, "K-L": 1}}"#).unwrap();
    let out = vamoforge(&["batch", "--config", p(&cfg), "--out", p(&d.join("ok")), "--seed", "42", "--workers", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = json(&d.join("ok/manifest.json"));
    assert_eq!(manifest["total"], 3);
    assert_eq!(manifest["master_seed"], 42);

    fs::write(&cfg, r#"{"counts": {"C-D": -1}}"#).unwrap();
    let out = vamoforge(&["batch", "--config", p(&cfg), "--out", p(&d.join("bad"))]);
    assert_eq!(out.status.code(), Some(2));

    fs::write(&cfg, r#"{"counts": {"Q-R": 1}}"#).unwrap();
    let out = vamoforge(&["batch", "--config", p(&cfg), "--out", p(&d.join("plan"))]);
    assert_eq!(out.status.code(), Some(2));

    let out = vamoforge(&["batch", "--config", p(&d.join("missing.json")), "--out", p(&d.join("x"))]);
    assert_eq!(out.status.code(), Some(2));

    // Patches larger than the source crops fail at generation time.
    fs::write(&cfg, r#"{"patch_size": [80, 64, 64], "counts": {"A-B": 2}}"#).unwrap();
    let out = vamoforge(&["batch", "--config", p(&cfg), "--out", p(&d.join("gen"))]);
    assert_eq!(out.status.code(), Some(3));
    let errors = json(&d.join("gen/errors.json"));
    assert_eq!(errors["schema_version"], 1);
    assert_eq!(errors["failures"].as_array().unwrap().len(), 2);
    assert_eq!(errors["failures"][0]["stage"], "crop");
    assert_eq!(json(&d.join("gen/manifest.json"))["total"], 0);
}

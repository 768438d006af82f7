mod common;

use std::collections::BTreeMap;
use std::fs;

use common::{dice, graph_of};
use vamoforge::pipeline::batch::{cow_lite_sources, plan_batch, radius_bin, run_batch, stratified_radii, PatchFiles};
use vamoforge::pipeline::phantom::{cow_lite, cylinder, y_phantom, PhantomKind, YParams};
use vamoforge::pipeline::render::{render_slices, Axis, ANEURYSM_TINT, VESSEL_TINT};
use vamoforge::pipeline::{generate_patch, AneurysmConfig, GenConfig, Range, Source, SourceSpec};
use vamoforge::vvol::encode;
use vamoforge::{crop, Error, PatchRegion};

fn zero_perturbation() -> GenConfig {
    GenConfig {
        spline_weight: Range(0.0, 0.0),
        kernel_alpha: Range(0.0, 0.0),
        aneurysm: AneurysmConfig { enabled: false, ..AneurysmConfig::default() },
        ..GenConfig::default()
    }
}

fn y_source(seed: u64) -> Source {
    let p = y_phantom(&YParams::random(seed), seed).unwrap();
    Source::new(&format!("y/{seed}"), "Y", p.tof, p.mask, None).unwrap()
}

fn source_dice(source: &Source, cfg: &GenConfig, seed: u64) -> f64 {
    let patch = generate_patch(source, cfg, seed).unwrap();
    let region = PatchRegion::new(patch.meta.origin, patch.meta.dims);
    dice(&patch.vessel_mask, &crop(&source.mask, &region).unwrap())
}

#[test]
fn phantom_kinds_have_expected_graphs() {
    let g = graph_of(&cylinder(3.0, 50.0, 0).unwrap());
    assert_eq!(g.branches.len(), 1);
    assert_eq!(g.nodes_with_degree(1).count(), 2);
    let g = graph_of(&y_phantom(&YParams::default(), 0).unwrap());
    assert_eq!(g.nodes_with_degree(3).count(), 1);
    let ring = cow_lite(0).unwrap();
    assert_eq!(ring.bifurcations.len(), 7);
    assert_eq!(graph_of(&ring).nodes_with_degree(3).count(), 7);
}

#[test]
fn phantom_kind_json_round_trip() {
    for kind in [
        PhantomKind::Cylinder { radius: 2.0, length: 30.0 },
        PhantomKind::Y(YParams::default()),
        PhantomKind::CowLite,
    ] {
        let text = serde_json::to_string(&kind).unwrap();
        assert_eq!(serde_json::from_str::<PhantomKind>(&text).unwrap(), kind);
    }
}

#[test]
fn zero_perturbation_reproduces_tubular_phantoms() {
    let cfg = zero_perturbation();
    for seed in 0..5 {
        let d = source_dice(&y_source(seed), &cfg, seed);
        assert!(d >= 0.85, "seed {seed}: dice {d}");
    }
}

#[test]
fn zero_perturbation_reproduces_ring_crops() {
    let cfg = zero_perturbation();
    for s in cow_lite_sources().unwrap() {
        let d = source_dice(&s, &cfg, 1);
        assert!(d >= 0.85, "{}: dice {d}", s.label);
    }
}

#[test]
fn aneurysm_on_y_phantom_sits_at_the_planned_center() {
    let cfg = GenConfig {
        spline_weight: Range(0.0, 0.0),
        kernel_alpha: Range(0.0, 0.0),
        aneurysm: AneurysmConfig {
            gamma: Range(1.0, 1.0),
            deform_fraction: 0.0,
            thrombosis_probability: 0.0,
            ..AneurysmConfig::default()
        },
        ..GenConfig::default()
    };
    let source = Source::new("y", "Y", y_phantom(&YParams::default(), 0).unwrap().tof, y_phantom(&YParams::default(), 0).unwrap().mask, None).unwrap();
    for seed in 0..5 {
        let patch = generate_patch(&source, &cfg, seed).unwrap();
        let meta = patch.meta.aneurysm.as_ref().unwrap();
        let c = vamoforge::aneurysm::centroid(&patch.ica_mask).unwrap();
        let want = meta.placement.center;
        let err = ((c[0] - want[0]).powi(2) + (c[1] - want[1]).powi(2) + (c[2] - want[2]).powi(2)).sqrt();
        assert!(err <= 1.0, "seed {seed}: centroid {c:?} vs {want:?}");
        assert!(patch.meta.hygiene.ok());
    }
}

#[test]
fn patches_are_deterministic() {
    let sources = cow_lite_sources().unwrap();
    let cfg = GenConfig::default();
    let a = generate_patch(&sources[2], &cfg, 77).unwrap();
    let b = generate_patch(&sources[2], &cfg, 77).unwrap();
    assert_eq!(encode(&a.intensity), encode(&b.intensity));
    assert_eq!(encode(&a.vessel_mask), encode(&b.vessel_mask));
    assert_eq!(encode(&a.ica_mask), encode(&b.ica_mask));
    assert_eq!(serde_json::to_string(&a.meta).unwrap(), serde_json::to_string(&b.meta).unwrap());
    let c = generate_patch(&sources[2], &cfg, 78).unwrap();
    assert_ne!(encode(&a.intensity), encode(&c.intensity));
}

#[test]
fn patch_invariants() {
    let sources = cow_lite_sources().unwrap();
    let cfg = GenConfig::default();
    for (i, s) in sources.iter().enumerate() {
        let p = generate_patch(s, &cfg, i as u64).unwrap();
        assert_eq!(p.intensity.dims(), [64; 3]);
        assert!(p.intensity.same_grid(&p.vessel_mask) && p.intensity.same_grid(&p.ica_mask));
        assert!(p.vessel_mask.is_binary() && p.ica_mask.is_binary());
        assert!(p.meta.aneurysm.is_some() && p.ica_mask.count_nonzero() > 0);
        assert!(p.meta.hygiene.ok());
        let json = serde_json::to_value(&p.meta).unwrap();
        assert_eq!(json["schema_version"], 1);
    }
    let cfg = zero_perturbation();
    let p = generate_patch(&sources[0], &cfg, 0).unwrap();
    assert!(p.meta.aneurysm.is_none());
    assert_eq!(p.ica_mask.count_nonzero(), 0);
}

#[test]
fn config_parsing_and_validation() {
    let cfg = GenConfig::from_json(r#"{"schema_version": 1, "counts": {"A-B": 2}, "master_seed": 5}"#).unwrap();
    assert_eq!(cfg.total_count(), 2);
    assert_eq!(cfg.patch_size, [64; 3]);
    for bad in [
        r#"{"unknown_key": 1}"#,
        r#"{"schema_version": 9}"#,
        r#"{"patch_size": [8, 64, 64]}"#,
        r#"{"spline_weight": [2.0, 1.0]}"#,
        r#"{"aneurysm": {"gamma": [0.5, 3.0]}}"#,
        r#"{"aneurysm": {"thrombosis_probability": 1.5}}"#,
        "not json",
    ] {
        assert!(matches!(GenConfig::from_json(bad), Err(Error::Configuration(_))), "{bad}");
    }
    let default_json = serde_json::to_string(&GenConfig::default()).unwrap();
    assert_eq!(GenConfig::from_json(&default_json).unwrap(), GenConfig::default());
}

fn small_batch(seed: u64) -> GenConfig {
    GenConfig {
        counts: BTreeMap::from([("A-B".into(), 3), ("G-H".into(), 2), ("M-N-O".into(), 2)]),
        master_seed: seed,
        ..GenConfig::default()
    }
}

#[test]
fn batch_output_is_independent_of_worker_count() {
    let sources = cow_lite_sources().unwrap();
    let cfg = small_batch(42);
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let a = run_batch(&sources, &cfg, 1, Some(d1.path())).unwrap();
    let b = run_batch(&sources, &cfg, 3, Some(d2.path())).unwrap();
    assert!(a.failures.is_empty() && b.failures.is_empty());
    assert_eq!(a.manifest.total, 7);
    assert_eq!(a.manifest.counts["A-B"], 3);
    let m1 = fs::read(d1.path().join("manifest.json")).unwrap();
    assert_eq!(m1, fs::read(d2.path().join("manifest.json")).unwrap());
    let manifest: serde_json::Value = serde_json::from_slice(&m1).unwrap();
    assert_eq!(manifest["schema_version"], 1);
    for i in 0..7 {
        let f = PatchFiles::for_index(i);
        for name in [&f.intensity, &f.vessel, &f.ica, &f.meta] {
            assert_eq!(fs::read(d1.path().join(name)).unwrap(), fs::read(d2.path().join(name)).unwrap());
        }
    }
    assert!(!d1.path().join("errors.json").exists());
    assert_eq!(d1.path().join("patch_00006.ica.vvol").exists(), true);
}

#[test]
fn batch_planning() {
    let sources = cow_lite_sources().unwrap();
    let cfg = small_batch(1);
    let plan = plan_batch(&sources, &cfg).unwrap();
    assert_eq!(plan.len(), 7);
    assert!(plan.iter().enumerate().all(|(i, p)| p.index == i));
    assert_eq!(plan[0].seed, vamoforge::rng::child_seed(1, 0));
    assert_eq!(plan.iter().filter(|p| p.label == "G-H").count(), 2);

    let missing = GenConfig { counts: BTreeMap::from([("Z-Z".into(), 4), ("A-B".into(), 1)]), ..cfg.clone() };
    match plan_batch(&sources, &missing) {
        Err(Error::Planning(short)) => assert_eq!(short.len(), 1),
        other => panic!("expected planning error, got {other:?}"),
    }

    let empty = GenConfig { counts: BTreeMap::from([("A-B".into(), 0)]), ..cfg };
    let dir = tempfile::tempdir().unwrap();
    let out = run_batch(&sources, &empty, 2, Some(dir.path())).unwrap();
    assert_eq!(out.manifest.total, 0);
    assert!(out.manifest.patches.is_empty());
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn stratified_radii_follow_the_log_uniform_law() {
    let radii = stratified_radii(1000, 1.5, 4.0, 3);
    assert!(radii.iter().all(|r| (1.5..=4.0).contains(r)));
    let below = radii.iter().filter(|r| r.ln() < (1.5f64.ln() + 4.0f64.ln()) / 2.0).count();
    assert_eq!(below, 500);
    assert_eq!(radius_bin(2.0), "<=2mm");
    assert_eq!(radius_bin(2.5), "2-3mm");
    assert_eq!(radius_bin(3.01), ">3mm");
}

#[test]
fn render_writes_slices_and_tints() {
    let sources = cow_lite_sources().unwrap();
    let patch = generate_patch(&sources[0], &GenConfig::default(), 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let plain = render_slices(&patch.intensity, None, None, Axis::Z, dir.path(), "plain").unwrap();
    assert_eq!(plain.len(), 64);
    let img = image::open(&plain[10]).unwrap().to_luma8();
    assert_eq!(img.dimensions(), (64, 64));

    let files = render_slices(
        &patch.intensity,
        Some(&patch.vessel_mask),
        Some(&patch.ica_mask),
        Axis::Z,
        dir.path(),
        "ov",
    )
    .unwrap();
    assert_eq!(files.len(), 128);
    let blue_dominant = |p: &image::Rgb<u8>| p[2] as i32 > p[1] as i32 + 20;
    let green_dominant = |p: &image::Rgb<u8>| p[1] as i32 > p[2] as i32 + 20;
    let (mut blue, mut green) = (0, 0);
    for z in 0..64 {
        let img = image::open(dir.path().join(format!("ov_z{z:03}_overlay.png"))).unwrap().to_rgb8();
        for (x, y, p) in img.enumerate_pixels() {
            let i = patch.ica_mask.index(x as usize, y as usize, z);
            let v = patch.vessel_mask.index(x as usize, y as usize, z);
            if patch.ica_mask.data()[i] != 0.0 {
                assert!(blue_dominant(p));
                blue += 1;
            } else if patch.vessel_mask.data()[v] != 0.0 {
                assert!(green_dominant(p));
                green += 1;
            } else {
                assert!(p[0] == p[1] && p[1] == p[2]);
            }
        }
    }
    assert!(blue > 0 && green > 0);
    assert_ne!(ANEURYSM_TINT, VESSEL_TINT);

    let empty = vamoforge::Volume::zeros([64; 3], patch.intensity.spacing(), vamoforge::DType::Uint8).unwrap();
    let files = render_slices(&patch.intensity, Some(&patch.vessel_mask), Some(&empty), Axis::X, dir.path(), "noica").unwrap();
    for f in files.iter().filter(|f| f.to_string_lossy().ends_with("_overlay.png")) {
        let img = image::open(f).unwrap().to_rgb8();
        assert!(img.pixels().all(|p| !blue_dominant(p)));
    }
    assert!(matches!(Axis::parse("w"), Err(Error::Parameter(_))));
}

#[test]
fn sources_from_files() {
    let p = y_phantom(&YParams::default(), 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    vamoforge::vvol::write_vvol(&p.tof, dir.path().join("tof.vvol")).unwrap();
    vamoforge::vvol::write_vvol(&p.mask, dir.path().join("mask.vvol")).unwrap();
    let spec: SourceSpec = serde_json::from_value(serde_json::json!({
        "kind": "files",
        "entries": [{"id": "y0", "label": "A-B", "tof": dir.path().join("tof.vvol"), "mask": dir.path().join("mask.vvol")}]
    }))
    .unwrap();
    let sources = vamoforge::pipeline::batch::load_sources(&spec).unwrap();
    assert_eq!(sources.len(), 1);
    assert_eq!(sources[0].label, "A-B");
}

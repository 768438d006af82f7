//! Batch planning, parallel generation and the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::phantom::{cow_lite, COW_LITE_LABELS};
use super::{generate_patch_with, GenConfig, Hygiene, SourceSpec, Source, SyntheticPatch};
use crate::error::{Error, Result};
use crate::rng::{child_seed, rng_from_seed, tagged_seed};
use crate::volume::{crop, PatchRegion};
use crate::vvol::{encode, read_vvol};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const ERRORS_SCHEMA_VERSION: u32 = 1;
/// Seed of the built-in ring phantom used as batch source.
pub const COW_LITE_SEED: u64 = 7;
pub const COW_LITE_CROP: [usize; 3] = [64; 3];
/// Upper bin edges (mm) for radius reporting; the last bin is open.
pub const RADIUS_BIN_EDGES: [f64; 2] = [2.0, 3.0];
pub const RADIUS_BIN_NAMES: [&str; 3] = ["<=2mm", "2-3mm", ">3mm"];

pub fn radius_bin(r_mm: f64) -> &'static str {
    if r_mm <= RADIUS_BIN_EDGES[0] {
        RADIUS_BIN_NAMES[0]
    } else if r_mm <= RADIUS_BIN_EDGES[1] {
        RADIUS_BIN_NAMES[1]
    } else {
        RADIUS_BIN_NAMES[2]
    }
}

/// One labeled crop per bifurcation of the ring phantom.
pub fn cow_lite_sources() -> Result<Vec<Source>> {
    let phantom = cow_lite(COW_LITE_SEED)?;
    phantom
        .bifurcations
        .iter()
        .zip(COW_LITE_LABELS)
        .map(|(b, label)| {
            let center = b.pos.map(|v| v.round() as usize);
            let region = PatchRegion::centered(center, COW_LITE_CROP, phantom.mask.dims())?;
            let tof = crop(&phantom.tof, &region)?;
            let mask = crop(&phantom.mask, &region)?;
            Source::new(&format!("cow-lite/{label}"), label, tof, mask, None)
        })
        .collect()
}

pub fn load_sources(spec: &SourceSpec) -> Result<Vec<Source>> {
    match spec {
        SourceSpec::CowLite => cow_lite_sources(),
        SourceSpec::Files { entries } => entries
            .iter()
            .map(|e| {
                let tof = read_vvol(&e.tof)?;
                let mask = read_vvol(&e.mask)?;
                Source::new(&e.id, &e.label, tof, mask, e.node)
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedPatch {
    pub index: usize,
    pub label: String,
    pub source: usize,
    pub seed: u64,
    pub radius_mm: Option<f64>,
}

/// Stratified log-uniform radii: one draw inside each of `n` equal-mass
/// strata, strata shuffled over patches.
pub fn stratified_radii(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    let mut strata: Vec<usize> = (0..n).collect();
    strata.shuffle(&mut rng);
    let (a, b) = (lo.ln(), hi.ln());
    strata
        .into_iter()
        .map(|k| {
            let u = (k as f64 + rng.random::<f64>()) / n as f64;
            (a + u * (b - a)).exp()
        })
        .collect()
}

/// Assigns sources round-robin per label (in label order) and derives every
/// patch seed from the master seed and patch index.
pub fn plan_batch(sources: &[Source], cfg: &GenConfig) -> Result<Vec<PlannedPatch>> {
    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in sources.iter().enumerate() {
        by_label.entry(s.label.as_str()).or_default().push(i);
    }
    for list in by_label.values_mut() {
        list.sort_by(|&a, &b| sources[a].id.cmp(&sources[b].id));
    }
    let shortfalls: Vec<String> = cfg
        .counts
        .iter()
        .filter(|(label, &n)| n > 0 && !by_label.contains_key(label.as_str()))
        .map(|(label, n)| format!("{label}: {n} requested, no source"))
        .collect();
    if !shortfalls.is_empty() {
        return Err(Error::Planning(shortfalls));
    }
    let total = cfg.total_count();
    let radii = if cfg.aneurysm.enabled {
        let r = cfg.aneurysm.radius_mm;
        stratified_radii(total, r.lo(), r.hi(), tagged_seed(cfg.master_seed, "radius-plan"))
            .into_iter()
            .map(Some)
            .collect()
    } else {
        vec![None; total]
    };
    let mut plan = Vec::with_capacity(total);
    for (label, &n) in &cfg.counts {
        for k in 0..n {
            let list = &by_label[label.as_str()];
            let index = plan.len();
            plan.push(PlannedPatch {
                index,
                label: label.clone(),
                source: list[k % list.len()],
                seed: child_seed(cfg.master_seed, index as u64),
                radius_mm: radii[index],
            });
        }
    }
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchFiles {
    pub intensity: String,
    pub vessel: String,
    pub ica: String,
    pub meta: String,
}

impl PatchFiles {
    pub fn for_index(index: usize) -> Self {
        let stem = format!("patch_{index:05}");
        Self {
            intensity: format!("{stem}.vvol"),
            vessel: format!("{stem}.vessel.vvol"),
            ica: format!("{stem}.ica.vvol"),
            meta: format!("{stem}.meta.json"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub label: String,
    pub source_id: String,
    pub seed: u64,
    pub radius_mm: Option<f64>,
    pub radius_bin: Option<String>,
    pub files: PatchFiles,
    /// FNV-1a 64 over the encoded volumes and the metadata JSON.
    pub digest: String,
    pub hygiene: Hygiene,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub master_seed: u64,
    pub total: usize,
    pub counts: BTreeMap<String, usize>,
    pub radius_bins: BTreeMap<String, usize>,
    pub patches: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchFailure {
    pub index: usize,
    pub label: String,
    pub stage: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub manifest: Manifest,
    pub failures: Vec<PatchFailure>,
}

struct Encoded {
    intensity: Vec<u8>,
    vessel: Vec<u8>,
    ica: Vec<u8>,
    meta: Vec<u8>,
}

fn encode_patch(patch: &SyntheticPatch) -> Result<Encoded> {
    let mut meta = serde_json::to_vec_pretty(&patch.meta)?;
    meta.push(b'\n');
    Ok(Encoded {
        intensity: encode(&patch.intensity),
        vessel: encode(&patch.vessel_mask),
        ica: encode(&patch.ica_mask),
        meta,
    })
}

fn fnv1a(chunks: &[&[u8]]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for c in chunks {
        for &b in *c {
            h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
        }
    }
    h
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Error::io(path, e))
}

fn run_one(sources: &[Source], cfg: &GenConfig, p: &PlannedPatch, out: Option<&Path>) -> Result<ManifestEntry> {
    let source = &sources[p.source];
    let patch = generate_patch_with(source, cfg, p.seed, p.radius_mm)?;
    let enc = encode_patch(&patch)?;
    let files = PatchFiles::for_index(p.index);
    if let Some(dir) = out {
        write_file(dir, &files.intensity, &enc.intensity)?;
        write_file(dir, &files.vessel, &enc.vessel)?;
        write_file(dir, &files.ica, &enc.ica)?;
        write_file(dir, &files.meta, &enc.meta)?;
    }
    let radius_mm = patch.meta.aneurysm.as_ref().map(|a| a.radius_mm);
    Ok(ManifestEntry {
        index: p.index,
        label: p.label.clone(),
        source_id: source.id.clone(),
        seed: p.seed,
        radius_mm,
        radius_bin: radius_mm.map(|r| radius_bin(r).to_string()),
        files,
        digest: format!("{:016x}", fnv1a(&[&enc.intensity, &enc.vessel, &enc.ica, &enc.meta])),
        hygiene: patch.meta.hygiene,
    })
}

/// Generates every planned patch on a pool of `workers` threads. With `out`
/// the patch files, `manifest.json` and (on failures) `errors.json` are
/// written there. Output does not depend on the worker count.
pub fn run_batch(sources: &[Source], cfg: &GenConfig, workers: usize, out: Option<&Path>) -> Result<BatchOutcome> {
    cfg.validate()?;
    let plan = plan_batch(sources, cfg)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    // Prepare per-source backgrounds up front so workers only read them.
    for s in sources {
        s.background(cfg.noise_method)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Configuration(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<ManifestEntry>> =
        pool.install(|| plan.par_iter().map(|p| run_one(sources, cfg, p, out)).collect());

    let mut patches = Vec::new();
    let mut failures = Vec::new();
    for (p, r) in plan.iter().zip(results) {
        match r {
            Ok(e) => patches.push(e),
            Err(e) => {
                log::error!("patch {} ({}) failed: {e}", p.index, p.label);
                failures.push(PatchFailure {
                    index: p.index,
                    label: p.label.clone(),
                    stage: e.stage().map(str::to_string),
                    message: e.to_string(),
                })
            }
        }
    }
    let mut counts: BTreeMap<String, usize> = cfg.counts.keys().map(|k| (k.clone(), 0)).collect();
    let mut radius_bins: BTreeMap<String, usize> = BTreeMap::new();
    if cfg.aneurysm.enabled {
        radius_bins = RADIUS_BIN_NAMES.iter().map(|n| (n.to_string(), 0)).collect();
    }
    for e in &patches {
        *counts.entry(e.label.clone()).or_default() += 1;
        if let Some(b) = &e.radius_bin {
            *radius_bins.entry(b.clone()).or_default() += 1;
        }
    }
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        master_seed: cfg.master_seed,
        total: patches.len(),
        counts,
        radius_bins,
        patches,
    };
    if let Some(dir) = out {
        write_json(&dir.join("manifest.json"), &manifest)?;
        if !failures.is_empty() {
            write_json(
                &dir.join("errors.json"),
                &serde_json::json!({ "schema_version": ERRORS_SCHEMA_VERSION, "failures": failures }),
            )?;
        }
    }
    Ok(BatchOutcome { manifest, failures })
}

pub fn manifest_json(m: &Manifest) -> Result<String> {
    Ok(serde_json::to_string_pretty(m)? + "\n")
}

pub(crate) fn write_json<T: Serialize>(path: &PathBuf, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

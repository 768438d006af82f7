//! End-to-end patch generation: geometry, background and aneurysm stages.

pub mod batch;
pub mod phantom;
pub mod render;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aneurysm::{
    embed_aneurysm, radius_mm_to_voxels, AneurysmSpec, BifurcationGeometry, Placement,
};
use crate::background::{
    compose_background, fill_vessel_labels, separate_matters, spec_for_class, MatterMap, MatterSummary,
    NoiseSpec, SeparationMethod, LABEL_BRIGHT, LABEL_DARK,
};
use crate::error::{Error, Result, StageExt};
use crate::graph::{extract_graph, select_bifurcation, BifurcationSite, VascularGraph};
use crate::raster::{set_gray_level, stream, sweep_tube, Grid, KernelSpec, DEFAULT_DEFORM_SIGMA, DEFAULT_EDGE_SOFTNESS};
use crate::rng::{child_seed, rng_from_seed, tagged_seed};
use crate::spline::{
    evaluate_spline, fit_branch_spline, perturb_coefficients, recenter_branches, BranchSpline, NodeEnd, Point3,
    RecenterStatus, SPLINE_ORDER,
};
use crate::topology::{is_single_component, Connectivity};
use crate::volume::{crop, max_composite, DType, Dims, PatchRegion, Volume};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const META_SCHEMA_VERSION: u32 = 1;

/// Distance-transform radii overshoot the digital radius of a tube by up to
/// one lattice step; balls drawn this much smaller reproduce the source disc.
pub const EDT_BALL_MARGIN: f64 = 0.05;
/// Centerline sampling step for rasterization, voxels.
pub const SAMPLE_STEP: f64 = 0.5;
/// Spline samples (one voxel apart) used for the daughter tangent secant.
pub const TANGENT_SAMPLES: usize = 5;
/// γ re-samples after a failed aneurysm placement.
pub const GAMMA_RESAMPLES: usize = 3;

/// Closed interval serialized as `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range(pub f64, pub f64);

impl Range {
    pub fn lo(&self) -> f64 {
        self.0
    }

    pub fn hi(&self) -> f64 {
        self.1
    }

    fn check(&self, what: &str, min: f64) -> Result<()> {
        if !(self.0.is_finite() && self.1.is_finite() && self.0 <= self.1 && self.0 >= min) {
            return Err(Error::Configuration(format!(
                "{what} must be a range [lo, hi] with {min} <= lo <= hi, got [{}, {}]",
                self.0, self.1
            )));
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.0 + (self.1 - self.0) * u
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum AmplitudeRule {
    /// Uniform within one standard deviation of the source vessel intensity.
    SourceStats,
    Fixed { value: f64 },
    Uniform { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AneurysmConfig {
    pub enabled: bool,
    pub radius_mm: Range,
    pub gamma: Range,
    /// Sac deformation magnitude as a fraction of its radius.
    pub deform_fraction: f64,
    pub thrombosis_probability: f64,
}

impl Default for AneurysmConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            radius_mm: Range(1.6397, 3.2331),
            gamma: Range(0.2, 1.0),
            deform_fraction: 0.2,
            thrombosis_probability: 0.2,
        }
    }
}

/// Where batch sources come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SourceSpec {
    /// Crops of the built-in seven-bifurcation ring phantom.
    CowLite,
    Files { entries: Vec<SourceFile> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceFile {
    pub id: String,
    pub label: String,
    pub tof: PathBuf,
    pub mask: PathBuf,
    /// Bifurcation node id; defaults to the degree-3 node nearest the center.
    #[serde(default)]
    pub node: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub schema_version: u32,
    pub patch_size: Dims,
    /// Standard deviation of the coefficient perturbation, voxels.
    pub spline_weight: Range,
    /// Maximum kernel displacement, voxels.
    pub kernel_alpha: Range,
    pub kernel_sigma: f64,
    pub reseed_along_curve: bool,
    pub amplitude: AmplitudeRule,
    pub edge_softness: f64,
    pub noise_method: SeparationMethod,
    /// Deformation of the matter label map, voxels.
    pub background_alpha: f64,
    pub aneurysm: AneurysmConfig,
    pub counts: BTreeMap<String, usize>,
    pub master_seed: u64,
    pub sources: SourceSpec,
}

/// Patch counts per bifurcation label of the reference batch (998 total).
pub const REFERENCE_COUNTS: [(&str, usize); 7] = [
    ("A-B", 165),
    ("C-D", 158),
    ("E-F", 156),
    ("G-H", 175),
    ("I-J", 102),
    ("K-L", 111),
    ("M-N-O", 131),
];

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            patch_size: [64; 3],
            spline_weight: Range(0.0, 1.0),
            kernel_alpha: Range(0.0, 0.6),
            kernel_sigma: DEFAULT_DEFORM_SIGMA,
            reseed_along_curve: true,
            amplitude: AmplitudeRule::SourceStats,
            edge_softness: DEFAULT_EDGE_SOFTNESS,
            noise_method: SeparationMethod::Gmm,
            background_alpha: 2.0,
            aneurysm: AneurysmConfig::default(),
            counts: REFERENCE_COUNTS.iter().map(|(l, n)| (l.to_string(), *n)).collect(),
            master_seed: 42,
            sources: SourceSpec::CowLite,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Configuration(msg));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return bad(format!(
                "unsupported config schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.patch_size.iter().any(|&s| s < 16) {
            return bad(format!("patch_size components must be >= 16, got {:?}", self.patch_size));
        }
        self.spline_weight.check("spline_weight", 0.0)?;
        self.kernel_alpha.check("kernel_alpha", 0.0)?;
        self.aneurysm.radius_mm.check("aneurysm.radius_mm", f64::MIN_POSITIVE)?;
        self.aneurysm.gamma.check("aneurysm.gamma", 0.0)?;
        if self.aneurysm.gamma.hi() > crate::aneurysm::MAX_GAMMA {
            return bad(format!("aneurysm.gamma must not exceed {}", crate::aneurysm::MAX_GAMMA));
        }
        if !(self.kernel_sigma > 0.0 && self.kernel_sigma.is_finite()) {
            return bad(format!("kernel_sigma must be > 0, got {}", self.kernel_sigma));
        }
        if !(self.edge_softness >= 0.0 && self.edge_softness.is_finite()) {
            return bad(format!("edge_softness must be >= 0, got {}", self.edge_softness));
        }
        if !(self.background_alpha >= 0.0 && self.background_alpha.is_finite()) {
            return bad(format!("background_alpha must be >= 0, got {}", self.background_alpha));
        }
        if !(self.aneurysm.deform_fraction >= 0.0 && self.aneurysm.deform_fraction.is_finite()) {
            return bad("aneurysm.deform_fraction must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.aneurysm.thrombosis_probability) {
            return bad("aneurysm.thrombosis_probability must lie in [0, 1]".into());
        }
        match self.amplitude {
            AmplitudeRule::SourceStats => {}
            AmplitudeRule::Fixed { value } if value > 0.0 && value.is_finite() => {}
            AmplitudeRule::Uniform { lo, hi } if lo > 0.0 && lo <= hi && hi.is_finite() => {}
            other => return bad(format!("invalid amplitude rule {other:?}")),
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: GenConfig =
            serde_json::from_str(text).map_err(|e| Error::Configuration(format!("invalid config JSON: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn total_count(&self) -> usize {
        self.counts.values().sum()
    }
}

/// Background model of a source: matter labels with vessels refilled and a
/// calibrated noise spec per class.
#[derive(Debug, Clone)]
pub struct PreparedBackground {
    pub matter: MatterMap,
    pub specs: BTreeMap<u8, NoiseSpec>,
    pub summary: MatterSummary,
}

/// A segmented crop ready for generation.
#[derive(Debug, Clone)]
pub struct Source {
    pub id: String,
    pub label: String,
    pub tof: Volume,
    pub mask: Volume,
    pub graph: VascularGraph,
    pub site: BifurcationSite,
    /// Mean and standard deviation of the TOF signal inside the mask.
    pub vessel_stats: (f64, f64),
    prepared: [OnceLock<PreparedBackground>; 2],
}

impl Source {
    /// Extracts the graph of `mask` and selects the bifurcation `node`, or the
    /// degree-3 node nearest the crop center.
    pub fn new(id: &str, label: &str, tof: Volume, mask: Volume, node: Option<usize>) -> Result<Self> {
        tof.ensure_same_grid(&mask, "source")?;
        let graph = extract_graph(&mask)?;
        let node_id = match node {
            Some(n) => n,
            None => {
                let c = tof.dims().map(|d| (d as f64 - 1.0) / 2.0);
                graph
                    .nodes_with_degree(3)
                    .min_by(|a, b| {
                        let d = |p: [usize; 3]| (0..3).map(|i| (p[i] as f64 - c[i]).powi(2)).sum::<f64>();
                        d(a.pos).partial_cmp(&d(b.pos)).unwrap().then(a.id.cmp(&b.id))
                    })
                    .map(|n| n.id)
                    .ok_or_else(|| Error::Consistency(format!("source {id} has no bifurcation")))?
            }
        };
        let mut site = select_bifurcation(&graph, node_id)?;
        site.label = Some(label.to_string());
        Self::from_parts(id, label, tof, mask, graph, site)
    }

    pub fn from_parts(
        id: &str,
        label: &str,
        tof: Volume,
        mask: Volume,
        graph: VascularGraph,
        site: BifurcationSite,
    ) -> Result<Self> {
        tof.ensure_same_grid(&mask, "source")?;
        mask.ensure_binary("source mask")?;
        let inside: Vec<f64> = tof
            .data()
            .iter()
            .zip(mask.data())
            .filter(|(_, &m)| m != 0.0)
            .map(|(&v, _)| v as f64)
            .collect();
        if inside.is_empty() {
            return Err(Error::Consistency(format!("source {id} has an empty vessel mask")));
        }
        let mean = inside.iter().sum::<f64>() / inside.len() as f64;
        let std = (inside.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / inside.len() as f64).sqrt();
        Ok(Self {
            id: id.to_string(),
            label: label.to_string(),
            tof,
            mask,
            graph,
            site,
            vessel_stats: (mean, std),
            prepared: Default::default(),
        })
    }

    pub fn node_pos(&self) -> [usize; 3] {
        self.graph.node(self.site.node_id).expect("site node exists").pos
    }

    /// Matter separation and noise calibration, computed once per method.
    pub fn background(&self, method: SeparationMethod) -> Result<&PreparedBackground> {
        let slot = &self.prepared[method as usize];
        if let Some(p) = slot.get() {
            return Ok(p);
        }
        let matter = separate_matters(&self.tof, &self.mask, method, tagged_seed(0, &self.id))?;
        let mut specs = BTreeMap::new();
        for label in [LABEL_DARK, LABEL_BRIGHT] {
            let stats = matter.class_stats(label).expect("two classes");
            specs.insert(label, spec_for_class(stats)?);
        }
        let summary = matter.summary();
        let filled = MatterMap {
            labels: fill_vessel_labels(&matter.labels),
            ..matter
        };
        let _ = slot.set(PreparedBackground {
            matter: filled,
            specs,
            summary,
        });
        Ok(slot.get().expect("just set"))
    }
}

/// Geometry-stage parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub spline_weight: f64,
    pub kernel: KernelSpec,
}

#[derive(Debug, Clone)]
pub struct ModeledBranch {
    pub branch_id: usize,
    pub spline: Option<BranchSpline>,
    pub rms_residual: Option<f64>,
    /// Rasterized centerline, ordered from `ends[0]` to `ends[1]`.
    pub samples: Vec<Point3>,
    pub radii: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct VesselModel {
    pub mask: Volume,
    pub branches: Vec<ModeledBranch>,
    pub recenter: RecenterStatus,
}

fn lerp(a: Point3, b: Point3, t: f64) -> Point3 {
    [0, 1, 2].map(|i| a[i] + t * (b[i] - a[i]))
}

fn dist(a: Point3, b: Point3) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt()
}

/// Resamples a polyline at `SAMPLE_STEP` spacing.
fn densify(points: &[Point3], radii: &[f64]) -> (Vec<Point3>, Vec<f64>) {
    let mut pts = vec![points[0]];
    let mut rs = vec![radii[0]];
    for i in 1..points.len() {
        let steps = (dist(points[i - 1], points[i]) / SAMPLE_STEP).ceil().max(1.0) as usize;
        for k in 1..=steps {
            let t = k as f64 / steps as f64;
            pts.push(lerp(points[i - 1], points[i], t));
            rs.push(radii[i - 1] + t * (radii[i] - radii[i - 1]));
        }
    }
    (pts, rs)
}

fn sample_spline(s: &BranchSpline) -> Result<(Vec<Point3>, Vec<f64>)> {
    let n = ((s.arc_length(64) / SAMPLE_STEP).ceil() as usize + 1).max(2);
    let pts = evaluate_spline(s, n)?;
    let [t0, t1] = s.domain;
    let radii = (0..n)
        .map(|i| s.radius_at(t0 + (t1 - t0) * i as f64 / (n - 1) as f64))
        .collect();
    Ok((pts, radii))
}

/// Continues a dangling end straight on by its radius, so tubes reach as far
/// as the segmentation they came from.
fn extend_end(pts: &mut Vec<Point3>, radii: &mut Vec<f64>, at_start: bool) {
    if pts.len() < 2 {
        return;
    }
    if at_start {
        pts.reverse();
        radii.reverse();
    }
    let n = pts.len();
    let back = pts[n.saturating_sub(6)];
    let end = pts[n - 1];
    let len = dist(back, end);
    if len > 0.0 {
        let dir = [0, 1, 2].map(|i| (end[i] - back[i]) / len);
        let r = radii[n - 1];
        let steps = (r / SAMPLE_STEP).ceil() as usize;
        for k in 1..=steps {
            let s = r * k as f64 / steps as f64;
            pts.push([0, 1, 2].map(|i| end[i] + s * dir[i]));
            radii.push(r);
        }
    }
    if at_start {
        pts.reverse();
        radii.reverse();
    }
}

/// Spline fit → perturbation → recentering → tube rasterization for every
/// branch of `graph`, on `grid` whose voxel (0,0,0) sits at `origin` in graph
/// coordinates.
pub fn model_vessels(
    graph: &VascularGraph,
    node: Option<usize>,
    grid: Grid,
    origin: Point3,
    params: &ModelParams,
    seed: u64,
) -> Result<VesselModel> {
    let to_local = |p: [usize; 3]| [0, 1, 2].map(|i| p[i] as f64 - origin[i]);
    let perturb_seed = tagged_seed(seed, "perturb");
    let mut splines = Vec::new();
    let mut branches = Vec::new();
    for b in &graph.branches {
        let pts: Vec<Point3> = graph.polyline(b).into_iter().map(to_local).collect();
        let radii = graph.polyline_radii(b);
        if pts.len() < SPLINE_ORDER {
            let (samples, radii) = densify(&pts, &radii);
            branches.push(ModeledBranch {
                branch_id: b.id,
                spline: None,
                rms_residual: None,
                samples,
                radii,
            });
            continue;
        }
        let fit = fit_branch_spline(&pts, &radii).stage("spline-fit")?;
        let node_end = match node {
            Some(n) if b.ends[0] == Some(n) => NodeEnd::Start,
            Some(n) if b.ends[1] == Some(n) => NodeEnd::End,
            _ => NodeEnd::None,
        };
        let spline = fit.spline.with_node_end(node_end);
        let mut rng = rng_from_seed(child_seed(perturb_seed, b.id as u64));
        let spline = perturb_coefficients(&spline, params.spline_weight, &mut rng).stage("perturb")?;
        splines.push((branches.len(), spline));
        branches.push(ModeledBranch {
            branch_id: b.id,
            spline: None,
            rms_residual: Some(fit.rms_residual),
            samples: Vec::new(),
            radii: Vec::new(),
        });
    }
    let recenter = match node.and_then(|n| graph.node(n)) {
        Some(n) => {
            let only: Vec<BranchSpline> = splines.iter().map(|(_, s)| s.clone()).collect();
            let (moved, status) = recenter_branches(&only, to_local(n.pos));
            for ((_, s), m) in splines.iter_mut().zip(moved) {
                *s = m;
            }
            status
        }
        None => RecenterStatus::NoAnchor,
    };
    for (slot, s) in splines {
        let (samples, radii) = sample_spline(&s).stage("spline-eval")?;
        let b = &mut branches[slot];
        b.samples = samples;
        b.radii = radii;
        b.spline = Some(s);
    }
    let mut kernel_rng = stream(tagged_seed(seed, "kernel"));
    let mut mask = vec![0.0f32; grid.dims.iter().product()];
    for (mb, b) in branches.iter_mut().zip(&graph.branches) {
        for (k, end) in b.ends.iter().enumerate() {
            if let Some(n) = end.and_then(|id| graph.node(id)) {
                if n.degree == 1 {
                    extend_end(&mut mb.samples, &mut mb.radii, k == 0);
                }
            }
        }
        let ball_radii: Vec<f64> = mb.radii.iter().map(|r| (r - EDT_BALL_MARGIN).max(0.5)).collect();
        let tube = sweep_tube(&mb.samples, &ball_radii, &params.kernel, grid, &mut kernel_rng).stage("raster")?;
        for (m, &t) in mask.iter_mut().zip(tube.data()) {
            if t != 0.0 {
                *m = 1.0;
            }
        }
    }
    Ok(VesselModel {
        mask: Volume::new(grid.dims, grid.spacing, DType::Uint8, mask)?,
        branches,
        recenter,
    })
}

/// Unit secant from the node over the first `TANGENT_SAMPLES` one-voxel
/// steps of a site branch, pointing away from the node.
fn node_tangent(b: &ModeledBranch, at_start: bool) -> Result<Point3> {
    let pts: Vec<Point3> = match &b.spline {
        Some(s) => {
            let [t0, t1] = s.domain;
            let len = s.arc_length(64).max(1e-9);
            let step = (t1 - t0) / len;
            (0..TANGENT_SAMPLES)
                .map(|k| {
                    let t = if at_start { t0 + k as f64 * step } else { t1 - k as f64 * step };
                    s.eval(t)
                })
                .collect()
        }
        None => {
            let mut p = b.samples.clone();
            if !at_start {
                p.reverse();
            }
            p.into_iter().step_by((1.0 / SAMPLE_STEP) as usize).take(TANGENT_SAMPLES).collect()
        }
    };
    let d = [0, 1, 2].map(|i| pts[pts.len() - 1][i] - pts[0][i]);
    let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > 0.0) {
        return Err(Error::Consistency(format!("branch {} has no usable tangent", b.branch_id)));
    }
    Ok(d.map(|v| v / n))
}

/// Node geometry for aneurysm placement from the modeled site branches.
pub fn site_geometry(graph: &VascularGraph, site: &BifurcationSite, model: &VesselModel, origin: Point3) -> Result<BifurcationGeometry> {
    let node = graph
        .node(site.node_id)
        .ok_or_else(|| Error::Consistency(format!("site node {} missing", site.node_id)))?;
    let modeled = |id: usize| model.branches.iter().find(|b| b.branch_id == id).expect("modeled branch");
    let tangent = |id: usize| {
        let b = graph.branch(id).expect("site branch");
        node_tangent(modeled(id), b.ends[0] == Some(site.node_id))
    };
    let near_radius = |id: usize| {
        let b = graph.branch(id).expect("site branch");
        let r = &b.radii;
        if r.is_empty() {
            return node.radius.unwrap_or(1.0);
        }
        let k = r.len().min(5);
        let s = if b.ends[0] == Some(site.node_id) { &r[..k] } else { &r[r.len() - k..] };
        s.iter().sum::<f64>() / k as f64
    };
    let ids = [site.mother_branch_id, site.daughter_branch_ids[0], site.daughter_branch_ids[1]];
    let mean_radius = ids.iter().map(|&id| near_radius(id)).sum::<f64>() / 3.0;
    let pos = [0, 1, 2].map(|i| node.pos[i] as f64 - origin[i]);
    BifurcationGeometry::new(pos, tangent(ids[1])?, tangent(ids[2])?, mean_radius)
}

/// Label invariants of an emitted patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hygiene {
    pub disjoint: bool,
    /// `None` when the patch has no aneurysm.
    pub union_connected: Option<bool>,
    pub finite: bool,
}

impl Hygiene {
    pub fn ok(&self) -> bool {
        self.disjoint && self.union_connected.unwrap_or(true) && self.finite
    }
}

pub fn check_hygiene(intensity: &Volume, vessel: &Volume, ica: &Volume, has_aneurysm: bool) -> Hygiene {
    let disjoint = vessel.data().iter().zip(ica.data()).all(|(&v, &a)| v == 0.0 || a == 0.0);
    let union_connected = has_aneurysm.then(|| {
        let union = vessel.map(DType::Uint8, |v| v).expect("valid mask");
        let data: Vec<f32> = union
            .data()
            .iter()
            .zip(ica.data())
            .map(|(&v, &a)| if v != 0.0 || a != 0.0 { 1.0 } else { 0.0 })
            .collect();
        let union = Volume::new(union.dims(), union.spacing(), DType::Uint8, data).expect("valid mask");
        is_single_component(&union, Connectivity::TwentySix)
    });
    Hygiene {
        disjoint,
        union_connected,
        finite: intensity.data().iter().all(|v| v.is_finite()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundMeta {
    pub separation: MatterSummary,
    /// Noise spec per matter class label.
    pub specs: BTreeMap<String, NoiseSpec>,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AneurysmMeta {
    pub spec: AneurysmSpec,
    pub radius_mm: f64,
    pub placement: Placement,
    /// γ values tried, in order; the last one succeeded.
    pub gamma_attempts: Vec<f64>,
    pub ica_voxels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchMeta {
    pub schema_version: u32,
    pub seed: u64,
    pub source_id: String,
    pub label: String,
    pub dims: Dims,
    pub spacing_mm: [f64; 3],
    /// Patch origin inside the source crop.
    pub origin: [usize; 3],
    /// Bifurcation node in patch coordinates.
    pub node: [f64; 3],
    pub spline_weight: f64,
    pub spline_rms_residuals: Vec<Option<f64>>,
    pub recenter: RecenterStatus,
    pub kernel: KernelSpec,
    pub amplitude: f64,
    pub background: BackgroundMeta,
    pub aneurysm: Option<AneurysmMeta>,
    pub vessel_voxels: usize,
    pub hygiene: Hygiene,
}

#[derive(Debug, Clone)]
pub struct SyntheticPatch {
    pub intensity: Volume,
    pub vessel_mask: Volume,
    pub ica_mask: Volume,
    pub meta: PatchMeta,
}

fn sample_log_uniform<R: Rng + ?Sized>(range: Range, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    (range.lo().ln() + u * (range.hi().ln() - range.lo().ln())).exp()
}

pub fn generate_patch(source: &Source, cfg: &GenConfig, seed: u64) -> Result<SyntheticPatch> {
    generate_patch_with(source, cfg, seed, None)
}

/// Like [`generate_patch`], with the aneurysm radius (mm) fixed by the caller
/// instead of drawn log-uniformly from the configured range.
pub fn generate_patch_with(source: &Source, cfg: &GenConfig, seed: u64, radius_mm: Option<f64>) -> Result<SyntheticPatch> {
    cfg.validate()?;
    let mut rng = rng_from_seed(tagged_seed(seed, "parameters"));
    let spline_weight = cfg.spline_weight.sample(&mut rng);
    let kernel = KernelSpec {
        radius: source.graph.node(source.site.node_id).and_then(|n| n.radius).unwrap_or(1.0),
        alpha: cfg.kernel_alpha.sample(&mut rng),
        sigma_e: cfg.kernel_sigma,
        reseed_along_curve: cfg.reseed_along_curve,
    };
    let amplitude = match cfg.amplitude {
        AmplitudeRule::SourceStats => {
            let (m, s) = source.vessel_stats;
            (m + s * (2.0 * rng.random::<f64>() - 1.0)).max(1.0)
        }
        AmplitudeRule::Fixed { value } => value,
        AmplitudeRule::Uniform { lo, hi } => Range(lo, hi).sample(&mut rng),
    };

    let region = PatchRegion::centered(source.node_pos(), cfg.patch_size, source.tof.dims()).stage("crop")?;
    let origin = region.origin.map(|v| v as f64);
    let grid = Grid {
        dims: region.size,
        spacing: source.tof.spacing(),
    };
    let params = ModelParams { spline_weight, kernel };
    let model = model_vessels(&source.graph, Some(source.site.node_id), grid, origin, &params, seed)?;
    let vessel_int = set_gray_level(&model.mask, amplitude, cfg.edge_softness).stage("gray-level")?;

    let prepared = source.background(cfg.noise_method).stage("matter-separation")?;
    let matter = MatterMap {
        labels: crop(&prepared.matter.labels, &region).stage("background")?,
        ..prepared.matter.clone()
    };
    let background =
        compose_background(&matter, &prepared.specs, cfg.background_alpha, tagged_seed(seed, "background"))
            .stage("background")?;
    let composite = max_composite(&background, &vessel_int).stage("compose")?;

    let (intensity, ica_mask, aneurysm) = if cfg.aneurysm.enabled {
        let (intensity, ica, meta) =
            add_aneurysm(source, cfg, &model, &composite, origin, amplitude, seed, radius_mm).stage("aneurysm")?;
        (intensity, ica, Some(meta))
    } else {
        (composite, Volume::zeros(grid.dims, grid.spacing, DType::Uint8)?, None)
    };
    let hygiene = check_hygiene(&intensity, &model.mask, &ica_mask, aneurysm.is_some());
    if !hygiene.ok() {
        return Err(Error::Consistency(format!("label hygiene violated: {hygiene:?}"))).stage("labels");
    }
    let node = source.node_pos().map(|v| v as f64);
    let meta = PatchMeta {
        schema_version: META_SCHEMA_VERSION,
        seed,
        source_id: source.id.clone(),
        label: source.label.clone(),
        dims: grid.dims,
        spacing_mm: grid.spacing,
        origin: region.origin,
        node: [0, 1, 2].map(|i| node[i] - origin[i]),
        spline_weight,
        spline_rms_residuals: model.branches.iter().map(|b| b.rms_residual).collect(),
        recenter: model.recenter,
        kernel,
        amplitude,
        background: BackgroundMeta {
            separation: prepared.summary.clone(),
            specs: prepared.specs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            alpha: cfg.background_alpha,
        },
        aneurysm,
        vessel_voxels: model.mask.count_nonzero(),
        hygiene,
    };
    Ok(SyntheticPatch {
        intensity,
        vessel_mask: model.mask,
        ica_mask,
        meta,
    })
}

#[allow(clippy::too_many_arguments)]
fn add_aneurysm(
    source: &Source,
    cfg: &GenConfig,
    model: &VesselModel,
    composite: &Volume,
    origin: Point3,
    amplitude: f64,
    seed: u64,
    radius_mm: Option<f64>,
) -> Result<(Volume, Volume, AneurysmMeta)> {
    let acfg = &cfg.aneurysm;
    let mut rng = rng_from_seed(tagged_seed(seed, "aneurysm"));
    let radius_mm = radius_mm.unwrap_or_else(|| sample_log_uniform(acfg.radius_mm, &mut rng));
    let r = radius_mm_to_voxels(radius_mm, composite.spacing());
    let thrombosis = rng.random::<f64>() < acfg.thrombosis_probability;
    let geometry = site_geometry(&source.graph, &source.site, model, origin)?;
    let mut gamma = acfg.gamma.sample(&mut rng);
    let mut attempts = Vec::new();
    let mut last_err = None;
    for attempt in 0..=GAMMA_RESAMPLES {
        if attempt > 0 {
            gamma = if attempt == GAMMA_RESAMPLES {
                acfg.gamma.lo()
            } else {
                Range(acfg.gamma.lo(), gamma).sample(&mut rng)
            };
        }
        attempts.push(gamma);
        let spec = AneurysmSpec {
            r,
            gamma,
            alpha: acfg.deform_fraction * r,
            amplitude,
            thrombosis,
            seed: child_seed(tagged_seed(seed, "sac"), attempt as u64),
        };
        let embedding = match embed_aneurysm(composite, &model.mask, &geometry, &spec) {
            Ok(e) => e,
            Err(e @ (Error::Placement(_) | Error::Deformation(_))) => {
                last_err = Some(e);
                continue;
            }
            Err(e) => return Err(e),
        };
        let ica_voxels = embedding.ica_mask.count_nonzero();
        let hygiene = check_hygiene(&embedding.intensity, &model.mask, &embedding.ica_mask, true);
        if ica_voxels == 0 || hygiene.union_connected != Some(true) {
            last_err = Some(Error::Placement(format!(
                "sac at gamma {gamma:.3} is {} the vessel tree",
                if ica_voxels == 0 { "hidden inside" } else { "detached from" }
            )));
            continue;
        }
        let meta = AneurysmMeta {
            spec,
            radius_mm,
            placement: embedding.placement,
            gamma_attempts: attempts,
            ica_voxels,
        };
        return Ok((embedding.intensity, embedding.ica_mask, meta));
    }
    Err(last_err.expect("at least one attempt"))
}

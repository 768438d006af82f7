//! Brain-matter separation and calibrated noise backgrounds.
//!
//! A Gaussian blur of white noise with standard deviation σ₀ leaves a field
//! whose standard deviation σ_f depends on the filter width σ_G. In two
//! dimensions the large-σ_G approximation is σ_f ≈ σ₀ / (2σ_G√π); the
//! separable 3D filter used here decays faster, so calibration starts from
//! the 2D value and corrects it with one measurement on a probe volume.

use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{warp_nearest, DeformField};
use crate::rng::{child_seed, rng_from_seed, tagged_seed};
use crate::topology::N6;
use crate::volume::{gaussian_filter_3d, gaussian_kernel_1d, DType, Dims, Spacing, Volume};

pub const LABEL_DARK: u8 = 0;
pub const LABEL_BRIGHT: u8 = 1;
pub const LABEL_VESSEL: u8 = 2;

/// Smallest filter width used; acts as a pass-through.
pub const MIN_SIGMA_G: f64 = 0.3;
/// Pre-filter noise level as a multiple of the target σ_f.
pub const SIGMA0_FACTOR: f64 = 4.0;
pub const CALIBRATION_PROBE: usize = 64;
pub const MIN_RELIABLE_VOXELS: usize = 100;
pub const HISTOGRAM_BINS: usize = 256;
/// Smoothness of the label-map deformation in `compose_background`.
pub const MATTER_DEFORM_SIGMA: f64 = 8.0;
const CLAMP_SIGMAS: f64 = 8.0;

const MAX_CORRECTIONS: usize = 4;
const EM_MAX_ITER: usize = 200;
const EM_TOL: f64 = 1e-6;
const DEGENERATE_STD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    /// Sorted by mean, ascending.
    pub components: Vec<GaussianComponent>,
    /// Mean per-sample log-likelihood at convergence.
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Ashman's D below 2 between some pair of neighboring components.
    pub low_separation: bool,
}

impl GmmFit {
    /// Index of the component with the largest posterior for `x`.
    pub fn classify(&self, x: f64) -> usize {
        let mut best = (f64::NEG_INFINITY, 0);
        for (k, c) in self.components.iter().enumerate() {
            let z = (x - c.mean) / c.std;
            let lp = c.weight.ln() - c.std.ln() - 0.5 * z * z;
            if lp > best.0 {
                best = (lp, k);
            }
        }
        best.1
    }
}

fn kmeans_pp_init<R: Rng + ?Sized>(samples: &[f64], k: usize, rng: &mut R) -> Vec<f64> {
    let mut centers = vec![samples[rng.random_range(0..samples.len())]];
    let mut d2: Vec<f64> = samples.iter().map(|&x| (x - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = samples.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            samples[pick]
        } else {
            samples[rng.random_range(0..samples.len())]
        };
        centers.push(next);
        for (d, &x) in d2.iter_mut().zip(samples) {
            *d = d.min((x - next).powi(2));
        }
    }
    centers
}

fn initial_components(samples: &[f64], centers: &[f64]) -> Vec<GaussianComponent> {
    let k = centers.len();
    let mut sum = vec![0.0; k];
    let mut sq = vec![0.0; k];
    let mut count = vec![0usize; k];
    for &x in samples {
        let j = (0..k)
            .min_by(|&a, &b| (x - centers[a]).abs().partial_cmp(&(x - centers[b]).abs()).unwrap())
            .unwrap();
        sum[j] += x - centers[j];
        sq[j] += (x - centers[j]).powi(2);
        count[j] += 1;
    }
    (0..k)
        .map(|j| {
            let n = count[j].max(1) as f64;
            let m = sum[j] / n;
            let var = (sq[j] / n - m * m).max(0.0);
            GaussianComponent {
                weight: (count[j].max(1)) as f64 / samples.len() as f64,
                mean: centers[j] + m,
                std: var.sqrt(),
            }
        })
        .collect()
}

fn run_em(samples: &[f64], mut comps: Vec<GaussianComponent>) -> Result<(Vec<GaussianComponent>, f64, usize)> {
    let k = comps.len();
    let n = samples.len() as f64;
    let mut resp = vec![0.0; samples.len() * k];
    let mut prev_ll = f64::NEG_INFINITY;
    let mut ll = prev_ll;
    let mut iterations = 0;
    let half_ln_2pi = 0.5 * (2.0 * PI).ln();
    for iter in 0..EM_MAX_ITER {
        if comps.iter().any(|c| !(c.std >= DEGENERATE_STD) || !(c.weight > 0.0)) {
            return Err(Error::DegenerateFit(format!("component collapsed at iteration {iter}")));
        }
        iterations = iter + 1;
        // E-step
        let mut total = 0.0;
        let consts: Vec<f64> = comps.iter().map(|c| c.weight.ln() - c.std.ln() - half_ln_2pi).collect();
        for (i, &x) in samples.iter().enumerate() {
            let row = &mut resp[i * k..(i + 1) * k];
            let mut max = f64::NEG_INFINITY;
            for (j, c) in comps.iter().enumerate() {
                let z = (x - c.mean) / c.std;
                row[j] = consts[j] - 0.5 * z * z;
                max = max.max(row[j]);
            }
            let mut s = 0.0;
            for r in row.iter_mut() {
                *r = (*r - max).exp();
                s += *r;
            }
            for r in row.iter_mut() {
                *r /= s;
            }
            total += max + s.ln();
        }
        ll = total / n;
        // M-step
        for (j, c) in comps.iter_mut().enumerate() {
            let mut nk = 0.0;
            let mut mx = 0.0;
            for (i, &x) in samples.iter().enumerate() {
                let r = resp[i * k + j];
                nk += r;
                mx += r * x;
            }
            if nk <= 0.0 {
                return Err(Error::DegenerateFit("component lost all support".into()));
            }
            let mean = mx / nk;
            let var = samples
                .iter()
                .enumerate()
                .map(|(i, &x)| resp[i * k + j] * (x - mean).powi(2))
                .sum::<f64>()
                / nk;
            *c = GaussianComponent {
                weight: nk / n,
                mean,
                std: var.sqrt(),
            };
        }
        if (ll - prev_ll).abs() < EM_TOL {
            break;
        }
        prev_ll = ll;
    }
    if comps.iter().any(|c| !(c.std >= DEGENERATE_STD)) {
        return Err(Error::DegenerateFit("component collapsed".into()));
    }
    Ok((comps, ll, iterations))
}

/// EM fit of a 1D Gaussian mixture with k-means++ initialization drawn from
/// `seed`. A degenerate result triggers one re-initialization.
pub fn fit_gmm_1d(samples: &[f64], components: usize, seed: u64) -> Result<GmmFit> {
    if !(2..=3).contains(&components) {
        return Err(Error::Parameter(format!("components must be 2 or 3, got {components}")));
    }
    if samples.len() < 100 {
        return Err(Error::Parameter(format!("need at least 100 samples, got {}", samples.len())));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("non-finite sample".into()));
    }
    let mut last_err = None;
    for attempt in 0..2u64 {
        let mut rng = rng_from_seed(child_seed(seed, attempt));
        let centers = kmeans_pp_init(samples, components, &mut rng);
        let init = initial_components(samples, &centers);
        match run_em(samples, init) {
            Ok((mut comps, ll, iterations)) => {
                comps.sort_by(|a, b| a.mean.partial_cmp(&b.mean).unwrap());
                let wsum: f64 = comps.iter().map(|c| c.weight).sum();
                comps.iter_mut().for_each(|c| c.weight /= wsum);
                let low_separation = comps.windows(2).any(|w| {
                    let d = (w[1].mean - w[0].mean).abs() * (2.0 / (w[0].std.powi(2) + w[1].std.powi(2))).sqrt();
                    d < 2.0
                });
                return Ok(GmmFit {
                    components: comps,
                    log_likelihood: ll,
                    iterations,
                    low_separation,
                });
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap())
}

/// Threshold maximizing the between-class variance of a uniform histogram over
/// the observed range.
pub fn otsu_threshold(samples: &[f64], bins: usize) -> Option<f64> {
    let (lo, hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if !(hi > lo) {
        return None;
    }
    let width = (hi - lo) / bins as f64;
    let mut hist = vec![0usize; bins];
    for &x in samples {
        let b = (((x - lo) / width) as usize).min(bins - 1);
        hist[b] += 1;
    }
    let total = samples.len() as f64;
    let centers: Vec<f64> = (0..bins).map(|b| lo + (b as f64 + 0.5) * width).collect();
    let sum_all: f64 = hist.iter().zip(&centers).map(|(&h, &c)| h as f64 * c).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    // Ties (empty bins between classes) resolve to the middle of the plateau.
    let mut best = (f64::NEG_INFINITY, 0, 0);
    for b in 0..bins - 1 {
        w0 += hist[b] as f64;
        sum0 += hist[b] as f64 * centers[b];
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1).powi(2);
        if between > best.0 {
            best = (between, b, b);
        } else if between == best.0 && best.2 + 1 == b {
            best.2 = b;
        }
    }
    Some(lo + ((best.1 + best.2) as f64 / 2.0 + 1.0) * width)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeparationMethod {
    Gmm,
    Multithreshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub label: u8,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
    pub reliable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatterMap {
    /// `uint8` labels: 0 dark, 1 bright, 2 vessel.
    pub labels: Volume,
    /// Dark and bright class statistics (vessel voxels are excluded).
    pub stats: [ClassStats; 2],
    pub vessel_count: usize,
    pub method: SeparationMethod,
    pub low_separation: bool,
}

/// Serializable summary of a [`MatterMap`] for patch metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatterSummary {
    pub method: SeparationMethod,
    pub classes: Vec<ClassStats>,
    pub vessel_count: usize,
    pub low_separation: bool,
}

impl MatterMap {
    pub fn summary(&self) -> MatterSummary {
        MatterSummary {
            method: self.method,
            classes: self.stats.to_vec(),
            vessel_count: self.vessel_count,
            low_separation: self.low_separation,
        }
    }

    pub fn class_stats(&self, label: u8) -> Option<&ClassStats> {
        self.stats.iter().find(|s| s.label == label)
    }
}

fn stats_of(label: u8, values: impl Iterator<Item = f64>) -> ClassStats {
    let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
    for v in values {
        n += 1;
        sum += v;
        sq += v * v;
    }
    let mean = if n > 0 { sum / n as f64 } else { 0.0 };
    let var = if n > 0 { (sq / n as f64 - mean * mean).max(0.0) } else { 0.0 };
    ClassStats {
        label,
        mean,
        std: var.sqrt(),
        count: n,
        reliable: n >= MIN_RELIABLE_VOXELS,
    }
}

/// Splits non-vessel voxels into dark and bright classes and measures each.
pub fn separate_matters(tof: &Volume, vessel_mask: &Volume, method: SeparationMethod, seed: u64) -> Result<MatterMap> {
    tof.ensure_same_grid(vessel_mask, "separate_matters")?;
    vessel_mask.ensure_binary("separate_matters vessel mask")?;
    let n = tof.len();
    let vessel_count = vessel_mask.count_nonzero();
    let fraction = vessel_count as f64 / n as f64;
    if fraction > 0.9 {
        return Err(Error::InsufficientBackground(100.0 * fraction));
    }
    let background: Vec<f64> = tof
        .data()
        .iter()
        .zip(vessel_mask.data())
        .filter(|(_, &m)| m == 0.0)
        .map(|(&v, _)| v as f64)
        .collect();

    let single_class = |low_separation: bool| -> Result<MatterMap> {
        let labels = vessel_mask.map(DType::Uint8, |m| if m != 0.0 { LABEL_VESSEL as f32 } else { LABEL_BRIGHT as f32 })?;
        let s = stats_of(LABEL_BRIGHT, background.iter().copied());
        Ok(MatterMap {
            labels,
            stats: [ClassStats { label: LABEL_DARK, ..s }, s],
            vessel_count,
            method,
            low_separation,
        })
    };

    let (lo, hi) = background
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if !(hi > lo) {
        return single_class(true);
    }

    let (is_bright, low_separation): (Box<dyn Fn(f64) -> bool>, bool) = match method {
        SeparationMethod::Gmm => match fit_gmm_1d(&background, 2, tagged_seed(seed, "gmm")) {
            Ok(fit) => {
                let low = fit.low_separation;
                (Box::new(move |x| fit.classify(x) == 1), low)
            }
            Err(Error::DegenerateFit(_)) => return single_class(true),
            Err(e) => return Err(e),
        },
        SeparationMethod::Multithreshold => {
            let t = otsu_threshold(&background, HISTOGRAM_BINS).expect("non-constant range");
            (Box::new(move |x| x >= t), false)
        }
    };
    let labels_data: Vec<f32> = tof
        .data()
        .iter()
        .zip(vessel_mask.data())
        .map(|(&v, &m)| {
            if m != 0.0 {
                LABEL_VESSEL as f32
            } else if is_bright(v as f64) {
                LABEL_BRIGHT as f32
            } else {
                LABEL_DARK as f32
            }
        })
        .collect();
    let per_class = |label: u8| {
        stats_of(
            label,
            tof.data()
                .iter()
                .zip(&labels_data)
                .filter(|(_, &l)| l == label as f32)
                .map(|(&v, _)| v as f64),
        )
    };
    let dark = per_class(LABEL_DARK);
    let bright = per_class(LABEL_BRIGHT);
    let low_separation = low_separation
        || dark.count == 0
        || bright.count == 0
        || (bright.mean - dark.mean) * (2.0 / (dark.std.powi(2) + bright.std.powi(2)).max(1e-12)).sqrt() < 2.0;
    Ok(MatterMap {
        labels: Volume::new(tof.dims(), tof.spacing(), DType::Uint8, labels_data)?,
        stats: [dark, bright],
        vessel_count,
        method,
        low_separation,
    })
}

/// Relabels vessel voxels with the label of the nearest (6-connected BFS
/// order) non-vessel voxel, so a map can be refilled without vessels.
pub fn fill_vessel_labels(labels: &Volume) -> Volume {
    let mut data = labels.data().to_vec();
    let dims = labels.dims();
    let vessel = LABEL_VESSEL as f32;
    let mut queue: VecDeque<usize> = (0..data.len()).filter(|&i| data[i] != vessel).collect();
    if queue.is_empty() {
        return labels.map(DType::Uint8, |_| LABEL_BRIGHT as f32).expect("valid labels");
    }
    while let Some(i) = queue.pop_front() {
        let p = labels.coords(i);
        for d in N6 {
            let q = crate::topology::offset(p, d);
            if !(0..3).all(|a| q[a] >= 0 && (q[a] as usize) < dims[a]) {
                continue;
            }
            let j = labels.index(q[0] as usize, q[1] as usize, q[2] as usize);
            if data[j] == vessel {
                data[j] = data[i];
                queue.push_back(j);
            }
        }
    }
    Volume::from_raw(dims, labels.spacing(), DType::Uint8, data)
}

/// Filter and noise parameters that reproduce a target standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Pre-filter white-noise standard deviation.
    pub sigma_0: f64,
    /// Gaussian filter width in voxels.
    pub sigma_g: f64,
    /// Target post-filter standard deviation.
    pub sigma_f: f64,
    /// Target mean.
    pub mu_t: f64,
    /// Filter width predicted by the 2D large-σ_G formula.
    pub sigma_g_2d: f64,
    /// Standard deviation measured on a fresh probe with the final `sigma_g`.
    pub probe_sigma_f: f64,
    /// Target equals σ₀: the filter is the minimal near-identity blur.
    pub passthrough: bool,
}

impl NoiseSpec {
    pub fn with_mean(mut self, mu_t: f64) -> Self {
        self.mu_t = mu_t;
        self
    }

    fn validate(&self) -> Result<()> {
        let ok = self.sigma_0 > 0.0 && self.sigma_g > 0.0 && self.sigma_f > 0.0 && self.mu_t.is_finite();
        if ok && self.sigma_0.is_finite() && self.sigma_g.is_finite() {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid noise spec {self:?}")))
        }
    }
}

/// The 2D relation σ_G ≈ σ₀ / (2σ_f√π).
pub fn sigma_g_2d(sigma_f: f64, sigma_0: f64) -> f64 {
    sigma_0 / (2.0 * sigma_f * PI.sqrt())
}

/// Std of white noise (unit variance) after the separable truncated filter.
fn white_noise_gain(sigma_g: f64) -> f64 {
    let energy: f64 = gaussian_kernel_1d(sigma_g).iter().map(|t| t * t).sum();
    energy.powf(1.5)
}

fn probe_std(sigma_0: f64, sigma_g: f64, seed: u64) -> f64 {
    let n = CALIBRATION_PROBE;
    let mut rng = rng_from_seed(seed);
    let data: Vec<f32> = (0..n * n * n)
        .map(|_| (sigma_0 * rng.sample::<f64, _>(StandardNormal)) as f32)
        .collect();
    let v = Volume::from_raw([n; 3], [1.0; 3], DType::Float32, data);
    gaussian_filter_3d(&v, sigma_g).expect("sigma > 0").std()
}

/// Width whose white-noise gain equals `gain`; the gain is strictly
/// decreasing in the width.
fn solve_width(gain: f64) -> f64 {
    if gain >= white_noise_gain(MIN_SIGMA_G) {
        return MIN_SIGMA_G;
    }
    let (mut lo, mut hi) = (MIN_SIGMA_G, 1.0);
    while white_noise_gain(hi) > gain {
        hi *= 2.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if white_noise_gain(mid) > gain {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Chooses σ_G so that white noise of std `sigma_0` ends with std
/// `sigma_f_target`.
///
/// The 2D formula gives the starting width. A probe measurement at the
/// current width gives the ratio between the observed std (edges included)
/// and the discrete-kernel prediction; the width is re-solved against the
/// kernel energy scaled by that ratio until it settles.
pub fn calibrate_noise(sigma_f_target: f64, sigma_0: f64) -> Result<NoiseSpec> {
    if !(sigma_f_target > 0.0 && sigma_f_target.is_finite()) || !(sigma_0 > 0.0 && sigma_0.is_finite()) {
        return Err(Error::Parameter(format!(
            "noise targets must be positive: sigma_f={sigma_f_target}, sigma_0={sigma_0}"
        )));
    }
    if sigma_f_target > sigma_0 {
        return Err(Error::Infeasible(format!(
            "target std {sigma_f_target} exceeds pre-filter std {sigma_0}; smoothing only reduces it"
        )));
    }
    let initial = sigma_g_2d(sigma_f_target, sigma_0);
    let seed = child_seed(sigma_f_target.to_bits(), sigma_0.to_bits());
    let target_ratio = sigma_f_target / sigma_0;
    let sigma_g = if target_ratio >= white_noise_gain(MIN_SIGMA_G) {
        MIN_SIGMA_G
    } else {
        let mut sigma = initial.max(MIN_SIGMA_G);
        for _ in 0..MAX_CORRECTIONS {
            let empirical = probe_std(1.0, sigma, seed) / white_noise_gain(sigma);
            let next = solve_width(target_ratio / empirical);
            let done = (next - sigma).abs() <= 1e-3 * sigma;
            sigma = next;
            if done {
                break;
            }
        }
        sigma
    };
    let passthrough = sigma_g == MIN_SIGMA_G;
    let probe_sigma_f = probe_std(sigma_0, sigma_g, child_seed(seed, 1));
    Ok(NoiseSpec {
        sigma_0,
        sigma_g,
        sigma_f: sigma_f_target,
        mu_t: 0.0,
        sigma_g_2d: initial,
        probe_sigma_f,
        passthrough,
    })
}

/// Spec for a matter class: σ₀ fixed at `SIGMA0_FACTOR`·σ_f.
pub fn spec_for_class(stats: &ClassStats) -> Result<NoiseSpec> {
    let sigma_f = stats.std.max(1e-3);
    Ok(calibrate_noise(sigma_f, SIGMA0_FACTOR * sigma_f)?.with_mean(stats.mean))
}

/// White noise N(μ_t, σ₀²) blurred with σ_G, clamped to μ_t ± 8σ₀.
pub fn synthesize_region(dims: Dims, spacing: Spacing, spec: &NoiseSpec, seed: u64) -> Result<Volume> {
    spec.validate()?;
    let n = dims[0] * dims[1] * dims[2];
    let mut rng = rng_from_seed(seed);
    let noise: Vec<f32> = (0..n)
        .map(|_| (spec.sigma_0 * rng.sample::<f64, _>(StandardNormal)) as f32)
        .collect();
    let v = Volume::new(dims, spacing, DType::Float32, noise)?;
    let filtered = gaussian_filter_3d(&v, spec.sigma_g)?;
    let (lo, hi) = (
        (spec.mu_t - CLAMP_SIGMAS * spec.sigma_0) as f32,
        (spec.mu_t + CLAMP_SIGMAS * spec.sigma_0) as f32,
    );
    let mu = spec.mu_t as f32;
    filtered.map(DType::Float32, |x| (x + mu).clamp(lo, hi))
}

/// Fills every class region of `matter` from its own synthesized field,
/// optionally after elastically deforming the label map.
pub fn compose_background(
    matter: &MatterMap,
    specs: &BTreeMap<u8, NoiseSpec>,
    alpha: f64,
    seed: u64,
) -> Result<Volume> {
    let labels = if alpha > 0.0 {
        let field = DeformField::random(
            matter.labels.dims(),
            alpha,
            MATTER_DEFORM_SIGMA,
            tagged_seed(seed, "matter-deform"),
        )?;
        warp_nearest(&matter.labels, &field)?
    } else {
        matter.labels.clone()
    };
    let mut present: Vec<u8> = labels.data().iter().map(|&l| l as u8).collect();
    present.sort_unstable();
    present.dedup();
    for l in &present {
        if !specs.contains_key(l) {
            return Err(Error::Configuration(format!("no noise spec for matter class {l}")));
        }
    }
    let mut out = vec![0.0f32; labels.len()];
    for &class in &present {
        let field = synthesize_region(labels.dims(), labels.spacing(), &specs[&class], child_seed(seed, class as u64))?;
        for ((o, &l), &v) in out.iter_mut().zip(labels.data()).zip(field.data()) {
            if l as u8 == class {
                *o = v;
            }
        }
    }
    Volume::new(labels.dims(), labels.spacing(), DType::Float32, out)
}

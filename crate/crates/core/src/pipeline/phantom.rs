//! Analytic tube phantoms with known centerlines and radii.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::background::{calibrate_noise, compose_background, ClassStats, MatterMap, SeparationMethod};
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, tagged_seed};
use crate::spline::Point3;
use crate::volume::{DType, Dims, Spacing, Volume};

pub const PHANTOM_SPACING_MM: f64 = 0.5;
pub const COW_LITE_LABELS: [&str; 7] = ["A-B", "C-D", "E-F", "G-H", "I-J", "K-L", "M-N-O"];
pub const COW_LITE_DIMS: Dims = [200, 200, 64];
pub const COW_LITE_RING_RADIUS: f64 = 64.0;
pub const COW_LITE_VESSEL_RADIUS: f64 = 2.5;
pub const COW_LITE_SPUR_RADII: [f64; 7] = [2.0, 2.6, 1.8, 2.2, 1.6, 3.0, 2.0];
pub const COW_LITE_SPUR_LENGTH: f64 = 24.0;

/// Intensity model of phantom TOF volumes: (mean, target std) per class.
pub const TOF_DARK: (f64, f64) = (40.0, 4.0);
pub const TOF_BRIGHT: (f64, f64) = (120.0, 8.0);
pub const TOF_VESSEL: (f64, f64) = (300.0, 10.0);

/// Straight tube between `a` and `b` with linearly varying radius. A capped
/// end is rounded by a ball; an uncapped end is cut flat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubeSegment {
    pub a: Point3,
    pub b: Point3,
    pub ra: f64,
    pub rb: f64,
    pub cap_a: bool,
    pub cap_b: bool,
}

impl TubeSegment {
    /// Axis parameter of the closest axis point, or `None` past a flat end.
    fn axis_param(&self, p: Point3) -> Option<f64> {
        let v = sub(self.b, self.a);
        let l2 = dot(v, v);
        let t = if l2 > 0.0 { dot(sub(p, self.a), v) / l2 } else { 0.0 };
        if t < 0.0 {
            self.cap_a.then_some(0.0)
        } else if t > 1.0 {
            self.cap_b.then_some(1.0)
        } else {
            Some(t)
        }
    }

    pub fn contains(&self, p: Point3) -> bool {
        let Some(t) = self.axis_param(p) else {
            return false;
        };
        let r = self.ra + (self.rb - self.ra) * t;
        let q = [0, 1, 2].map(|i| self.a[i] + t * (self.b[i] - self.a[i]));
        let d = sub(p, q);
        dot(d, d) <= r * r
    }

    fn bounds(&self) -> (Point3, Point3) {
        let r = self.ra.max(self.rb);
        (
            [0, 1, 2].map(|i| self.a[i].min(self.b[i]) - r - 1.0),
            [0, 1, 2].map(|i| self.a[i].max(self.b[i]) + r + 1.0),
        )
    }

    pub fn direction(&self) -> Point3 {
        normalize(sub(self.b, self.a))
    }
}

fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalize(a: Point3) -> Point3 {
    let n = dot(a, a).sqrt();
    a.map(|v| v / n)
}

fn along(p: Point3, d: Point3, s: f64) -> Point3 {
    [p[0] + s * d[0], p[1] + s * d[1], p[2] + s * d[2]]
}

/// Binary mask of the union of `segments`.
pub fn rasterize_segments(dims: Dims, spacing: Spacing, segments: &[TubeSegment]) -> Result<Volume> {
    let mut data = vec![0.0f32; dims[0] * dims[1] * dims[2]];
    for s in segments {
        let (lo, hi) = s.bounds();
        let range = |a: usize| {
            let l = lo[a].floor().max(0.0) as usize;
            let h = (hi[a].ceil().max(-1.0) as i64).min(dims[a] as i64 - 1);
            (l, h)
        };
        let (rx, ry, rz) = (range(0), range(1), range(2));
        if rx.1 < rx.0 as i64 || ry.1 < ry.0 as i64 || rz.1 < rz.0 as i64 {
            continue;
        }
        for z in rz.0..=rz.1 as usize {
            for y in ry.0..=ry.1 as usize {
                for x in rx.0..=rx.1 as usize {
                    if s.contains([x as f64, y as f64, z as f64]) {
                        data[x + dims[0] * (y + dims[1] * z)] = 1.0;
                    }
                }
            }
        }
    }
    Volume::new(dims, spacing, DType::Uint8, data)
}

/// Known bifurcation of a phantom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomBifurcation {
    pub label: Option<String>,
    pub pos: Point3,
    pub mother_dir: Point3,
    pub d1: Point3,
    pub d2: Point3,
    /// Mother, first daughter, second daughter.
    pub radii: [f64; 3],
    pub theta: f64,
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub kind: PhantomKind,
    pub mask: Volume,
    pub tof: Volume,
    pub segments: Vec<TubeSegment>,
    pub bifurcations: Vec<PhantomBifurcation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PhantomKind {
    Cylinder { radius: f64, length: f64 },
    Y(YParams),
    CowLite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct YParams {
    /// Mother, first daughter, second daughter.
    pub radii: [f64; 3],
    /// Angle between the daughters, degrees.
    pub theta_deg: f64,
    pub arm_length: f64,
    pub dims: Dims,
    pub center: Point3,
    /// Orthonormal frame; its second column is the daughters' bisector.
    pub frame: [Point3; 3],
}

impl Default for YParams {
    fn default() -> Self {
        Self {
            radii: [3.0, 2.0, 2.0],
            theta_deg: 100.0,
            arm_length: 40.0,
            dims: [64; 3],
            center: [32.0; 3],
            frame: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }
}

impl YParams {
    /// Random orientation, radii and angle for fixture generation.
    pub fn random(seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let frame = random_frame(&mut rng);
        let jitter: Point3 = [0, 1, 2].map(|_| rng.random_range(-2.0..2.0));
        Self {
            radii: [
                rng.random_range(2.5..4.0),
                rng.random_range(1.5..3.0),
                rng.random_range(1.5..3.0),
            ],
            theta_deg: rng.random_range(60.0..140.0),
            arm_length: 48.0,
            dims: [64; 3],
            center: [32.0 + jitter[0], 32.0 + jitter[1], 32.0 + jitter[2]],
            frame,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.radii.iter().any(|r| !(*r >= 0.5 && r.is_finite())) {
            return Err(Error::Parameter(format!("phantom radii must be >= 0.5, got {:?}", self.radii)));
        }
        if !(self.theta_deg > 0.0 && self.theta_deg < 180.0) {
            return Err(Error::Parameter(format!("daughter angle must lie in (0, 180), got {}", self.theta_deg)));
        }
        if !(self.arm_length > 0.0) || self.dims.iter().any(|&d| d < 8) {
            return Err(Error::Parameter("phantom arms and dims must be positive (dims >= 8)".into()));
        }
        Ok(())
    }
}

/// Uniformly random rotation (normalized Gaussian quaternion).
fn random_frame<R: Rng + ?Sized>(rng: &mut R) -> [Point3; 3] {
    let q: [f64; 4] = [0; 4].map(|_| rng.sample(StandardNormal));
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    let m = [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ];
    [0, 1, 2].map(|c| [m[0][c], m[1][c], m[2][c]])
}

fn in_frame(frame: &[Point3; 3], local: Point3) -> Point3 {
    [0, 1, 2].map(|i| (0..3).map(|c| frame[c][i] * local[c]).sum())
}

/// Straight flat-ended cylinder along x, centered in a volume with a margin of
/// 7 voxels at each end and 6 voxels around the tube.
pub fn cylinder(radius: f64, length: f64, seed: u64) -> Result<Phantom> {
    if !(radius >= 0.5 && length >= 2.0) {
        return Err(Error::Parameter(format!("cylinder needs radius >= 0.5 and length >= 2, got {radius}, {length}")));
    }
    let side = 2 * (radius.ceil() as usize + 6) + 1;
    let nx = length.ceil() as usize + 14;
    let c = (side / 2) as f64;
    let seg = TubeSegment {
        a: [7.0, c, c],
        b: [7.0 + length - 1.0, c, c],
        ra: radius,
        rb: radius,
        cap_a: false,
        cap_b: false,
    };
    finish(PhantomKind::Cylinder { radius, length }, [nx, side, side], vec![seg], Vec::new(), seed)
}

/// Mother plus two daughters meeting at `center`; each arm is capped at the
/// node and cut flat at its far end.
pub fn y_phantom(params: &YParams, seed: u64) -> Result<Phantom> {
    params.validate()?;
    let h = params.theta_deg.to_radians() / 2.0;
    let f = &params.frame;
    let u = in_frame(f, [0.0, 1.0, 0.0]);
    let d1 = in_frame(f, [h.sin(), h.cos(), 0.0]);
    let d2 = in_frame(f, [-h.sin(), h.cos(), 0.0]);
    let mother = u.map(|v| -v);
    let c = params.center;
    let arm = |d: Point3, r: f64| TubeSegment {
        a: c,
        b: along(c, d, params.arm_length),
        ra: r,
        rb: r,
        cap_a: true,
        cap_b: false,
    };
    let [rm, r1, r2] = params.radii;
    let segments = vec![arm(mother, rm), arm(d1, r1), arm(d2, r2)];
    let bif = PhantomBifurcation {
        label: None,
        pos: c,
        mother_dir: mother,
        d1,
        d2,
        radii: params.radii,
        theta: 2.0 * h,
    };
    finish(PhantomKind::Y(params.clone()), params.dims, segments, vec![bif], seed)
}

/// Seven-node ring with an outward spur at every node, so each node is a
/// bifurcation; nodes carry the circle-of-Willis style labels.
pub fn cow_lite(seed: u64) -> Result<Phantom> {
    let dims = COW_LITE_DIMS;
    let center = [dims[0] as f64 / 2.0, dims[1] as f64 / 2.0, dims[2] as f64 / 2.0];
    let nodes: Vec<Point3> = (0..7)
        .map(|k| {
            let phi = 2.0 * PI * k as f64 / 7.0 + PI / 14.0;
            [
                (center[0] + COW_LITE_RING_RADIUS * phi.cos()).round(),
                (center[1] + COW_LITE_RING_RADIUS * phi.sin()).round(),
                center[2],
            ]
        })
        .collect();
    let rv = COW_LITE_VESSEL_RADIUS;
    let mut segments = Vec::new();
    let mut bifs = Vec::new();
    for k in 0..7 {
        let (prev, next) = (nodes[(k + 6) % 7], nodes[(k + 1) % 7]);
        segments.push(TubeSegment {
            a: nodes[k],
            b: next,
            ra: rv,
            rb: rv,
            cap_a: true,
            cap_b: true,
        });
        let out = normalize(sub(nodes[k], center));
        let rs = COW_LITE_SPUR_RADII[k];
        segments.push(TubeSegment {
            a: nodes[k],
            b: along(nodes[k], out, COW_LITE_SPUR_LENGTH),
            ra: rs,
            rb: rs,
            cap_a: true,
            cap_b: false,
        });
        let (d1, d2) = (normalize(sub(prev, nodes[k])), normalize(sub(next, nodes[k])));
        bifs.push(PhantomBifurcation {
            label: Some(COW_LITE_LABELS[k].to_string()),
            pos: nodes[k],
            mother_dir: out,
            d1,
            d2,
            radii: [rs, rv, rv],
            theta: dot(d1, d2).clamp(-1.0, 1.0).acos(),
        });
    }
    finish(PhantomKind::CowLite, dims, segments, bifs, seed)
}

pub fn make_phantom(kind: &PhantomKind, seed: u64) -> Result<Phantom> {
    match kind {
        PhantomKind::Cylinder { radius, length } => cylinder(*radius, *length, seed),
        PhantomKind::Y(p) => y_phantom(p, seed),
        PhantomKind::CowLite => cow_lite(seed),
    }
}

fn finish(
    kind: PhantomKind,
    dims: Dims,
    segments: Vec<TubeSegment>,
    bifurcations: Vec<PhantomBifurcation>,
    seed: u64,
) -> Result<Phantom> {
    let spacing = [PHANTOM_SPACING_MM; 3];
    let mask = rasterize_segments(dims, spacing, &segments)?;
    let tof = phantom_tof(&mask, seed)?;
    Ok(Phantom {
        kind,
        mask,
        tof,
        segments,
        bifurcations,
    })
}

/// Labels for the TOF model: ellipsoidal dark pockets in bright tissue, with
/// vessels on top.
fn phantom_labels(mask: &Volume, seed: u64) -> Volume {
    let dims = mask.dims();
    let mut rng = rng_from_seed(tagged_seed(seed, "dark-pockets"));
    let pockets = (mask.len() / 32_768).clamp(2, 24);
    let blobs: Vec<(Point3, Point3)> = (0..pockets)
        .map(|_| {
            let c: Point3 = [0, 1, 2].map(|a| rng.random_range(0.0..dims[a] as f64));
            let r: Point3 = [0, 1, 2].map(|_| rng.random_range(5.0..12.0));
            (c, r)
        })
        .collect();
    let data = (0..mask.len())
        .map(|i| {
            if mask.data()[i] != 0.0 {
                return 2.0;
            }
            let p = mask.coords(i).map(|v| v as f64);
            let dark = blobs
                .iter()
                .any(|(c, r)| (0..3).map(|a| ((p[a] - c[a]) / r[a]).powi(2)).sum::<f64>() <= 1.0);
            if dark {
                0.0
            } else {
                1.0
            }
        })
        .collect();
    Volume::new(dims, mask.spacing(), DType::Uint8, data).expect("valid labels")
}

/// Synthetic TOF intensities for a phantom mask.
pub fn phantom_tof(mask: &Volume, seed: u64) -> Result<Volume> {
    let labels = phantom_labels(mask, seed);
    let mut specs = BTreeMap::new();
    for (label, (mu, sd)) in [(0u8, TOF_DARK), (1, TOF_BRIGHT), (2, TOF_VESSEL)] {
        specs.insert(label, calibrate_noise(sd, 4.0 * sd)?.with_mean(mu));
    }
    let stats = |label: u8, (mean, std): (f64, f64)| ClassStats {
        label,
        mean,
        std,
        count: 0,
        reliable: false,
    };
    let matter = MatterMap {
        labels,
        stats: [stats(0, TOF_DARK), stats(1, TOF_BRIGHT)],
        vessel_count: mask.count_nonzero(),
        method: SeparationMethod::Gmm,
        low_separation: false,
    };
    compose_background(&matter, &specs, 0.0, tagged_seed(seed, "phantom-tof"))
}

/// Dark cube (40 ± 4) inside a bright field (120 ± 8), i.i.d. noise, and the
/// ground-truth labels (0 dark, 1 bright).
pub fn two_gaussian_phantom(dims: Dims, seed: u64) -> Result<(Volume, Volume)> {
    let mut rng = rng_from_seed(seed);
    let lo = dims.map(|d| d / 4);
    let hi = dims.map(|d| d - d / 4);
    let labels = Volume::from_fn(dims, [1.0; 3], DType::Uint8, |x, y, z| {
        let p = [x, y, z];
        let inside = (0..3).all(|a| p[a] >= lo[a] && p[a] < hi[a]);
        if inside {
            0.0
        } else {
            1.0
        }
    })?;
    let data: Vec<f32> = labels
        .data()
        .iter()
        .map(|&l| {
            let (mu, sd) = if l == 0.0 { TOF_DARK } else { TOF_BRIGHT };
            (mu + sd * rng.sample::<f64, _>(StandardNormal)) as f32
        })
        .collect();
    Ok((Volume::new(dims, [1.0; 3], DType::Float32, data)?, labels))
}

//! Aneurysm sacs: deformed spheres placed on the daughter-branch bisector.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::DeformField;
use crate::spline::Point3;
use crate::topology::{is_single_component, Connectivity};
use crate::volume::{gaussian_filter_3d, max_composite, DType, Dims, Spacing, Volume};

/// Sacs at least this large (in mm) get the thrombosis profile when requested.
pub const THROMBOSIS_MIN_RADIUS_MM: f64 = 3.0;
/// Relative intensity of the sac core under the thrombosis profile.
pub const THROMBOSIS_LEVEL: f64 = 0.55;
pub const SAC_EDGE_SOFTNESS: f64 = 0.5;
pub const MAX_GAMMA: f64 = 2.0;
const VOLUME_BAND: (f64, f64) = (0.5, 1.8);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AneurysmSpec {
    /// Sac radius in voxels.
    pub r: f64,
    pub gamma: f64,
    /// Maximum displacement of the sac deformation, in voxels.
    pub alpha: f64,
    pub amplitude: f64,
    pub thrombosis: bool,
    pub seed: u64,
}

impl AneurysmSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.r >= 0.5 && self.r.is_finite()) {
            return Err(Error::Parameter(format!("aneurysm radius must be >= 0.5 voxel, got {}", self.r)));
        }
        if !(0.0..=MAX_GAMMA).contains(&self.gamma) {
            return Err(Error::Parameter(format!("gamma must lie in [0, {MAX_GAMMA}], got {}", self.gamma)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Parameter(format!("sac deformation must be >= 0, got {}", self.alpha)));
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::Parameter(format!("amplitude must be > 0, got {}", self.amplitude)));
        }
        Ok(())
    }

    /// Deformation smoothness tied to the sac size.
    pub fn sigma_e(&self) -> f64 {
        (self.r / 2.0).max(2.0)
    }
}

/// Converts a radius in millimetres to voxels using the mean spacing.
pub fn radius_mm_to_voxels(r_mm: f64, spacing: Spacing) -> f64 {
    r_mm / (spacing.iter().sum::<f64>() / 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BifurcationGeometry {
    pub node_pos: Point3,
    /// Unit daughter tangents pointing away from the node.
    pub d1: Point3,
    pub d2: Point3,
    /// Angle between the daughters, radians.
    pub theta: f64,
    /// Mean radius of the branches forming the bifurcation, voxels.
    pub mean_radius: f64,
}

fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: Point3) -> f64 {
    dot(a, a).sqrt()
}

impl BifurcationGeometry {
    pub fn new(node_pos: Point3, d1: Point3, d2: Point3, mean_radius: f64) -> Result<Self> {
        let unit = |d: Point3| -> Result<Point3> {
            let n = norm(d);
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::Parameter("daughter tangent has zero length".into()));
            }
            Ok([d[0] / n, d[1] / n, d[2] / n])
        };
        if !(mean_radius > 0.0 && mean_radius.is_finite()) {
            return Err(Error::Parameter(format!("mean branch radius must be > 0, got {mean_radius}")));
        }
        let (d1, d2) = (unit(d1)?, unit(d2)?);
        Ok(Self {
            node_pos,
            d1,
            d2,
            theta: dot(d1, d2).clamp(-1.0, 1.0).acos(),
            mean_radius,
        })
    }
}

/// normalize(d1 + d2).
pub fn bisector_direction(g: &BifurcationGeometry) -> Result<Point3> {
    if (PI - g.theta).abs() <= 1e-6 {
        return Err(Error::DegenerateBisector(format!(
            "daughters are antiparallel (angle {:.9} rad)",
            g.theta
        )));
    }
    let s = [g.d1[0] + g.d2[0], g.d1[1] + g.d2[1], g.d1[2] + g.d2[2]];
    let n = norm(s);
    if !(n > 0.0) {
        return Err(Error::DegenerateBisector("daughter tangents cancel".into()));
    }
    Ok([s[0] / n, s[1] / n, s[2] / n])
}

/// D = r·γ + √((R / tan(Θ/2))² + R²). Θ = π is accepted as the limit where
/// the first radical term vanishes.
pub fn placement_distance_raw(r: f64, gamma: f64, mean_radius: f64, theta: f64) -> Result<f64> {
    if !(theta > 0.0 && theta <= PI) {
        return Err(Error::Domain(format!("daughter angle must lie in (0, pi], got {theta}")));
    }
    let cot_term = if theta == PI { 0.0 } else { mean_radius / (theta / 2.0).tan() };
    Ok(r * gamma + (cot_term * cot_term + mean_radius * mean_radius).sqrt())
}

pub fn placement_distance(spec: &AneurysmSpec, g: &BifurcationGeometry) -> Result<f64> {
    placement_distance_raw(spec.r, spec.gamma, g.mean_radius, g.theta)
}

/// A ball of radius `r` seen through a smooth displacement field defined on
/// a local canvas around its center. The field's mean over the ball is
/// removed so the sac stays centered.
#[derive(Debug, Clone)]
pub struct SacShape {
    pub radius: f64,
    pub alpha: f64,
    half: i64,
    field: Option<Vec<[f64; 3]>>,
}

impl SacShape {
    pub fn new(radius: f64, alpha: f64, sigma_e: f64, seed: u64) -> Result<Self> {
        let half = (radius + alpha).ceil() as i64 + 2;
        let side = (2 * half + 1) as usize;
        let field = if alpha > 0.0 {
            let f = DeformField::random([side; 3], alpha, sigma_e, seed)?;
            let mut disp: Vec<[f64; 3]> = f
                .displacement
                .iter()
                .map(|d| [d[0] as f64, d[1] as f64, d[2] as f64])
                .collect();
            let (mut mean, mut count) = ([0.0; 3], 0usize);
            for (i, d) in disp.iter().enumerate() {
                if canvas_offset(i, side, half).iter().map(|c| c * c).sum::<f64>() <= radius * radius {
                    (0..3).for_each(|a| mean[a] += d[a]);
                    count += 1;
                }
            }
            let mean = mean.map(|m| m / count.max(1) as f64);
            disp.iter_mut().for_each(|d| (0..3).for_each(|a| d[a] -= mean[a]));
            let max = disp.iter().map(|&d| norm(d)).fold(0.0, f64::max);
            if max > 0.0 {
                let s = alpha / max;
                disp.iter_mut().for_each(|d| (0..3).for_each(|a| d[a] *= s));
            }
            Some(disp)
        } else {
            None
        };
        Ok(Self {
            radius,
            alpha,
            half,
            field,
        })
    }

    /// Half-width of the region the sac can occupy around its center.
    pub fn half_extent(&self) -> i64 {
        self.half
    }

    fn displacement(&self, rel: Point3) -> Point3 {
        let Some(field) = &self.field else {
            return [0.0; 3];
        };
        let side = (2 * self.half + 1) as usize;
        let max = (side - 1) as f64;
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let c = (rel[a] + self.half as f64).clamp(0.0, max);
            base[a] = (c.floor() as usize).min(side - 2);
            frac[a] = c - base[a] as f64;
        }
        let mut out = [0.0; 3];
        for corner in 0..8 {
            let mut w = 1.0;
            let mut q = [0usize; 3];
            for a in 0..3 {
                let hi = (corner >> a) & 1 == 1;
                q[a] = base[a] + hi as usize;
                w *= if hi { frac[a] } else { 1.0 - frac[a] };
            }
            let d = field[q[0] + side * (q[1] + side * q[2])];
            (0..3).for_each(|a| out[a] += w * d[a]);
        }
        out
    }

    /// Distance of the back-warped point from the center, in units of the
    /// radius; the sac is where this is at most 1.
    pub fn normalized_radius(&self, rel: Point3) -> f64 {
        let d = self.displacement(rel);
        norm([rel[0] + d[0], rel[1] + d[1], rel[2] + d[2]]) / self.radius
    }

    /// Visits every voxel of `dims` inside the sac centered at `center`.
    pub fn for_each_voxel(&self, dims: Dims, center: Point3, mut f: impl FnMut(usize, f64)) {
        let h = self.half as f64;
        let range = |a: usize| {
            let lo = (center[a] - h).floor().max(0.0) as usize;
            let hi = ((center[a] + h).ceil() as i64).min(dims[a] as i64 - 1);
            (lo, hi)
        };
        let (rx, ry, rz) = (range(0), range(1), range(2));
        if rx.1 < 0 || ry.1 < 0 || rz.1 < 0 {
            return;
        }
        for z in rz.0..=rz.1 as usize {
            for y in ry.0..=ry.1 as usize {
                for x in rx.0..=rx.1 as usize {
                    let rel = [x as f64 - center[0], y as f64 - center[1], z as f64 - center[2]];
                    let rho = self.normalized_radius(rel);
                    if rho <= 1.0 {
                        f(x + dims[0] * (y + dims[1] * z), rho);
                    }
                }
            }
        }
    }

    /// Binary mask on the local canvas, centered on its middle voxel.
    pub fn canvas_mask(&self) -> Volume {
        let side = (2 * self.half + 1) as usize;
        let mut data = vec![0.0f32; side * side * side];
        let c = self.half as f64;
        self.for_each_voxel([side; 3], [c; 3], |i, _| data[i] = 1.0);
        Volume::from_raw([side; 3], [1.0; 3], DType::Uint8, data)
    }
}

fn canvas_offset(i: usize, side: usize, half: i64) -> [f64; 3] {
    let x = i % side;
    let y = (i / side) % side;
    let z = i / (side * side);
    [x as i64 - half, y as i64 - half, z as i64 - half].map(|v| v as f64)
}

/// Voxels of the undeformed digital ball of `radius`.
pub fn digital_ball_volume(radius: f64) -> usize {
    let c = radius.floor() as i64;
    let r2 = radius * radius;
    let mut n = 0;
    for z in -c..=c {
        for y in -c..=c {
            for x in -c..=c {
                if ((x * x + y * y + z * z) as f64) <= r2 {
                    n += 1;
                }
            }
        }
    }
    n
}

fn shape_ok(shape: &SacShape, ball: usize) -> bool {
    let mask = shape.canvas_mask();
    let ratio = mask.count_nonzero() as f64 / ball as f64;
    (VOLUME_BAND.0..=VOLUME_BAND.1).contains(&ratio) && is_single_component(&mask, Connectivity::TwentySix)
}

/// Deformed sac accepted by the connectivity and volume checks, retrying
/// once with half the deformation.
pub fn accepted_shape(spec: &AneurysmSpec) -> Result<SacShape> {
    spec.validate()?;
    let ball = digital_ball_volume(spec.r);
    let first = SacShape::new(spec.r, spec.alpha, spec.sigma_e(), spec.seed)?;
    if spec.alpha == 0.0 || shape_ok(&first, ball) {
        return Ok(first);
    }
    let retry = SacShape::new(spec.r, spec.alpha / 2.0, spec.sigma_e(), spec.seed)?;
    if shape_ok(&retry, ball) {
        return Ok(retry);
    }
    Err(Error::Deformation(format!(
        "sac of radius {} stays fragmented or out of volume band at alpha {} and {}",
        spec.r,
        spec.alpha,
        spec.alpha / 2.0
    )))
}

/// Deformed ball on its own canvas of side `2·(ceil(r + α) + 2) + 1`.
pub fn build_aneurysm_mask(spec: &AneurysmSpec) -> Result<Volume> {
    Ok(accepted_shape(spec)?.canvas_mask())
}

/// Relative intensity at normalized radius `rho` under the thrombosis
/// profile: flat core to one third, cosine ramp back to full by two thirds.
pub fn thrombosis_profile(rho: f64) -> f64 {
    let (inner, outer) = (1.0 / 3.0, 2.0 / 3.0);
    if rho <= inner {
        THROMBOSIS_LEVEL
    } else if rho >= outer {
        1.0
    } else {
        let t = (rho - inner) / (outer - inner);
        THROMBOSIS_LEVEL + (1.0 - THROMBOSIS_LEVEL) * 0.5 * (1.0 - (PI * t).cos())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub center: Point3,
    pub distance: f64,
    pub bisector: Point3,
    pub theta: f64,
    pub mean_radius: f64,
    pub r: f64,
    pub gamma: f64,
    /// Deformation magnitude actually used (halved after a failed check).
    pub alpha: f64,
    pub thrombosis: bool,
}

#[derive(Debug, Clone)]
pub struct Embedding {
    pub intensity: Volume,
    /// Sac voxels outside the vessel mask.
    pub ica_mask: Volume,
    /// Every sac voxel, including those overlapping vessels.
    pub sac_mask: Volume,
    pub placement: Placement,
}

/// Places the sac at `node + D·u` and max-composites it into `vessel_vol`.
pub fn embed_aneurysm(
    vessel_vol: &Volume,
    vessel_mask: &Volume,
    g: &BifurcationGeometry,
    spec: &AneurysmSpec,
) -> Result<Embedding> {
    vessel_vol.ensure_same_grid(vessel_mask, "embed_aneurysm")?;
    vessel_mask.ensure_binary("embed_aneurysm vessel mask")?;
    spec.validate()?;
    let u = bisector_direction(g)?;
    let distance = placement_distance(spec, g)?;
    let center = [0, 1, 2].map(|a| g.node_pos[a] + distance * u[a]);
    let dims = vessel_vol.dims();
    let margin = spec.r + 2.0;
    for (what, p) in [("node", g.node_pos), ("sac center", center)] {
        if (0..3).any(|a| p[a] < margin || p[a] > dims[a] as f64 - 1.0 - margin) {
            return Err(Error::Placement(format!(
                "{what} {p:?} closer than {margin:.2} voxels to the border of {dims:?}"
            )));
        }
    }
    let shape = accepted_shape(spec)?;
    let spacing = vessel_vol.spacing();
    let r_mm = spec.r * spacing.iter().sum::<f64>() / 3.0;
    let thrombosis = spec.thrombosis && r_mm >= THROMBOSIS_MIN_RADIUS_MM;

    let n = vessel_vol.len();
    let mut sac = vec![0.0f32; n];
    let mut level = vec![0.0f32; n];
    shape.for_each_voxel(dims, center, |i, rho| {
        sac[i] = 1.0;
        let f = if thrombosis { thrombosis_profile(rho) } else { 1.0 };
        level[i] = (spec.amplitude * f) as f32;
    });
    let level = Volume::new(dims, spacing, DType::Float32, level)?;
    let sac_intensity = gaussian_filter_3d(&level, SAC_EDGE_SOFTNESS)?;
    let intensity = max_composite(vessel_vol, &sac_intensity)?;
    let ica: Vec<f32> = sac
        .iter()
        .zip(vessel_mask.data())
        .map(|(&s, &m)| if s != 0.0 && m == 0.0 { 1.0 } else { 0.0 })
        .collect();
    Ok(Embedding {
        intensity,
        ica_mask: Volume::new(dims, spacing, DType::Uint8, ica)?,
        sac_mask: Volume::new(dims, spacing, DType::Uint8, sac)?,
        placement: Placement {
            center,
            distance,
            bisector: u,
            theta: g.theta,
            mean_radius: g.mean_radius,
            r: spec.r,
            gamma: spec.gamma,
            alpha: shape.alpha,
            thrombosis,
        },
    })
}

/// Mean voxel position of a binary mask.
pub fn centroid(mask: &Volume) -> Option<Point3> {
    let pts = mask.nonzero_coords();
    if pts.is_empty() {
        return None;
    }
    let mut c = [0.0; 3];
    for p in &pts {
        (0..3).for_each(|a| c[a] += p[a] as f64);
    }
    Some(c.map(|v| v / pts.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn spec(r: f64, gamma: f64, alpha: f64, seed: u64) -> AneurysmSpec {
        AneurysmSpec {
            r,
            gamma,
            alpha,
            amplitude: 300.0,
            thrombosis: false,
            seed,
        }
    }

    fn geometry(theta: f64, radius: f64, node: Point3) -> BifurcationGeometry {
        let h = theta / 2.0;
        BifurcationGeometry::new(node, [h.sin(), h.cos(), 0.0], [-h.sin(), h.cos(), 0.0], radius).unwrap()
    }

    #[test]
    fn bisector_examples() {
        let g = BifurcationGeometry::new([0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 1.0).unwrap();
        let u = bisector_direction(&g).unwrap();
        let s = 0.5f64.sqrt();
        assert!((u[0] - s).abs() < 1e-12 && (u[1] - s).abs() < 1e-12 && u[2] == 0.0);
        let g = BifurcationGeometry::new([0.0; 3], [0.0, 0.0, 1.0], [0.0, 0.0, 1.0], 1.0).unwrap();
        assert_eq!(bisector_direction(&g).unwrap(), [0.0, 0.0, 1.0]);
        let g = BifurcationGeometry::new([0.0; 3], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], 1.0).unwrap();
        assert!(matches!(bisector_direction(&g), Err(Error::DegenerateBisector(_))));
    }

    #[test]
    fn bisector_is_equiangular() {
        let mut rng = rng_from_seed(5);
        let rand_unit = |rng: &mut crate::rng::Rng| loop {
            let v: Point3 = [0, 1, 2].map(|_| rng.random_range(-1.0..1.0));
            if norm(v) > 0.1 && norm(v) <= 1.0 {
                return v;
            }
        };
        let mut checked = 0;
        while checked < 1000 {
            let (a, b) = (rand_unit(&mut rng), rand_unit(&mut rng));
            let g = BifurcationGeometry::new([0.0; 3], a, b, 1.0).unwrap();
            if PI - g.theta < 1e-3 {
                continue;
            }
            let u = bisector_direction(&g).unwrap();
            let a1 = dot(u, g.d1).clamp(-1.0, 1.0).acos();
            let a2 = dot(u, g.d2).clamp(-1.0, 1.0).acos();
            assert!((a1 - a2).abs() <= 1e-6);
            checked += 1;
        }
    }

    #[test]
    fn distance_examples() {
        let d = placement_distance_raw(2.0, 1.0, 1.5, PI).unwrap();
        assert!((d - 3.5).abs() < 1e-12);
        let d = placement_distance_raw(2.0, 1.0, 1.5, PI / 2.0).unwrap();
        assert!((d - 4.12132).abs() < 1e-5);
        let a = placement_distance_raw(1.0, 0.0, 2.0, 1.0).unwrap();
        let b = placement_distance_raw(7.0, 0.0, 2.0, 1.0).unwrap();
        assert_eq!(a, b);
        assert!(matches!(placement_distance_raw(1.0, 1.0, 1.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(placement_distance_raw(1.0, 1.0, 1.0, 3.5), Err(Error::Domain(_))));
    }

    #[test]
    fn distance_monotonicity() {
        let mut prev = 0.0;
        for i in 0..20 {
            let d = placement_distance_raw(2.0, i as f64 * 0.1, 1.5, 1.2).unwrap();
            assert!(d > prev);
            prev = d;
        }
        let mut prev = f64::INFINITY;
        for i in 1..30 {
            let d = placement_distance_raw(2.0, 0.5, 1.5, i as f64 * PI / 30.0).unwrap();
            assert!(d < prev);
            prev = d;
        }
    }

    #[test]
    fn undeformed_mask_is_a_digital_ball() {
        let m = build_aneurysm_mask(&spec(3.0, 0.5, 0.0, 1)).unwrap();
        let side = m.dims()[0];
        let c = (side / 2) as f64;
        for i in 0..m.len() {
            let p = m.coords(i);
            let d2: f64 = p.iter().map(|&v| (v as f64 - c).powi(2)).sum();
            assert_eq!(m.data()[i] != 0.0, d2 <= 9.0);
        }
        assert_eq!(m.count_nonzero(), digital_ball_volume(3.0));
        assert_eq!(digital_ball_volume(3.0), 123);
    }

    #[test]
    fn deformed_masks_stay_connected() {
        let ball = digital_ball_volume(3.0) as f64;
        for seed in 0..50 {
            let m = build_aneurysm_mask(&spec(3.0, 0.5, 0.9, seed)).unwrap();
            assert!(is_single_component(&m, Connectivity::TwentySix));
            let ratio = m.count_nonzero() as f64 / ball;
            assert!((0.5..=1.8).contains(&ratio), "{ratio}");
        }
        let a = build_aneurysm_mask(&spec(3.0, 0.5, 0.9, 3)).unwrap();
        assert_eq!(a, build_aneurysm_mask(&spec(3.0, 0.5, 0.9, 3)).unwrap());
    }

    #[test]
    fn small_radius_rejected() {
        assert!(matches!(build_aneurysm_mask(&spec(0.4, 0.5, 0.0, 1)), Err(Error::Parameter(_))));
        let r = radius_mm_to_voxels(0.2, [0.5; 3]);
        assert!(matches!(build_aneurysm_mask(&spec(r, 0.5, 0.0, 1)), Err(Error::Parameter(_))));
        assert!(matches!(build_aneurysm_mask(&spec(2.0, 2.5, 0.0, 1)), Err(Error::Parameter(_))));
    }

    #[test]
    fn out_of_bounds_placement_fails() {
        let vol = Volume::zeros([20; 3], [1.0; 3], DType::Float32).unwrap();
        let mask = Volume::zeros([20; 3], [1.0; 3], DType::Uint8).unwrap();
        let g = geometry(PI / 3.0, 2.0, [10.0, 12.0, 10.0]);
        let err = embed_aneurysm(&vol, &mask, &g, &spec(4.0, 1.0, 0.0, 1)).unwrap_err();
        assert!(matches!(err, Error::Placement(_)));
    }

    #[test]
    fn thrombosis_darkens_the_core() {
        let dims = [40; 3];
        let vol = Volume::zeros(dims, [1.0; 3], DType::Float32).unwrap();
        let mask = Volume::zeros(dims, [1.0; 3], DType::Uint8).unwrap();
        let g = geometry(PI / 2.0, 1.5, [20.0, 10.0, 20.0]);
        let mut s = spec(5.0, 0.5, 0.0, 1);
        s.thrombosis = true;
        let e = embed_aneurysm(&vol, &mask, &g, &s).unwrap();
        assert!(e.placement.thrombosis);
        let c = e.placement.center;
        let (mut core, mut outer) = (Vec::new(), Vec::new());
        for i in 0..vol.len() {
            let p = vol.coords(i);
            let rho = (0..3).map(|a| (p[a] as f64 - c[a]).powi(2)).sum::<f64>().sqrt() / s.r;
            let v = e.intensity.data()[i] as f64;
            if rho <= 1.0 / 3.0 {
                core.push(v);
            } else if (2.0 / 3.0..=1.0).contains(&rho) {
                outer.push(v);
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&core) <= 0.7 * mean(&outer), "{} vs {}", mean(&core), mean(&outer));
        let plain = embed_aneurysm(&vol, &mask, &g, &spec(5.0, 0.5, 0.0, 1)).unwrap();
        assert!(!plain.placement.thrombosis);
        s.r = 2.0;
        assert!(!embed_aneurysm(&vol, &mask, &g, &s).unwrap().placement.thrombosis);
    }

    #[test]
    fn sac_centroid_matches_placement() {
        let dims = [48; 3];
        let vol = Volume::zeros(dims, [1.0; 3], DType::Float32).unwrap();
        let mask = Volume::zeros(dims, [1.0; 3], DType::Uint8).unwrap();
        let mut rng = rng_from_seed(17);
        for seed in 0..20 {
            let g = geometry(rng.random_range(0.6..2.6), rng.random_range(1.0..3.0), [24.0, 14.0, 24.3]);
            let s = spec(rng.random_range(1.0..5.0), rng.random_range(0.0..1.0), 0.0, seed);
            let e = embed_aneurysm(&vol, &mask, &g, &s).unwrap();
            let c = centroid(&e.sac_mask).unwrap();
            let err = norm([0, 1, 2].map(|a| c[a] - e.placement.center[a]));
            assert!(err <= 1.0, "{err}");
        }
    }
}

//! Tube rasterization: spherical kernels, elastic deformation, sweeping along
//! centerlines and gray-level assignment.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, Rng as StreamRng};
use crate::spline::Point3;
use crate::volume::{convolve_axis, gaussian_filter_3d, gaussian_kernel_1d, DType, Dims, Spacing, Volume};

/// Samples stamped with one kernel deformation before re-deforming.
pub const REDEFORM_EVERY: usize = 8;
pub const DEFAULT_DEFORM_SIGMA: f64 = 4.0;
pub const DEFAULT_EDGE_SOFTNESS: f64 = 0.5;

/// Binary ball: voxel set iff its distance to the center voxel is at most
/// `radius`. Side length is `2·ceil(radius) + 1`.
pub fn make_spherical_kernel(radius: f64) -> Result<Volume> {
    if !(radius >= 0.5 && radius.is_finite()) {
        return Err(Error::Parameter(format!("kernel radius must be >= 0.5, got {radius}")));
    }
    let c = radius.ceil() as usize;
    let side = 2 * c + 1;
    let r2 = radius * radius;
    Volume::mask_from_fn([side; 3], [1.0; 3], |x, y, z| {
        let d2 = [x, y, z].iter().map(|&v| (v as f64 - c as f64).powi(2)).sum::<f64>();
        d2 <= r2
    })
}

/// Smooth random displacement field at full voxel resolution.
#[derive(Debug, Clone)]
pub struct DeformField {
    pub dims: Dims,
    pub alpha: f64,
    pub sigma_e: f64,
    pub seed: u64,
    /// Per-voxel displacement (x, y, z), x-fastest.
    pub displacement: Vec<[f32; 3]>,
}

impl DeformField {
    /// Per-axis uniform(−1, 1) noise, Gaussian-smoothed with `sigma_e`,
    /// rescaled so the largest displacement norm equals `alpha`.
    pub fn random(dims: Dims, alpha: f64, sigma_e: f64, seed: u64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::Parameter(format!("deformation magnitude must be >= 0, got {alpha}")));
        }
        if !(sigma_e > 0.0 && sigma_e.is_finite()) {
            return Err(Error::Parameter(format!("deformation smoothness must be > 0, got {sigma_e}")));
        }
        let n = dims[0] * dims[1] * dims[2];
        let mut rng = rng_from_seed(seed);
        let taps: Vec<f32> = gaussian_kernel_1d(sigma_e).iter().map(|&t| t as f32).collect();
        let mut comps: Vec<Vec<f32>> = Vec::with_capacity(3);
        for _ in 0..3 {
            let mut f: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            for axis in 0..3 {
                f = convolve_axis(&f, dims, axis, &taps);
            }
            comps.push(f);
        }
        let max_norm = (0..n)
            .map(|i| comps.iter().map(|c| (c[i] as f64).powi(2)).sum::<f64>().sqrt())
            .fold(0.0f64, f64::max);
        let scale = if max_norm > 0.0 { alpha / max_norm } else { 0.0 };
        let displacement = (0..n)
            .map(|i| {
                [
                    (comps[0][i] as f64 * scale) as f32,
                    (comps[1][i] as f64 * scale) as f32,
                    (comps[2][i] as f64 * scale) as f32,
                ]
            })
            .collect();
        Ok(Self {
            dims,
            alpha,
            sigma_e,
            seed,
            displacement,
        })
    }

    pub fn max_norm(&self) -> f64 {
        self.displacement
            .iter()
            .map(|d| d.iter().map(|&c| (c as f64).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    #[inline]
    fn at(&self, x: usize, y: usize, z: usize) -> [f32; 3] {
        self.displacement[x + self.dims[0] * (y + self.dims[1] * z)]
    }
}

/// Trilinear sample with edge clamping.
fn trilinear(v: &Volume, p: [f64; 3]) -> f32 {
    let dims = v.dims();
    let mut base = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..3 {
        let max = (dims[a] - 1) as f64;
        let c = p[a].clamp(0.0, max);
        let f = c.floor();
        base[a] = f as usize;
        frac[a] = c - f;
    }
    let mut acc = 0.0f64;
    for corner in 0..8 {
        let mut w = 1.0;
        let mut q = [0usize; 3];
        for a in 0..3 {
            let hi = (corner >> a) & 1 == 1;
            q[a] = if hi { (base[a] + 1).min(dims[a] - 1) } else { base[a] };
            w *= if hi { frac[a] } else { 1.0 - frac[a] };
        }
        if w != 0.0 {
            acc += w * v.at(q) as f64;
        }
    }
    acc as f32
}

/// Back-warps `v` through `field`: `out(x) = v(x + d(x))`. Binary inputs are
/// re-thresholded at 0.5.
pub fn warp(v: &Volume, field: &DeformField) -> Result<Volume> {
    if field.dims != v.dims() {
        return Err(Error::Shape(format!(
            "deformation field {:?} does not match volume {:?}",
            field.dims,
            v.dims()
        )));
    }
    let binary = v.is_binary();
    let [nx, ny, nz] = v.dims();
    let mut data = Vec::with_capacity(v.len());
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let d = field.at(x, y, z);
                let p = [x as f64 + d[0] as f64, y as f64 + d[1] as f64, z as f64 + d[2] as f64];
                let s = trilinear(v, p);
                data.push(if binary { (s >= 0.5) as u8 as f32 } else { s });
            }
        }
    }
    let dtype = if binary { v.dtype() } else { DType::Float32 };
    Volume::new(v.dims(), v.spacing(), dtype, data)
}

/// Nearest-neighbor back-warp, for categorical label maps.
pub fn warp_nearest(v: &Volume, field: &DeformField) -> Result<Volume> {
    if field.dims != v.dims() {
        return Err(Error::Shape("deformation field does not match label map".into()));
    }
    let dims = v.dims();
    let mut data = Vec::with_capacity(v.len());
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let d = field.at(x, y, z);
                let q: Vec<usize> = [x, y, z]
                    .iter()
                    .zip(d)
                    .enumerate()
                    .map(|(a, (&c, dc))| (c as f64 + dc as f64).round().clamp(0.0, (dims[a] - 1) as f64) as usize)
                    .collect();
                data.push(v.get(q[0], q[1], q[2]));
            }
        }
    }
    Volume::new(dims, v.spacing(), v.dtype(), data)
}

/// Random elastic deformation of a whole volume.
pub fn elastic_deform(v: &Volume, alpha: f64, sigma_e: f64, seed: u64) -> Result<Volume> {
    if alpha == 0.0 && sigma_e > 0.0 {
        return Ok(v.clone());
    }
    let field = DeformField::random(v.dims(), alpha, sigma_e, seed)?;
    warp(v, &field)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    /// Nominal radius in voxels; the sweep uses the per-point radii.
    pub radius: f64,
    pub alpha: f64,
    pub sigma_e: f64,
    pub reseed_along_curve: bool,
}

impl KernelSpec {
    pub fn rigid(radius: f64) -> Self {
        Self {
            radius,
            alpha: 0.0,
            sigma_e: DEFAULT_DEFORM_SIGMA,
            reseed_along_curve: false,
        }
    }
}

/// Output lattice for rasterization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub dims: Dims,
    pub spacing: Spacing,
}

/// Deformed-ball stamp: the kernel's deformation field lives on a local
/// canvas that travels with the stamp center.
struct Stamp {
    field: Option<DeformField>,
    half: i64,
}

impl Stamp {
    fn new(max_radius: f64, kspec: &KernelSpec, seed: u64) -> Result<Self> {
        let half = (max_radius + kspec.alpha).ceil() as i64 + 1;
        let field = if kspec.alpha > 0.0 {
            let side = (2 * half + 1) as usize;
            Some(DeformField::random([side; 3], kspec.alpha, kspec.sigma_e, seed)?)
        } else {
            None
        };
        Ok(Self { field, half })
    }

    fn apply(&self, out: &mut [f32], grid: &Grid, center: Point3, radius: f64) {
        let [nx, ny, nz] = grid.dims;
        let anchor = [center[0].round() as i64, center[1].round() as i64, center[2].round() as i64];
        let r2 = radius * radius;
        let h = self.half;
        for dz in -h..=h {
            let z = anchor[2] + dz;
            if z < 0 || z >= nz as i64 {
                continue;
            }
            for dy in -h..=h {
                let y = anchor[1] + dy;
                if y < 0 || y >= ny as i64 {
                    continue;
                }
                for dx in -h..=h {
                    let x = anchor[0] + dx;
                    if x < 0 || x >= nx as i64 {
                        continue;
                    }
                    let d = match &self.field {
                        Some(f) => f.at((dx + h) as usize, (dy + h) as usize, (dz + h) as usize),
                        None => [0.0; 3],
                    };
                    let px = x as f64 + d[0] as f64 - center[0];
                    let py = y as f64 + d[1] as f64 - center[1];
                    let pz = z as f64 + d[2] as f64 - center[2];
                    if px * px + py * py + pz * pz <= r2 {
                        out[x as usize + nx * (y as usize + ny * z as usize)] = 1.0;
                    }
                }
            }
        }
    }
}

/// Union of kernels stamped at every centerline point with the local radius.
///
/// With `alpha > 0` each stamp is a ball back-warped through a smooth random
/// field; `reseed_along_curve` draws a fresh field from `rng` every
/// [`REDEFORM_EVERY`] samples, otherwise one field serves the whole tube.
pub fn sweep_tube<R: RngCore + ?Sized>(
    centerline: &[Point3],
    radii: &[f64],
    kspec: &KernelSpec,
    grid: Grid,
    rng: &mut R,
) -> Result<Volume> {
    if centerline.len() != radii.len() {
        return Err(Error::Shape(format!(
            "{} centerline points but {} radii",
            centerline.len(),
            radii.len()
        )));
    }
    if let Some(r) = radii.iter().find(|r| !(**r >= 0.5 && r.is_finite())) {
        return Err(Error::Parameter(format!("kernel radius must be >= 0.5, got {r}")));
    }
    if !(kspec.alpha >= 0.0 && kspec.sigma_e > 0.0) {
        return Err(Error::Parameter("invalid kernel deformation parameters".into()));
    }
    let n = grid.dims[0] * grid.dims[1] * grid.dims[2];
    let mut out = vec![0.0f32; n];
    let segment = if kspec.reseed_along_curve { REDEFORM_EVERY } else { centerline.len().max(1) };
    for (chunk_pts, chunk_r) in centerline.chunks(segment).zip(radii.chunks(segment)) {
        let max_r = chunk_r.iter().copied().fold(0.0, f64::max);
        let seed = if kspec.alpha > 0.0 { rng.next_u64() } else { 0 };
        let stamp = Stamp::new(max_r, kspec, seed)?;
        for (p, &r) in chunk_pts.iter().zip(chunk_r) {
            stamp.apply(&mut out, &grid, *p, r);
        }
    }
    Volume::new(grid.dims, grid.spacing, DType::Uint8, out)
}

/// Binary envelope × amplitude, optionally softened by a Gaussian of
/// `edge_softness` voxels.
pub fn set_gray_level(mask: &Volume, amplitude: f64, edge_softness: f64) -> Result<Volume> {
    if !(amplitude > 0.0 && amplitude.is_finite()) {
        return Err(Error::Parameter(format!("amplitude must be > 0, got {amplitude}")));
    }
    if !(edge_softness >= 0.0 && edge_softness.is_finite()) {
        return Err(Error::Parameter(format!("edge softness must be >= 0, got {edge_softness}")));
    }
    mask.ensure_binary("set_gray_level")?;
    let scaled = mask.map(DType::Float32, |v| v * amplitude as f32)?;
    if edge_softness == 0.0 {
        Ok(scaled)
    } else {
        gaussian_filter_3d(&scaled, edge_softness)
    }
}

pub(crate) fn stream(seed: u64) -> StreamRng {
    rng_from_seed(seed)
}

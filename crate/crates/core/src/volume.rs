//! The 3D scalar grid shared by every stage, plus the filtering, cropping and
//! compositing primitives built on it.
//!
//! Voxels are stored x-fastest, then y, then z. Values are held as `f32`
//! regardless of the declared [`DType`]; integer dtypes only constrain the
//! values (they are quantized on construction and at export).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Dims = [usize; 3];
pub type Spacing = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    Uint8,
    Uint16,
    Float32,
}

impl DType {
    pub fn name(self) -> &'static str {
        match self {
            DType::Uint8 => "uint8",
            DType::Uint16 => "uint16",
            DType::Float32 => "float32",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "uint8" => Some(DType::Uint8),
            "uint16" => Some(DType::Uint16),
            "float32" => Some(DType::Float32),
            _ => None,
        }
    }

    pub fn byte_width(self) -> usize {
        match self {
            DType::Uint8 => 1,
            DType::Uint16 => 2,
            DType::Float32 => 4,
        }
    }

    /// Maps a float onto the representable set of this dtype: round half to
    /// even, then clamp to the integer range.
    pub fn quantize(self, value: f32) -> f32 {
        match self {
            DType::Float32 => value,
            DType::Uint8 => value.round_ties_even().clamp(0.0, u8::MAX as f32),
            DType::Uint16 => value.round_ties_even().clamp(0.0, u16::MAX as f32),
        }
    }
}

/// Axis-aligned 3D scalar grid with physical spacing in millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Dims,
    spacing: Spacing,
    dtype: DType,
    data: Vec<f32>,
}

fn check_dims(dims: Dims) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::Parameter(format!("dims must be positive, got {dims:?}")));
    }
    Ok(())
}

fn check_spacing(spacing: Spacing) -> Result<()> {
    if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::Parameter(format!(
            "spacing must be positive and finite, got {spacing:?}"
        )));
    }
    Ok(())
}

impl Volume {
    pub fn new(dims: Dims, spacing: Spacing, dtype: DType, mut data: Vec<f32>) -> Result<Self> {
        check_dims(dims)?;
        check_spacing(spacing)?;
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "data length {} does not match dims {dims:?} ({expected} voxels)",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite value at linear index {i}")));
        }
        if dtype != DType::Float32 {
            data.iter_mut().for_each(|v| *v = dtype.quantize(*v));
        }
        Ok(Self {
            dims,
            spacing,
            dtype,
            data,
        })
    }

    pub fn filled(dims: Dims, spacing: Spacing, dtype: DType, value: f32) -> Result<Self> {
        check_dims(dims)?;
        let n = dims[0] * dims[1] * dims[2];
        Self::new(dims, spacing, dtype, vec![value; n])
    }

    pub fn zeros(dims: Dims, spacing: Spacing, dtype: DType) -> Result<Self> {
        Self::filled(dims, spacing, dtype, 0.0)
    }

    pub fn from_fn<F>(dims: Dims, spacing: Spacing, dtype: DType, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, usize, usize) -> f32,
    {
        check_dims(dims)?;
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, spacing, dtype, data)
    }

    /// Binary mask volume (`uint8` of {0,1}) from a predicate.
    pub fn mask_from_fn<F>(dims: Dims, spacing: Spacing, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, usize, usize) -> bool,
    {
        Self::from_fn(dims, spacing, DType::Uint8, |x, y, z| f(x, y, z) as u8 as f32)
    }

    /// Internal constructor for data produced by this crate's own kernels.
    pub(crate) fn from_raw(dims: Dims, spacing: Spacing, dtype: DType, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), dims[0] * dims[1] * dims[2]);
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self {
            dims,
            spacing,
            dtype,
            data,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let x = index % self.dims[0];
        let rest = index / self.dims[0];
        [x, rest % self.dims[1], rest / self.dims[1]]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn at(&self, p: [usize; 3]) -> f32 {
        self.get(p[0], p[1], p[2])
    }

    /// Value at signed coordinates, or `None` outside the grid.
    #[inline]
    pub fn get_signed(&self, p: [i64; 3]) -> Option<f32> {
        self.contains_signed(p)
            .then(|| self.get(p[0] as usize, p[1] as usize, p[2] as usize))
    }

    #[inline]
    pub fn contains_signed(&self, p: [i64; 3]) -> bool {
        (0..3).all(|a| p[a] >= 0 && (p[a] as usize) < self.dims[a])
    }

    /// Writes one voxel, quantizing to the volume's dtype.
    ///
    /// Panics on non-finite values.
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: f32) {
        assert!(value.is_finite(), "non-finite voxel value");
        let i = self.index(x, y, z);
        self.data[i] = self.dtype.quantize(value);
    }

    /// Same grid with values converted to `dtype`.
    pub fn with_dtype(&self, dtype: DType) -> Volume {
        let data = self.data.iter().map(|&v| dtype.quantize(v)).collect();
        Volume::from_raw(self.dims, self.spacing, dtype, data)
    }

    pub fn map<F: Fn(f32) -> f32 + Sync>(&self, dtype: DType, f: F) -> Result<Volume> {
        let data = self.data.par_iter().map(|&v| f(v)).collect();
        Volume::new(self.dims, self.spacing, dtype, data)
    }

    pub fn same_grid(&self, other: &Volume) -> bool {
        self.dims == other.dims && self.spacing == other.spacing
    }

    pub(crate) fn ensure_same_grid(&self, other: &Volume, what: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!(
                "{what}: dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        if self.spacing != other.spacing {
            return Err(Error::Shape(format!(
                "{what}: spacing {:?} vs {:?}",
                self.spacing, other.spacing
            )));
        }
        Ok(())
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub(crate) fn ensure_binary(&self, what: &str) -> Result<()> {
        if self.is_binary() {
            Ok(())
        } else {
            Err(Error::Domain(format!("{what}: expected a binary {{0,1}} volume")))
        }
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        let mean = self.mean();
        let var = self
            .data
            .iter()
            .map(|&v| {
                let d = v as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / self.data.len() as f64;
        var.sqrt()
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Coordinates of all nonzero voxels in storage order.
    pub fn nonzero_coords(&self) -> Vec<[usize; 3]> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| self.coords(i))
            .collect()
    }
}

/// Sub-box of a volume, in voxel indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRegion {
    pub origin: [usize; 3],
    pub size: [usize; 3],
}

impl PatchRegion {
    pub fn new(origin: [usize; 3], size: [usize; 3]) -> Self {
        Self { origin, size }
    }

    pub fn full(dims: Dims) -> Self {
        Self {
            origin: [0; 3],
            size: dims,
        }
    }

    /// Region of `size` centered on `center`, shifted to stay inside `dims`.
    pub fn centered(center: [usize; 3], size: [usize; 3], dims: Dims) -> Result<Self> {
        let mut origin = [0; 3];
        for a in 0..3 {
            if size[a] > dims[a] {
                return Err(Error::Bounds {
                    axis: AXES[a],
                    origin: 0,
                    size: size[a],
                    extent: dims[a],
                });
            }
            let half = size[a] / 2;
            origin[a] = center[a].saturating_sub(half).min(dims[a] - size[a]);
        }
        Ok(Self { origin, size })
    }
}

pub(crate) const AXES: [char; 3] = ['x', 'y', 'z'];

/// Copies `region` out of `v` verbatim.
pub fn crop(v: &Volume, region: &PatchRegion) -> Result<Volume> {
    for a in 0..3 {
        if region.size[a] == 0 {
            return Err(Error::Parameter(format!("crop size on {} is zero", AXES[a])));
        }
        if region.origin[a] + region.size[a] > v.dims[a] {
            return Err(Error::Bounds {
                axis: AXES[a],
                origin: region.origin[a],
                size: region.size[a],
                extent: v.dims[a],
            });
        }
    }
    let [ox, oy, oz] = region.origin;
    let [sx, sy, sz] = region.size;
    let mut data = Vec::with_capacity(sx * sy * sz);
    for z in 0..sz {
        for y in 0..sy {
            let start = v.index(ox, oy + y, oz + z);
            data.extend_from_slice(&v.data[start..start + sx]);
        }
    }
    Ok(Volume::from_raw(region.size, v.spacing, v.dtype, data))
}

/// Voxelwise maximum of two volumes on the same grid. The wider dtype wins.
pub fn max_composite(base: &Volume, overlay: &Volume) -> Result<Volume> {
    base.ensure_same_grid(overlay, "max_composite")?;
    let dtype = wider(base.dtype, overlay.dtype);
    let data = base
        .data
        .iter()
        .zip(&overlay.data)
        .map(|(&a, &b)| a.max(b))
        .collect();
    Ok(Volume::from_raw(base.dims, base.spacing, dtype, data))
}

fn wider(a: DType, b: DType) -> DType {
    use DType::*;
    match (a, b) {
        (Float32, _) | (_, Float32) => Float32,
        (Uint16, _) | (_, Uint16) => Uint16,
        _ => Uint8,
    }
}

/// Normalized 1D Gaussian taps truncated at ±ceil(4σ).
pub fn gaussian_kernel_1d(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as i64;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable 3D Gaussian blur with edge replication. Output is `float32`.
pub fn gaussian_filter_3d(v: &Volume, sigma: f64) -> Result<Volume> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Parameter(format!("gaussian sigma must be > 0, got {sigma}")));
    }
    let taps: Vec<f32> = gaussian_kernel_1d(sigma).iter().map(|&t| t as f32).collect();
    let mut data = v.data.clone();
    for axis in 0..3 {
        data = convolve_axis(&data, v.dims, axis, &taps);
    }
    Ok(Volume::from_raw(v.dims, v.spacing, DType::Float32, data))
}

/// Convolves along one axis with an odd-length symmetric kernel, clamping
/// indices at the borders. Each output voxel is accumulated in tap order, so
/// the result does not depend on thread scheduling.
pub(crate) fn convolve_axis(src: &[f32], dims: Dims, axis: usize, taps: &[f32]) -> Vec<f32> {
    let [nx, ny, nz] = dims;
    let radius = (taps.len() / 2) as i64;
    let slab = nx * ny;
    let mut out = vec![0.0f32; src.len()];
    match axis {
        0 => {
            out.par_chunks_mut(nx).enumerate().for_each(|(row, dst)| {
                let line = &src[row * nx..(row + 1) * nx];
                for (x, d) in dst.iter_mut().enumerate() {
                    let mut acc = 0.0f32;
                    for (k, &w) in taps.iter().enumerate() {
                        let xi = (x as i64 + k as i64 - radius).clamp(0, nx as i64 - 1) as usize;
                        acc += w * line[xi];
                    }
                    *d = acc;
                }
            });
        }
        1 => {
            out.par_chunks_mut(slab).enumerate().for_each(|(z, dst)| {
                let plane = &src[z * slab..(z + 1) * slab];
                for y in 0..ny {
                    let drow = &mut dst[y * nx..(y + 1) * nx];
                    for (k, &w) in taps.iter().enumerate() {
                        let yi = (y as i64 + k as i64 - radius).clamp(0, ny as i64 - 1) as usize;
                        let srow = &plane[yi * nx..(yi + 1) * nx];
                        for (d, &s) in drow.iter_mut().zip(srow) {
                            *d += w * s;
                        }
                    }
                }
            });
        }
        _ => {
            out.par_chunks_mut(slab).enumerate().for_each(|(z, dst)| {
                for (k, &w) in taps.iter().enumerate() {
                    let zi = (z as i64 + k as i64 - radius).clamp(0, nz as i64 - 1) as usize;
                    let splane = &src[zi * slab..(zi + 1) * slab];
                    for (d, &s) in dst.iter_mut().zip(splane) {
                        *d += w * s;
                    }
                }
            });
        }
    }
    out
}

//! Texture and sharpness metrics: GLCM (Haralick) features, variance of
//! Laplacian and Tenengrad.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Volume;

pub const DEFAULT_LEVELS: usize = 32;
pub const DEFAULT_DISTANCE: usize = 1;

/// The 13 direction offsets covering all 26 neighbors up to sign.
pub const GLCM_DIRECTIONS: [[i64; 3]; 13] = [
    [1, 0, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 1, 0],
    [1, -1, 0],
    [1, 0, 1],
    [1, 0, -1],
    [0, 1, 1],
    [0, 1, -1],
    [1, 1, 1],
    [1, 1, -1],
    [1, -1, 1],
    [1, -1, -1],
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Haralick {
    pub contrast: f64,
    pub correlation: f64,
    pub energy: f64,
    pub homogeneity: f64,
    pub entropy: f64,
    /// The quantized volume had zero variance, so correlation is reported as 0.
    pub correlation_undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureReport {
    pub haralick: Haralick,
    pub vol: f64,
    pub tenengrad: f64,
    pub quantization_levels: usize,
    pub glcm_distance: usize,
}

/// Min-max quantization to `levels` gray levels (all zero for a constant
/// volume).
pub fn quantize(v: &Volume, levels: usize) -> Vec<usize> {
    let (lo, hi) = v.min_max();
    let (lo, hi) = (lo as f64, hi as f64);
    if !(hi > lo) {
        return vec![0; v.len()];
    }
    let scale = levels as f64 / (hi - lo);
    v.data()
        .iter()
        .map(|&x| (((x as f64 - lo) * scale) as usize).min(levels - 1))
        .collect()
}

/// Symmetric, normalized co-occurrence matrix (row-major `levels²`)
/// accumulated over all 13 directions at `distance`.
pub fn glcm(v: &Volume, levels: usize, distance: usize) -> Result<Vec<f64>> {
    if !(8..=256).contains(&levels) {
        return Err(Error::Parameter(format!("levels must lie in [8, 256], got {levels}")));
    }
    if distance == 0 {
        return Err(Error::Parameter("GLCM distance must be >= 1".into()));
    }
    let dims = v.dims();
    if dims.iter().any(|&d| d < 2) {
        return Err(Error::Size(format!("GLCM needs at least 2 voxels per axis, got {dims:?}")));
    }
    let q = quantize(v, levels);
    let mut counts = vec![0u64; levels * levels];
    let d = distance as i64;
    for dir in GLCM_DIRECTIONS {
        let off = dir.map(|c| c * d);
        let range = |a: usize| {
            let n = dims[a] as i64;
            (0.max(-off[a]), n.min(n - off[a]))
        };
        let (rx, ry, rz) = (range(0), range(1), range(2));
        for z in rz.0..rz.1 {
            for y in ry.0..ry.1 {
                for x in rx.0..rx.1 {
                    let a = q[v.index(x as usize, y as usize, z as usize)];
                    let b = q[v.index((x + off[0]) as usize, (y + off[1]) as usize, (z + off[2]) as usize)];
                    counts[a * levels + b] += 1;
                    counts[b * levels + a] += 1;
                }
            }
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Size(format!("no voxel pairs at distance {distance} in {dims:?}")));
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Haralick features of a normalized symmetric co-occurrence matrix.
pub fn haralick_from_glcm(p: &[f64], levels: usize) -> Haralick {
    let (mut contrast, mut energy, mut homogeneity, mut entropy, mut mean) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..levels {
        for j in 0..levels {
            let pij = p[i * levels + j];
            if pij == 0.0 {
                continue;
            }
            let d2 = (i as f64 - j as f64).powi(2);
            contrast += d2 * pij;
            energy += pij * pij;
            homogeneity += pij / (1.0 + d2);
            entropy -= pij * pij.ln();
            mean += i as f64 * pij;
        }
    }
    let (mut var, mut cov) = (0.0, 0.0);
    for i in 0..levels {
        for j in 0..levels {
            let pij = p[i * levels + j];
            if pij == 0.0 {
                continue;
            }
            var += (i as f64 - mean).powi(2) * pij;
            cov += (i as f64 - mean) * (j as f64 - mean) * pij;
        }
    }
    let correlation_undefined = !(var > 0.0);
    Haralick {
        contrast,
        correlation: if correlation_undefined { 0.0 } else { cov / var },
        energy,
        homogeneity,
        entropy,
        correlation_undefined,
    }
}

pub fn glcm_features(v: &Volume, levels: usize, distance: usize) -> Result<Haralick> {
    Ok(haralick_from_glcm(&glcm(v, levels, distance)?, levels))
}

fn check_interior(v: &Volume, what: &str) -> Result<()> {
    if v.dims().iter().any(|&d| d < 3) {
        return Err(Error::Size(format!("{what} needs at least 3 voxels per axis, got {:?}", v.dims())));
    }
    Ok(())
}

fn population_variance(values: impl Iterator<Item = f64>) -> f64 {
    let vals: Vec<f64> = values.collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / vals.len() as f64
}

fn interior(v: &Volume) -> impl Iterator<Item = [usize; 3]> {
    let [nx, ny, nz] = v.dims();
    (1..nz - 1).flat_map(move |z| (1..ny - 1).flat_map(move |y| (1..nx - 1).map(move |x| [x, y, z])))
}

/// Variance of the 6-neighbor Laplacian over interior voxels.
pub fn variance_of_laplacian(v: &Volume) -> Result<f64> {
    check_interior(v, "variance of Laplacian")?;
    let g = |x: usize, y: usize, z: usize| v.get(x, y, z) as f64;
    Ok(population_variance(interior(v).map(|[x, y, z]| {
        g(x - 1, y, z) + g(x + 1, y, z) + g(x, y - 1, z) + g(x, y + 1, z) + g(x, y, z - 1) + g(x, y, z + 1)
            - 6.0 * g(x, y, z)
    })))
}

/// Mean squared 3D Sobel gradient magnitude over interior voxels.
pub fn tenengrad(v: &Volume) -> Result<f64> {
    check_interior(v, "Tenengrad")?;
    const SMOOTH: [f64; 3] = [1.0, 2.0, 1.0];
    const DERIV: [f64; 3] = [-1.0, 0.0, 1.0];
    let mut sum = 0.0;
    let mut count = 0usize;
    for [x, y, z] in interior(v) {
        let mut grad = [0.0f64; 3];
        for k in 0..3 {
            for j in 0..3 {
                for i in 0..3 {
                    let val = v.get(x + i - 1, y + j - 1, z + k - 1) as f64;
                    grad[0] += DERIV[i] * SMOOTH[j] * SMOOTH[k] * val;
                    grad[1] += SMOOTH[i] * DERIV[j] * SMOOTH[k] * val;
                    grad[2] += SMOOTH[i] * SMOOTH[j] * DERIV[k] * val;
                }
            }
        }
        sum += grad.iter().map(|g| g * g).sum::<f64>();
        count += 1;
    }
    Ok(sum / count as f64)
}

pub fn texture_report(v: &Volume, levels: usize, distance: usize) -> Result<TextureReport> {
    Ok(TextureReport {
        haralick: glcm_features(v, levels, distance)?,
        vol: variance_of_laplacian(v)?,
        tenengrad: tenengrad(v)?,
        quantization_levels: levels,
        glcm_distance: distance,
    })
}

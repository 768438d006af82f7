//! Naive reference implementations of the texture metrics.

use vamoforge::texture::{quantize, Haralick};
use vamoforge::Volume;

/// Naive GLCM: visit every ordered voxel pair at each of the 26 offsets
/// scaled by `distance`, which equals the symmetrized 13-direction count.
pub fn brute_glcm(v: &Volume, levels: usize, distance: i64) -> Vec<Vec<f64>> {
    let q = quantize(v, levels);
    let [nx, ny, nz] = v.dims().map(|d| d as i64);
    let mut m = vec![vec![0.0; levels]; levels];
    let mut total = 0.0;
    for dz in -1..=1i64 {
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                if (dx, dy, dz) == (0, 0, 0) {
                    continue;
                }
                for z in 0..nz {
                    for y in 0..ny {
                        for x in 0..nx {
                            let (x2, y2, z2) = (x + dx * distance, y + dy * distance, z + dz * distance);
                            if x2 < 0 || y2 < 0 || z2 < 0 || x2 >= nx || y2 >= ny || z2 >= nz {
                                continue;
                            }
                            let a = q[v.index(x as usize, y as usize, z as usize)];
                            let b = q[v.index(x2 as usize, y2 as usize, z2 as usize)];
                            m[a][b] += 1.0;
                            total += 1.0;
                        }
                    }
                }
            }
        }
    }
    for row in &mut m {
        for c in row.iter_mut() {
            *c /= total;
        }
    }
    m
}

/// Textbook Haralick features using row and column marginals.
pub fn brute_haralick(p: &[Vec<f64>]) -> [f64; 5] {
    let n = p.len();
    let px: Vec<f64> = (0..n).map(|i| p[i].iter().sum()).collect();
    let py: Vec<f64> = (0..n).map(|j| (0..n).map(|i| p[i][j]).sum()).collect();
    let mux: f64 = (0..n).map(|i| i as f64 * px[i]).sum();
    let muy: f64 = (0..n).map(|j| j as f64 * py[j]).sum();
    let sx = (0..n).map(|i| (i as f64 - mux).powi(2) * px[i]).sum::<f64>().sqrt();
    let sy = (0..n).map(|j| (j as f64 - muy).powi(2) * py[j]).sum::<f64>().sqrt();
    let (mut contrast, mut corr, mut energy, mut homog, mut entropy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let v = p[i][j];
            let d = i as f64 - j as f64;
            contrast += d * d * v;
            corr += (i as f64 - mux) * (j as f64 - muy) * v;
            energy += v * v;
            homog += v / (1.0 + d * d);
            if v > 0.0 {
                entropy -= v * v.ln();
            }
        }
    }
    let corr = if sx * sy > 0.0 { corr / (sx * sy) } else { 0.0 };
    [contrast, corr, energy, homog, entropy]
}

pub fn as_array(h: &Haralick) -> [f64; 5] {
    [h.contrast, h.correlation, h.energy, h.homogeneity, h.entropy]
}

pub fn brute_vol(v: &Volume) -> f64 {
    let [nx, ny, nz] = v.dims();
    let mut responses = Vec::new();
    for z in 1..nz - 1 {
        for y in 1..ny - 1 {
            for x in 1..nx - 1 {
                let mut acc = 0.0;
                for (dx, dy, dz, w) in [
                    (0i64, 0i64, 0i64, -6.0),
                    (-1, 0, 0, 1.0),
                    (1, 0, 0, 1.0),
                    (0, -1, 0, 1.0),
                    (0, 1, 0, 1.0),
                    (0, 0, -1, 1.0),
                    (0, 0, 1, 1.0),
                ] {
                    let p = [x as i64 + dx, y as i64 + dy, z as i64 + dz];
                    acc += w * v.get_signed(p).unwrap() as f64;
                }
                responses.push(acc);
            }
        }
    }
    let n = responses.len() as f64;
    let mean = responses.iter().sum::<f64>() / n;
    responses.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n
}

/// Full 3x3x3 Sobel kernels built as outer products.
pub fn sobel_kernels() -> [[[[f64; 3]; 3]; 3]; 3] {
    let s = [1.0, 2.0, 1.0];
    let d = [-1.0, 0.0, 1.0];
    let mut k = [[[[0.0; 3]; 3]; 3]; 3];
    for a in 0..3 {
        for i in 0..3 {
            for j in 0..3 {
                for l in 0..3 {
                    let f = |axis: usize, idx: usize| if axis == a { d[idx] } else { s[idx] };
                    k[a][l][j][i] = f(0, i) * f(1, j) * f(2, l);
                }
            }
        }
    }
    k
}

pub fn brute_tenengrad(v: &Volume) -> f64 {
    let k = sobel_kernels();
    let [nx, ny, nz] = v.dims();
    let (mut sum, mut n) = (0.0, 0.0);
    for z in 1..nz - 1 {
        for y in 1..ny - 1 {
            for x in 1..nx - 1 {
                let mut mag = 0.0;
                for kern in &k {
                    let mut g = 0.0;
                    for l in 0..3 {
                        for j in 0..3 {
                            for i in 0..3 {
                                g += kern[l][j][i] * v.get(x + i - 1, y + j - 1, z + l - 1) as f64;
                            }
                        }
                    }
                    mag += g * g;
                }
                sum += mag;
                n += 1.0;
            }
        }
    }
    sum / n
}

//! Exact Euclidean distance transform (separable lower-envelope method).

use crate::volume::Volume;

/// Squared distance from each foreground voxel to the nearest in-grid
/// background voxel center, in voxel units. Background voxels get 0. If the
/// grid has no background at all every value is `f64::INFINITY`.
pub fn squared_edt(mask: &Volume) -> Vec<f64> {
    let [nx, ny, nz] = mask.dims();
    let mut f: Vec<f64> = mask
        .data()
        .iter()
        .map(|&v| if v != 0.0 { f64::INFINITY } else { 0.0 })
        .collect();
    let stride = [1, nx, nx * ny];
    let dims = [nx, ny, nz];
    let mut line = Vec::new();
    let mut out = Vec::new();
    for axis in 0..3 {
        let n = dims[axis];
        let (o1, o2) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for b in 0..dims[o2] {
            for a in 0..dims[o1] {
                let base = a * stride[o1] + b * stride[o2];
                line.clear();
                line.extend((0..n).map(|i| f[base + i * stride[axis]]));
                lower_envelope(&line, &mut out);
                for i in 0..n {
                    f[base + i * stride[axis]] = out[i];
                }
            }
        }
    }
    f
}

/// 1D squared distance transform of sampled function `f` (Felzenszwalb &
/// Huttenlocher).
fn lower_envelope(f: &[f64], out: &mut Vec<f64>) {
    let n = f.len();
    out.clear();
    out.resize(n, f64::INFINITY);
    let sites: Vec<usize> = (0..n).filter(|&i| f[i].is_finite()).collect();
    if sites.is_empty() {
        return;
    }
    let mut v: Vec<usize> = Vec::with_capacity(sites.len());
    let mut z: Vec<f64> = Vec::with_capacity(sites.len() + 1);
    let inter = |q: usize, p: usize| -> f64 {
        let (qf, pf) = (q as f64, p as f64);
        ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * (qf - pf))
    };
    for &q in &sites {
        loop {
            match v.last() {
                Some(&p) => {
                    let s = inter(q, p);
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
            }
        }
    }
    let mut k = 0;
    for (i, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < i as f64 {
            k += 1;
        }
        let d = i as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

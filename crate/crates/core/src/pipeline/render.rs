//! PNG slice export with optional label overlays.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::volume::Volume;

pub const VESSEL_TINT: [u8; 3] = [0, 200, 0];
pub const ANEURYSM_TINT: [u8; 3] = [40, 90, 255];
const TINT_WEIGHT: f32 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            _ => Err(Error::Parameter(format!("axis must be x, y or z, got {s:?}"))),
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    fn name(self) -> char {
        ['x', 'y', 'z'][self.index()]
    }
}

/// Slice `k` along `axis` as (width, height, voxel indices row-major).
fn slice_indices(v: &Volume, axis: Axis, k: usize) -> (u32, u32, Vec<usize>) {
    let [nx, ny, nz] = v.dims();
    let (w, h) = match axis {
        Axis::X => (ny, nz),
        Axis::Y => (nx, nz),
        Axis::Z => (nx, ny),
    };
    let mut idx = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            idx.push(match axis {
                Axis::X => v.index(k, col, row),
                Axis::Y => v.index(col, k, row),
                Axis::Z => v.index(col, row, k),
            });
        }
    }
    (w as u32, h as u32, idx)
}

fn blend(gray: u8, tint: [u8; 3]) -> Rgb<u8> {
    Rgb(tint.map(|c| ((1.0 - TINT_WEIGHT) * gray as f32 + TINT_WEIGHT * c as f32).round() as u8))
}

/// Writes every slice along `axis` as an 8-bit grayscale PNG (windowed to the
/// volume's min/max) and, when masks are given, an RGB overlay with vessel
/// voxels tinted green and aneurysm voxels tinted blue.
pub fn render_slices(
    intensity: &Volume,
    vessel: Option<&Volume>,
    ica: Option<&Volume>,
    axis: Axis,
    out_dir: &Path,
    prefix: &str,
) -> Result<Vec<PathBuf>> {
    for m in [vessel, ica].into_iter().flatten() {
        intensity.ensure_same_grid(m, "render_slices")?;
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (lo, hi) = intensity.min_max();
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    let gray_of = |v: f32| ((v - lo) * scale).round().clamp(0.0, 255.0) as u8;
    let mut written = Vec::new();
    for k in 0..intensity.dims()[axis.index()] {
        let (w, h, idx) = slice_indices(intensity, axis, k);
        let gray: Vec<u8> = idx.iter().map(|&i| gray_of(intensity.data()[i])).collect();
        let img = GrayImage::from_fn(w, h, |x, y| Luma([gray[(y * w + x) as usize]]));
        let path = out_dir.join(format!("{prefix}_{}{k:03}.png", axis.name()));
        img.save(&path)?;
        written.push(path);
        if vessel.is_none() && ica.is_none() {
            continue;
        }
        let overlay = RgbImage::from_fn(w, h, |x, y| {
            let j = (y * w + x) as usize;
            let i = idx[j];
            let g = gray[j];
            if ica.is_some_and(|m| m.data()[i] != 0.0) {
                blend(g, ANEURYSM_TINT)
            } else if vessel.is_some_and(|m| m.data()[i] != 0.0) {
                blend(g, VESSEL_TINT)
            } else {
                Rgb([g, g, g])
            }
        });
        let path = out_dir.join(format!("{prefix}_{}{k:03}_overlay.png", axis.name()));
        overlay.save(&path)?;
        written.push(path);
    }
    Ok(written)
}

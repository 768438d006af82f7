//! Digital connectivity on the voxel lattice.

use crate::volume::Volume;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Six,
    TwentySix,
}

/// The 26 neighbor offsets in (dz, dy, dx)-major scan order.
pub const N26: [[i64; 3]; 26] = {
    let mut out = [[0i64; 3]; 26];
    let mut n = 0;
    let mut dz = -1;
    while dz <= 1 {
        let mut dy = -1;
        while dy <= 1 {
            let mut dx = -1;
            while dx <= 1 {
                if !(dx == 0 && dy == 0 && dz == 0) {
                    out[n] = [dx, dy, dz];
                    n += 1;
                }
                dx += 1;
            }
            dy += 1;
        }
        dz += 1;
    }
    out
};

pub const N6: [[i64; 3]; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

impl Connectivity {
    pub fn offsets(self) -> &'static [[i64; 3]] {
        match self {
            Connectivity::Six => &N6,
            Connectivity::TwentySix => &N26,
        }
    }
}

#[inline]
pub fn offset(p: [usize; 3], d: [i64; 3]) -> [i64; 3] {
    [p[0] as i64 + d[0], p[1] as i64 + d[1], p[2] as i64 + d[2]]
}

/// Labels connected nonzero regions. Returns per-voxel labels (0 = background,
/// components numbered from 1 in scan order) and the component count.
pub fn label_components(mask: &Volume, conn: Connectivity) -> (Vec<u32>, usize) {
    let dims = mask.dims();
    let data = mask.data();
    let mut labels = vec![0u32; data.len()];
    let mut count = 0u32;
    let mut stack = Vec::new();
    for start in 0..data.len() {
        if data[start] == 0.0 || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let p = mask.coords(i);
            for &d in conn.offsets() {
                let q = offset(p, d);
                if !(0..3).all(|a| q[a] >= 0 && (q[a] as usize) < dims[a]) {
                    continue;
                }
                let j = mask.index(q[0] as usize, q[1] as usize, q[2] as usize);
                if data[j] != 0.0 && labels[j] == 0 {
                    labels[j] = count;
                    stack.push(j);
                }
            }
        }
    }
    (labels, count as usize)
}

pub fn count_components(mask: &Volume, conn: Connectivity) -> usize {
    label_components(mask, conn).1
}

/// Number of 6-connected background components, with the space outside the
/// grid counted as one background region that touches every border voxel.
pub fn count_background_components(mask: &Volume) -> usize {
    let [nx, ny, nz] = mask.dims();
    let padded = Volume::from_raw(
        [nx + 2, ny + 2, nz + 2],
        mask.spacing(),
        crate::volume::DType::Uint8,
        {
            let mut d = vec![1.0f32; (nx + 2) * (ny + 2) * (nz + 2)];
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx {
                        if mask.get(x, y, z) != 0.0 {
                            d[(x + 1) + (nx + 2) * ((y + 1) + (ny + 2) * (z + 1))] = 0.0;
                        }
                    }
                }
            }
            d
        },
    );
    count_components(&padded, Connectivity::Six)
}

/// True when the nonzero voxels of `mask` form exactly one component.
pub fn is_single_component(mask: &Volume, conn: Connectivity) -> bool {
    count_components(mask, conn) == 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::DType;

    #[test]
    fn counts_components_by_connectivity() {
        let mut v = Volume::zeros([5, 5, 5], [1.0; 3], DType::Uint8).unwrap();
        v.set(1, 1, 1, 1.0);
        v.set(2, 2, 2, 1.0);
        assert_eq!(count_components(&v, Connectivity::TwentySix), 1);
        assert_eq!(count_components(&v, Connectivity::Six), 2);
        assert_eq!(count_background_components(&v), 1);
    }

    #[test]
    fn hollow_cube_has_two_background_regions() {
        let v = Volume::mask_from_fn([5, 5, 5], [1.0; 3], |x, y, z| {
            [x, y, z].iter().all(|&c| (1..=3).contains(&c)) && !(x == 2 && y == 2 && z == 2)
        })
        .unwrap();
        assert_eq!(count_background_components(&v), 2);
        assert_eq!(count_components(&v, Connectivity::TwentySix), 1);
    }
}

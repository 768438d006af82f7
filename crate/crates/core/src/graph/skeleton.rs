//! Topology-preserving curve thinning (26-connected foreground, 6-connected
//! background) with six directional sub-iterations.

use crate::error::Result;
use crate::volume::{DType, Volume};

/// Bit positions in a 3x3x3 neighborhood: index = (dx+1) + 3(dy+1) + 9(dz+1).
const CENTER: usize = 13;

struct NeighborTables {
    /// For each cube position, mask of 26-adjacent positions (center excluded).
    adj26: [u32; 27],
    /// For each position of N18, mask of 6-adjacent N18 positions.
    adj6: [u32; 27],
    n18: u32,
    n6: u32,
}

fn cube_pos(i: usize) -> [i32; 3] {
    [(i % 3) as i32 - 1, ((i / 3) % 3) as i32 - 1, (i / 9) as i32 - 1]
}

fn tables() -> &'static NeighborTables {
    use std::sync::OnceLock;
    static TABLES: OnceLock<NeighborTables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let mut t = NeighborTables {
            adj26: [0; 27],
            adj6: [0; 27],
            n18: 0,
            n6: 0,
        };
        for i in 0..27 {
            let p = cube_pos(i);
            let l1: i32 = p.iter().map(|c| c.abs()).sum();
            if i != CENTER && l1 <= 2 {
                t.n18 |= 1 << i;
            }
            if l1 == 1 {
                t.n6 |= 1 << i;
            }
        }
        for i in 0..27 {
            if i == CENTER {
                continue;
            }
            let p = cube_pos(i);
            for j in 0..27 {
                if j == CENTER || j == i {
                    continue;
                }
                let q = cube_pos(j);
                let d: Vec<i32> = (0..3).map(|a| (p[a] - q[a]).abs()).collect();
                if d.iter().all(|&c| c <= 1) {
                    t.adj26[i] |= 1 << j;
                }
                if d.iter().sum::<i32>() == 1 {
                    t.adj6[i] |= 1 << j;
                }
            }
        }
        t
    })
}

fn flood(seed_bit: u32, within: u32, adj: &[u32; 27]) -> u32 {
    let mut reached = seed_bit;
    let mut frontier = seed_bit;
    while frontier != 0 {
        let i = frontier.trailing_zeros() as usize;
        frontier &= frontier - 1;
        let next = adj[i] & within & !reached;
        reached |= next;
        frontier |= next;
    }
    reached
}

/// Simple-point test for (26, 6) topology on a neighborhood bitmask
/// (bit set = foreground; the center bit is ignored).
pub(crate) fn is_simple(nbhd: u32) -> bool {
    let t = tables();
    let fg = nbhd & !(1 << CENTER) & ((1 << 27) - 1);
    if fg == 0 {
        return false;
    }
    // Exactly one 26-component of foreground in N26*.
    let first = 1 << fg.trailing_zeros();
    if flood(first, fg, &t.adj26) != fg {
        return false;
    }
    // Exactly one 6-component of background in N18* that is 6-adjacent to the center.
    let bg = !fg & t.n18;
    let mut faces = bg & t.n6;
    if faces == 0 {
        return false;
    }
    let first = 1 << faces.trailing_zeros();
    let comp = flood(first, bg, &t.adj6);
    faces &= !comp;
    faces == 0
}

/// Thins a binary mask to one-voxel-thick medial curves.
///
/// Deletion order is fixed (sub-iteration direction, then scan order), so the
/// result is deterministic.
pub fn skeletonize(mask: &Volume) -> Result<Volume> {
    mask.ensure_binary("skeletonize")?;
    let [nx, ny, nz] = mask.dims();
    let (px, py) = (nx + 2, ny + 2);
    let pidx = |x: usize, y: usize, z: usize| x + px * (y + py * z);
    let mut img = vec![0u8; px * py * (nz + 2)];
    let mut live = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if mask.get(x, y, z) != 0.0 {
                    let i = pidx(x + 1, y + 1, z + 1);
                    img[i] = 1;
                    live.push(i);
                }
            }
        }
    }
    let cube: [isize; 27] = {
        let mut c = [0isize; 27];
        for (i, slot) in c.iter_mut().enumerate() {
            let p = cube_pos(i);
            *slot = p[0] as isize + px as isize * (p[1] as isize + py as isize * p[2] as isize);
        }
        c
    };
    let neighborhood = |img: &[u8], i: usize| -> u32 {
        let mut bits = 0u32;
        for (k, &o) in cube.iter().enumerate() {
            if img[(i as isize + o) as usize] != 0 {
                bits |= 1 << k;
            }
        }
        bits
    };
    let n26_count = |bits: u32| (bits & !(1 << CENTER)).count_ones();
    // Sub-iteration order: -y, +y, +x, -x, +z, -z border points.
    let directions: [isize; 6] = [
        -(px as isize),
        px as isize,
        1,
        -1,
        (px * py) as isize,
        -((px * py) as isize),
    ];
    let mut candidates = Vec::new();
    loop {
        let mut changed = false;
        for &dir in &directions {
            candidates.clear();
            for &i in &live {
                if img[(i as isize + dir) as usize] != 0 {
                    continue;
                }
                let bits = neighborhood(&img, i);
                if n26_count(bits) > 1 && is_simple(bits) {
                    candidates.push(i);
                }
            }
            for &i in &candidates {
                let bits = neighborhood(&img, i);
                if n26_count(bits) > 1 && is_simple(bits) {
                    img[i] = 0;
                    changed = true;
                }
            }
            if changed {
                live.retain(|&i| img[i] != 0);
            }
        }
        if !changed {
            break;
        }
    }
    let mut data = vec![0.0f32; nx * ny * nz];
    for &i in &live {
        let x = i % px - 1;
        let y = (i / px) % py - 1;
        let z = i / (px * py) - 1;
        data[x + nx * (y + ny * z)] = 1.0;
    }
    Ok(Volume::from_raw(mask.dims(), mask.spacing(), DType::Uint8, data))
}

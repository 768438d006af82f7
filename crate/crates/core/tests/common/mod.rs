#![allow(dead_code)]

pub mod oracle;

use vamoforge::graph::{extract_graph, VascularGraph};
use vamoforge::pipeline::phantom::Phantom;
use vamoforge::Volume;

pub fn dice(a: &Volume, b: &Volume) -> f64 {
    let (mut both, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (x, y) in a.data().iter().zip(b.data()) {
        let (x, y) = (*x != 0.0, *y != 0.0);
        na += x as usize;
        nb += y as usize;
        both += (x && y) as usize;
    }
    2.0 * both as f64 / (na + nb).max(1) as f64
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Distance from `p` to the segment `a`-`b`.
pub fn segment_distance(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let v = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let w = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let l2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    let t = ((w[0] * v[0] + w[1] * v[1] + w[2] * v[2]) / l2).clamp(0.0, 1.0);
    dist(p, [a[0] + t * v[0], a[1] + t * v[1], a[2] + t * v[2]])
}

/// Fraction of interior centerline points whose estimated radius lies within
/// `tol` of the radius of the phantom tube they belong to. Points within
/// `2 r_max + 1` of any tube end or junction, or whose tube cross-section
/// reaches a volume face, are not interior.
pub fn radius_agreement(graph: &VascularGraph, phantom: &Phantom, tol: f64) -> (usize, f64) {
    let dims = phantom.mask.dims();
    let rmax = phantom.segments.iter().map(|s| s.ra.max(s.rb)).fold(0.0, f64::max);
    let margin = 2.0 * rmax + 1.0;
    let (mut n, mut ok) = (0usize, 0usize);
    for b in &graph.branches {
        for (p, r) in b.path.iter().zip(&b.radii) {
            let q = p.map(|c| c as f64);
            let near_end = phantom
                .segments
                .iter()
                .any(|s| dist(q, s.a) < margin || dist(q, s.b) < margin);
            if near_end {
                continue;
            }
            let seg = phantom
                .segments
                .iter()
                .min_by(|s, t| segment_distance(q, s.a, s.b).total_cmp(&segment_distance(q, t.a, t.b)))
                .unwrap();
            let l = dist(seg.a, seg.b);
            let t = if l > 0.0 { ((q[0] - seg.a[0]) * (seg.b[0] - seg.a[0]) + (q[1] - seg.a[1]) * (seg.b[1] - seg.a[1]) + (q[2] - seg.a[2]) * (seg.b[2] - seg.a[2])) / (l * l) } else { 0.0 };
            let want = seg.ra + (seg.rb - seg.ra) * t.clamp(0.0, 1.0);
            if (0..3).any(|a| q[a] < want + 1.0 || q[a] + want + 1.0 > dims[a] as f64 - 1.0) {
                continue;
            }
            n += 1;
            ok += ((r - want).abs() <= tol) as usize;
        }
    }
    (n, if n == 0 { 0.0 } else { ok as f64 / n as f64 })
}

pub fn graph_of(phantom: &Phantom) -> VascularGraph {
    extract_graph(&phantom.mask).unwrap()
}

pub fn degree_counts(g: &VascularGraph) -> [usize; 4] {
    let mut c = [0; 4];
    for n in &g.nodes {
        c[n.degree.min(3)] += 1;
    }
    c
}

mod common;

use common::{degree_counts, graph_of, radius_agreement};
use rand::Rng;
use vamoforge::graph::{build_graph, estimate_radii, prune_spurs, select_bifurcation, skeletonize, DEFAULT_PRUNE_FACTOR};
use vamoforge::pipeline::phantom::{cylinder, rasterize_segments, y_phantom, TubeSegment, YParams};
use vamoforge::rng::rng_from_seed;
use vamoforge::topology::{count_components, Connectivity};
use vamoforge::{DType, Volume};

fn tube(a: [f64; 3], b: [f64; 3], ra: f64, rb: f64) -> TubeSegment {
    TubeSegment { a, b, ra, rb, cap_a: true, cap_b: true }
}

fn background(mask: &Volume) -> Volume {
    mask.map(DType::Uint8, |v| if v == 0.0 { 1.0 } else { 0.0 }).unwrap()
}

#[test]
fn cylinder_radius_three_is_one_chain() {
    let p = cylinder(3.0, 50.0, 0).unwrap();
    let skel = skeletonize(&p.mask).unwrap();
    let n = skel.count_nonzero();
    assert!((44..=52).contains(&n), "{n} skeleton voxels");
    let g = build_graph(&skel).unwrap();
    assert_eq!(g.branches.len(), 1);
    assert_eq!(degree_counts(&g), [0, 2, 0, 0]);
    let g = estimate_radii(&p.mask, &g).unwrap();
    let b = &g.branches[0];
    let mid = &b.radii[b.radii.len() / 4..3 * b.radii.len() / 4];
    assert!(mid.iter().all(|r| (2.5..=3.5).contains(r)), "{mid:?}");
}

#[test]
fn thin_cylinder_radius_is_about_one() {
    let p = cylinder(1.0, 30.0, 0).unwrap();
    let g = graph_of(&p);
    assert_eq!(g.branches.len(), 1);
    let b = &g.branches[0];
    let mid = &b.radii[3..b.radii.len() - 3];
    assert!(mid.iter().all(|r| (0.5..=1.5).contains(r)), "{mid:?}");
}

#[test]
fn cylinder_radii_within_half_voxel() {
    for rho in 1..=5 {
        let p = cylinder(rho as f64, 40.0, 0).unwrap();
        let g = graph_of(&p);
        assert_eq!(g.branches.len(), 1, "rho {rho}");
        let (n, frac) = radius_agreement(&g, &p, 0.5);
        assert!(n > 10 && frac >= 0.9, "rho {rho}: {frac} over {n}");
    }
}

#[test]
fn cone_profile_is_non_increasing() {
    let mask = rasterize_segments(
        [60, 21, 21],
        [1.0; 3],
        &[TubeSegment { a: [5.0, 10.0, 10.0], b: [54.0, 10.0, 10.0], ra: 4.0, rb: 2.0, cap_a: false, cap_b: false }],
    )
    .unwrap();
    let g = extract_single(&mask);
    let b = &g.branches[0];
    let (path, radii) = if b.path[0][0] < b.path[b.path.len() - 1][0] {
        (b.path.clone(), b.radii.clone())
    } else {
        (b.path.iter().rev().cloned().collect(), b.radii.iter().rev().cloned().collect::<Vec<_>>())
    };
    let interior: Vec<(f64, f64)> = path
        .iter()
        .zip(&radii)
        .filter(|(p, _)| (10..=49).contains(&p[0]))
        .map(|(p, r)| (p[0] as f64, *r))
        .collect();
    for w in interior.windows(2) {
        assert!(w[1].1 <= w[0].1 + 0.5, "{w:?}");
    }
    let (first, last) = (interior[0].1, interior[interior.len() - 1].1);
    assert!(first > last + 1.0, "{first} -> {last}");
}

fn extract_single(mask: &Volume) -> vamoforge::graph::VascularGraph {
    let g = vamoforge::graph::extract_graph(mask).unwrap();
    assert_eq!(g.branches.len(), 1);
    g
}

#[test]
fn y_phantom_has_one_junction_and_three_ends() {
    let params = YParams { radii: [2.0; 3], theta_deg: 120.0, ..YParams::default() };
    let p = y_phantom(&params, 0).unwrap();
    let g = graph_of(&p);
    assert_eq!(g.branches.len(), 3);
    assert_eq!(degree_counts(&g), [0, 3, 0, 1]);
}

#[test]
fn default_y_phantom_mother_is_thickest() {
    let p = y_phantom(&YParams::default(), 0).unwrap();
    let g = graph_of(&p);
    assert_eq!(degree_counts(&g), [0, 3, 0, 1]);
    let node = g.nodes_with_degree(3).next().unwrap().id;
    let site = select_bifurcation(&g, node).unwrap();
    let mother = g.branch(site.mother_branch_id).unwrap();
    // The mother arm points along -y from the center.
    let far = mother.path.iter().map(|p| p[1]).min().unwrap();
    assert!(far < 20, "mother reaches y = {far}");
}

#[test]
fn random_y_phantoms_round_trip() {
    for seed in 0..10 {
        let params = YParams::random(seed);
        let p = y_phantom(&params, seed).unwrap();
        let g = graph_of(&p);
        assert_eq!(g.branches.len(), 3, "seed {seed}");
        assert_eq!(degree_counts(&g), [0, 3, 0, 1], "seed {seed}");
        let (n, frac) = radius_agreement(&g, &p, 0.5);
        assert!(n > 20 && frac >= 0.85, "seed {seed}: {frac} over {n}");
    }
}

#[test]
fn spur_at_junction_is_pruned() {
    let params = YParams { radii: [2.0; 3], theta_deg: 120.0, ..YParams::default() };
    let p = y_phantom(&params, 0).unwrap();
    let mut skel = skeletonize(&p.mask).unwrap();
    let raw = build_graph(&skel).unwrap();
    let node = raw.nodes_with_degree(3).next().unwrap().pos;
    // The arms lie in the z = 32 plane, so a whisker along +z touches only the node.
    let whisker = [[node[0], node[1], node[2] + 1], [node[0], node[1], node[2] + 2]];
    for q in whisker {
        assert_eq!(skel.at(q), 0.0);
        skel.set(q[0], q[1], q[2], 1.0);
    }
    let spurred = estimate_radii(&p.mask, &build_graph(&skel).unwrap()).unwrap();
    assert_eq!(spurred.branches.len(), 4);
    let pruned = prune_spurs(&spurred, DEFAULT_PRUNE_FACTOR).unwrap();
    assert_eq!(pruned.branches.len(), 3);
    assert_eq!(degree_counts(&pruned), [0, 3, 0, 1]);
    assert_eq!(prune_spurs(&pruned, DEFAULT_PRUNE_FACTOR).unwrap(), pruned);
    assert_eq!(prune_spurs(&spurred, 0.0).unwrap(), spurred);
}

fn random_tube_union(seed: u64) -> Volume {
    let mut rng = rng_from_seed(seed);
    let n = rng.random_range(1..=4);
    let segs: Vec<TubeSegment> = (0..n)
        .map(|_| {
            let mut a = [0.0; 3];
            let mut b = [0.0; 3];
            for i in 0..3 {
                a[i] = rng.random_range(6.0..34.0);
                b[i] = rng.random_range(6.0..34.0);
            }
            let r = rng.random_range(1.0..3.0);
            tube(a, b, r, r)
        })
        .collect();
    rasterize_segments([40; 3], [1.0; 3], &segs).unwrap()
}

#[test]
fn skeletonization_preserves_topology() {
    for seed in 0..50 {
        let mask = random_tube_union(seed);
        let skel = skeletonize(&mask).unwrap();
        assert!(skel.data().iter().zip(mask.data()).all(|(s, m)| *s == 0.0 || *m != 0.0));
        assert_eq!(count_components(&skel, Connectivity::TwentySix), count_components(&mask, Connectivity::TwentySix), "seed {seed}");
        assert_eq!(
            count_components(&background(&skel), Connectivity::Six),
            count_components(&background(&mask), Connectivity::Six),
            "seed {seed}"
        );
    }
}

#[test]
fn graph_partitions_skeleton_and_degrees_match() {
    for seed in 0..20 {
        let mask = random_tube_union(seed);
        let skel = skeletonize(&mask).unwrap();
        let g = build_graph(&skel).unwrap();
        let mut seen = std::collections::HashSet::new();
        for n in &g.nodes {
            for v in &n.voxels {
                assert!(seen.insert(*v), "seed {seed}: {v:?} repeated");
            }
            let incident: usize = g
                .branches
                .iter()
                .map(|b| b.ends.iter().filter(|e| **e == Some(n.id)).count())
                .sum();
            assert_eq!(incident, n.degree, "seed {seed}");
        }
        for b in &g.branches {
            for v in &b.path {
                assert!(seen.insert(*v), "seed {seed}: {v:?} repeated");
            }
            for w in b.path.windows(2) {
                assert!((0..3).all(|a| w[0][a].abs_diff(w[1][a]) <= 1));
            }
        }
        assert_eq!(seen.len(), skel.count_nonzero(), "seed {seed}");
    }
}

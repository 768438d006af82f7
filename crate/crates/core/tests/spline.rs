mod common;

use std::f64::consts::PI;

use vamoforge::graph::select_bifurcation;
use vamoforge::pipeline::phantom::{y_phantom, YParams};
use vamoforge::rng::rng_from_seed;
use vamoforge::spline::{
    evaluate_spline, fit_branch_spline, perturb_coefficients, recenter_branches, BranchSpline, NodeEnd, Point3,
    RecenterStatus, PINNED_END_COEFFS,
};

fn dist(a: Point3, b: Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn arc(n: usize, radius: f64) -> Vec<Point3> {
    (0..n)
        .map(|i| {
            let phi = i as f64 / radius;
            [radius * phi.cos(), radius * phi.sin(), 0.0]
        })
        .collect()
}

fn helix(n: usize) -> Vec<Point3> {
    let (r, pitch) = (10.0, 5.0);
    let c = pitch / (2.0 * PI);
    let dt = 1.0 / (r * r + c * c).sqrt();
    (0..n)
        .map(|i| {
            let t = i as f64 * dt;
            [r * t.cos(), r * t.sin(), c * t]
        })
        .collect()
}

fn lattice(points: &[Point3]) -> Vec<Point3> {
    points.iter().map(|p| p.map(f64::round)).collect()
}

#[test]
fn arc_fit_residual() {
    let fit = fit_branch_spline(&arc(40, 20.0), &[2.0; 40]).unwrap();
    assert!(fit.rms_residual <= 0.25, "{}", fit.rms_residual);
    let lattice_fit = fit_branch_spline(&lattice(&arc(40, 20.0)), &[2.0; 40]).unwrap();
    assert!(lattice_fit.rms_residual <= 0.5, "{}", lattice_fit.rms_residual);
}

#[test]
fn helix_fit_residual() {
    let fit = fit_branch_spline(&helix(60), &[2.0; 60]).unwrap();
    assert!(fit.rms_residual <= 0.75, "{}", fit.rms_residual);
    let lattice_fit = fit_branch_spline(&lattice(&helix(60)), &[2.0; 60]).unwrap();
    assert!(lattice_fit.rms_residual <= 0.75, "{}", lattice_fit.rms_residual);
}

#[test]
fn dense_arc_samples_stay_on_the_arc() {
    let fit = fit_branch_spline(&arc(40, 20.0), &[2.0; 40]).unwrap();
    let pts = evaluate_spline(&fit.spline, 100).unwrap();
    let worst = pts
        .iter()
        .map(|p| ((p[0] * p[0] + p[1] * p[1]).sqrt() - 20.0).abs().max(p[2].abs()))
        .fold(0.0, f64::max);
    assert!(worst <= fit.rms_residual + 0.1, "{worst}");
}

#[test]
fn line_samples_are_collinear() {
    let line: Vec<Point3> = (0..20).map(|i| [i as f64, 0.5 * i as f64, 3.0]).collect();
    let fit = fit_branch_spline(&line, &[1.0; 20]).unwrap();
    assert!(fit.rms_residual <= 1e-6);
    for p in evaluate_spline(&fit.spline, 10).unwrap() {
        assert!((p[1] - 0.5 * p[0]).abs() < 1e-9 && (p[2] - 3.0).abs() < 1e-9);
    }
}

#[test]
fn phantom_branches_fit_within_three_quarters_voxel() {
    for seed in 0..5 {
        let p = y_phantom(&YParams::random(seed), seed).unwrap();
        let g = common::graph_of(&p);
        for b in &g.branches {
            let path: Vec<Point3> = g.polyline(b).iter().map(|v| v.map(|c| c as f64)).collect();
            let fit = fit_branch_spline(&path, &g.polyline_radii(b)).unwrap();
            assert!(fit.rms_residual <= 0.75, "seed {seed}: {}", fit.rms_residual);
        }
    }
}

fn interior_rms_displacement(a: &BranchSpline, b: &BranchSpline) -> f64 {
    let n = a.coeffs.len();
    let range = PINNED_END_COEFFS..n - PINNED_END_COEFFS;
    let count = (range.len() * 3) as f64;
    let ss: f64 = range
        .map(|i| (0..3).map(|k| (a.coeffs[i][k] - b.coeffs[i][k]).powi(2)).sum::<f64>())
        .sum();
    (ss / count).sqrt()
}

#[test]
fn unit_weight_displaces_interior_coefficients_by_one() {
    let base = fit_branch_spline(&helix(60), &[2.0; 60]).unwrap().spline;
    let mean: f64 = (0..200)
        .map(|seed| {
            let p = perturb_coefficients(&base, 1.0, &mut rng_from_seed(seed)).unwrap();
            assert_eq!(p.knots, base.knots);
            assert_eq!(&p.coeffs[..PINNED_END_COEFFS], &base.coeffs[..PINNED_END_COEFFS]);
            interior_rms_displacement(&base, &p)
        })
        .sum::<f64>()
        / 200.0;
    assert!((mean - 1.0).abs() <= 0.1, "{mean}");
}

fn max_deviation(a: &BranchSpline, b: &BranchSpline) -> f64 {
    let pa = evaluate_spline(a, 200).unwrap();
    let pb = evaluate_spline(b, 200).unwrap();
    pa.iter().zip(&pb).map(|(x, y)| dist(*x, *y)).fold(0.0, f64::max)
}

#[test]
fn larger_weights_deviate_more() {
    let base = fit_branch_spline(&arc(40, 20.0), &[2.0; 40]).unwrap().spline;
    for seed in 0..20 {
        let weak = perturb_coefficients(&base, 0.5, &mut rng_from_seed(seed)).unwrap();
        let strong = perturb_coefficients(&base, 2.0, &mut rng_from_seed(seed)).unwrap();
        assert!(max_deviation(&base, &strong) > max_deviation(&base, &weak));
    }
}

#[test]
fn perturbation_is_reproducible() {
    let base = fit_branch_spline(&helix(60), &[2.0; 60]).unwrap().spline;
    let a = perturb_coefficients(&base, 1.5, &mut rng_from_seed(3)).unwrap();
    let b = perturb_coefficients(&base, 1.5, &mut rng_from_seed(3)).unwrap();
    assert_eq!(a, b);
}

fn y_splines(seed: u64) -> (Vec<BranchSpline>, Point3) {
    let p = y_phantom(&YParams::random(seed), seed).unwrap();
    let g = common::graph_of(&p);
    let node = g.nodes_with_degree(3).next().unwrap();
    let site = select_bifurcation(&g, node.id).unwrap();
    let ids = [site.mother_branch_id, site.daughter_branch_ids[0], site.daughter_branch_ids[1]];
    let splines = ids
        .iter()
        .map(|&id| {
            let b = g.branch(id).unwrap();
            let path: Vec<Point3> = g.polyline(b).iter().map(|v| v.map(|c| c as f64)).collect();
            let end = if b.ends[0] == Some(node.id) { NodeEnd::Start } else { NodeEnd::End };
            fit_branch_spline(&path, &g.polyline_radii(b)).unwrap().spline.with_node_end(end)
        })
        .collect();
    (splines, node.pos.map(|c| c as f64))
}

#[test]
fn recentered_y_branches_meet_at_the_node() {
    for seed in 0..10 {
        let (splines, node) = y_splines(seed);
        let mut rng = rng_from_seed(100 + seed);
        let perturbed: Vec<BranchSpline> =
            splines.iter().map(|s| perturb_coefficients(s, 2.0, &mut rng).unwrap()).collect();
        let (moved, status) = recenter_branches(&perturbed, node);
        assert_eq!(status, RecenterStatus::Applied);
        for (before, after) in splines.iter().zip(&moved) {
            let end = after.eval(after.node_param().unwrap());
            assert!(dist(end, node) <= 1e-9, "seed {seed}");
            let (l0, l1) = (before.arc_length(256), after.arc_length(256));
            assert!((l1 - l0).abs() <= 0.3 * l0, "seed {seed}: {l0} -> {l1}");
        }
        let (again, _) = recenter_branches(&moved, node);
        for (a, b) in moved.iter().zip(&again) {
            for (p, q) in a.coeffs.iter().zip(&b.coeffs) {
                assert!(dist(*p, *q) <= 1e-9);
            }
        }
    }
}

#[test]
fn recentering_translates_rigidly() {
    let base = fit_branch_spline(&helix(60), &[2.0; 60]).unwrap().spline.with_node_end(NodeEnd::Start);
    let anchor = base.eval(base.domain[0]);
    let (same, _) = recenter_branches(std::slice::from_ref(&base), anchor);
    assert_eq!(same[0].coeffs, base.coeffs);
    let mut drifted = base.clone();
    drifted.translate([1.0, -2.0, 0.5]);
    let (fixed, _) = recenter_branches(&[drifted.clone()], anchor);
    for (a, b) in fixed[0].coeffs.iter().zip(&drifted.coeffs) {
        let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
        assert!((d[0] + 1.0).abs() < 1e-9 && (d[1] - 2.0).abs() < 1e-9 && (d[2] + 0.5).abs() < 1e-9);
    }
    let unanchored = base.clone().with_node_end(NodeEnd::None);
    let (out, status) = recenter_branches(&[unanchored.clone()], [0.0; 3]);
    assert_eq!(status, RecenterStatus::NoAnchor);
    assert_eq!(out[0], unanchored);
}

//! Cubic B-spline centerline model: least-squares fitting, coefficient
//! perturbation, re-anchoring at the bifurcation node, and evaluation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// Polynomial order (degree + 1) used for every fitted branch.
pub const SPLINE_ORDER: usize = 4;
/// One interior knot per this many path points.
pub const KNOT_EVERY: usize = 5;
/// Fixed length of the resampled radius profile.
pub const RADIUS_PROFILE_LEN: usize = 32;
/// Coefficients pinned at each extremity during perturbation. Two keep both
/// the end point and its tangent direction.
pub const PINNED_END_COEFFS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeEnd {
    Start,
    End,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSpline {
    pub order: usize,
    pub knots: Vec<f64>,
    pub coeffs: Vec<Point3>,
    pub domain: [f64; 2],
    pub radius_profile: Vec<f64>,
    pub node_end: NodeEnd,
}

/// Result of a least-squares fit: the spline plus its residual at the fitting
/// parameters.
#[derive(Debug, Clone)]
pub struct SplineFit {
    pub spline: BranchSpline,
    pub params: Vec<f64>,
    pub rms_residual: f64,
}

fn dist(a: &Point3, b: &Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Cumulative chord length along `points`, starting at 0.
pub fn chord_params(points: &[Point3]) -> Vec<f64> {
    let mut t = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    for (i, p) in points.iter().enumerate() {
        if i > 0 {
            acc += dist(&points[i - 1], p);
        }
        t.push(acc);
    }
    t
}

/// Clamped knot vector with an interior knot at every `KNOT_EVERY`-th
/// parameter, keeping the coefficient count no larger than the point count.
fn knot_vector(params: &[f64], order: usize) -> Vec<f64> {
    let n = params.len();
    let (t0, t1) = (params[0], params[n - 1]);
    let mut interior: Vec<f64> = (1..)
        .map(|j| j * KNOT_EVERY)
        .take_while(|&i| i + 1 < n)
        .map(|i| params[i])
        .collect();
    if interior.is_empty() && n > order {
        interior.push(params[n / 2]);
    }
    interior.truncate(n - order);
    let mut knots = vec![t0; order];
    knots.extend(interior);
    knots.extend(std::iter::repeat_n(t1, order));
    knots
}

/// Index `s` of the knot span with `knots[s] <= t < knots[s + 1]`, clamped so
/// the right end of the domain uses the last non-empty span.
fn find_span(knots: &[f64], order: usize, ncoef: usize, t: f64) -> usize {
    let last = ncoef - 1;
    if t >= knots[last + 1] {
        return last;
    }
    if t <= knots[order - 1] {
        return order - 1;
    }
    let (mut lo, mut hi) = (order - 1, last + 1);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if t < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// Values of the `order` basis functions that are non-zero on span `s`.
fn basis_on_span(knots: &[f64], order: usize, s: usize, t: f64) -> Vec<f64> {
    let p = order - 1;
    let mut n = vec![0.0; order];
    let mut left = vec![0.0; order];
    let mut right = vec![0.0; order];
    n[0] = 1.0;
    for j in 1..=p {
        left[j] = t - knots[s + 1 - j];
        right[j] = knots[s + j] - t;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom == 0.0 { 0.0 } else { n[r] / denom };
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    n
}

fn resample_linear(params: &[f64], values: &[f64], count: usize) -> Vec<f64> {
    let (t0, t1) = (params[0], params[params.len() - 1]);
    (0..count)
        .map(|j| {
            let u = if count == 1 { t0 } else { t0 + (t1 - t0) * j as f64 / (count - 1) as f64 };
            interpolate(params, values, u)
        })
        .collect()
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let i = xs.partition_point(|&v| v <= x) - 1;
    let span = xs[i + 1] - xs[i];
    if span <= 0.0 {
        return ys[i];
    }
    let f = (x - xs[i]) / span;
    ys[i] * (1.0 - f) + ys[i + 1] * f
}

/// Least-squares cubic B-spline through `path` under chord-length
/// parameterization. `radii` (one per point) is resampled into the profile.
pub fn fit_branch_spline(path: &[Point3], radii: &[f64]) -> Result<SplineFit> {
    if path.len() < SPLINE_ORDER {
        return Err(Error::TooShort(path.len()));
    }
    if radii.len() != path.len() {
        return Err(Error::Shape(format!(
            "{} radii for {} path points",
            radii.len(),
            path.len()
        )));
    }
    let params = chord_params(path);
    if params[params.len() - 1] <= 0.0 {
        return Err(Error::Domain("path has zero length".into()));
    }
    let order = SPLINE_ORDER;
    let knots = knot_vector(&params, order);
    let ncoef = knots.len() - order;
    let mut basis = DMatrix::<f64>::zeros(path.len(), ncoef);
    for (row, &t) in params.iter().enumerate() {
        let s = find_span(&knots, order, ncoef, t);
        for (k, v) in basis_on_span(&knots, order, s, t).into_iter().enumerate() {
            basis[(row, s + 1 - order + k)] = v;
        }
    }
    let svd = basis.svd(true, true);
    let mut coeffs = vec![[0.0; 3]; ncoef];
    for axis in 0..3 {
        let rhs = DVector::from_iterator(path.len(), path.iter().map(|p| p[axis]));
        let sol = svd
            .solve(&rhs, 1e-12)
            .map_err(|e| Error::Domain(format!("spline least squares failed: {e}")))?;
        for (c, v) in coeffs.iter_mut().zip(sol.iter()) {
            c[axis] = *v;
        }
    }
    let spline = BranchSpline {
        order,
        domain: [params[0], params[params.len() - 1]],
        knots,
        coeffs,
        radius_profile: resample_linear(&params, radii, RADIUS_PROFILE_LEN),
        node_end: NodeEnd::None,
    };
    let sq: f64 = params
        .iter()
        .zip(path)
        .map(|(&t, p)| dist(&spline.eval(t), p).powi(2))
        .sum();
    let rms_residual = (sq / path.len() as f64).sqrt();
    Ok(SplineFit {
        spline,
        params,
        rms_residual,
    })
}

impl BranchSpline {
    pub fn with_node_end(mut self, node_end: NodeEnd) -> Self {
        self.node_end = node_end;
        self
    }

    /// Curve point at parameter `t` by de Boor's algorithm (clamped to the
    /// domain).
    pub fn eval(&self, t: f64) -> Point3 {
        let k = self.order;
        let t = t.clamp(self.domain[0], self.domain[1]);
        let ncoef = self.coeffs.len();
        let s = find_span(&self.knots, k, ncoef, t);
        let mut d: Vec<Point3> = (0..k).map(|j| self.coeffs[s + 1 - k + j]).collect();
        for r in 1..k {
            for j in (r..k).rev() {
                let i = s + 1 - k + j;
                let denom = self.knots[i + k - r] - self.knots[i];
                let alpha = if denom == 0.0 { 0.0 } else { (t - self.knots[i]) / denom };
                for a in 0..3 {
                    d[j][a] = (1.0 - alpha) * d[j - 1][a] + alpha * d[j][a];
                }
            }
        }
        d[k - 1]
    }

    /// Radius at parameter `t`, linearly interpolated from the profile.
    pub fn radius_at(&self, t: f64) -> f64 {
        let n = self.radius_profile.len();
        if n == 0 {
            return 1.0;
        }
        let [t0, t1] = self.domain;
        let u = if t1 > t0 { ((t - t0) / (t1 - t0)).clamp(0.0, 1.0) } else { 0.0 };
        let x = u * (n - 1) as f64;
        let i = (x.floor() as usize).min(n - 1);
        if i + 1 >= n {
            return self.radius_profile[n - 1];
        }
        let f = x - i as f64;
        self.radius_profile[i] * (1.0 - f) + self.radius_profile[i + 1] * f
    }

    /// Parameter of the end that touches the bifurcation node, if any.
    pub fn node_param(&self) -> Option<f64> {
        match self.node_end {
            NodeEnd::Start => Some(self.domain[0]),
            NodeEnd::End => Some(self.domain[1]),
            NodeEnd::None => None,
        }
    }

    /// Polyline length from `samples` uniform evaluations.
    pub fn arc_length(&self, samples: usize) -> f64 {
        let pts = evaluate_spline(self, samples.max(2)).expect("samples >= 2");
        pts.windows(2).map(|w| dist(&w[0], &w[1])).sum()
    }

    pub fn translate(&mut self, by: Point3) {
        for c in &mut self.coeffs {
            for a in 0..3 {
                c[a] += by[a];
            }
        }
    }
}

/// `samples` points at uniformly spaced parameters over the domain.
pub fn evaluate_spline(s: &BranchSpline, samples: usize) -> Result<Vec<Point3>> {
    if samples < 2 {
        return Err(Error::Parameter(format!("need at least 2 samples, got {samples}")));
    }
    let [t0, t1] = s.domain;
    Ok((0..samples)
        .map(|i| {
            let t = if i + 1 == samples {
                t1
            } else {
                t0 + (t1 - t0) * i as f64 / (samples - 1) as f64
            };
            s.eval(t)
        })
        .collect())
}

/// Adds i.i.d. N(0, w²) offsets per axis to every coefficient except the
/// `PINNED_END_COEFFS` at each extremity. Knots and order are untouched.
pub fn perturb_coefficients<R: Rng + ?Sized>(s: &BranchSpline, weight: f64, rng: &mut R) -> Result<BranchSpline> {
    if !(weight >= 0.0 && weight.is_finite()) {
        return Err(Error::Parameter(format!("perturbation weight must be >= 0, got {weight}")));
    }
    let mut out = s.clone();
    let n = out.coeffs.len();
    if weight == 0.0 || n <= 2 * PINNED_END_COEFFS {
        return Ok(out);
    }
    for c in &mut out.coeffs[PINNED_END_COEFFS..n - PINNED_END_COEFFS] {
        for v in c.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += weight * z;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecenterStatus {
    Applied,
    /// No spline declared a node end; nothing was moved.
    NoAnchor,
}

/// Rigidly translates each anchored spline so its node end lands on
/// `node_pos`. Unanchored splines are returned unchanged.
pub fn recenter_branches(splines: &[BranchSpline], node_pos: Point3) -> (Vec<BranchSpline>, RecenterStatus) {
    let mut out = splines.to_vec();
    let mut any = false;
    for s in &mut out {
        let Some(t) = s.node_param() else { continue };
        any = true;
        let at = s.eval(t);
        s.translate([node_pos[0] - at[0], node_pos[1] - at[1], node_pos[2] - at[2]]);
    }
    if !any {
        log::warn!("recenter_branches: no spline declares a node end; nothing moved");
    }
    (out, if any { RecenterStatus::Applied } else { RecenterStatus::NoAnchor })
}

#[allow(unused_imports)]
use num_traits::Float;
use alloc::collections::BinaryHeap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use super::{Domain, MovingInclusion};
use crate::math::{add, dist, lerp, scale, Point};
use crate::{Error, Result};

/// A Lipschitz curve `t -> y(t)`, piecewise linear between knots and
/// constant outside `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeCurve {
    /// Knots `(t_k, y_k)` with increasing times covering `[0, T]`.
    pub knots: Vec<(f64, Point)>,
    pub t_final: f64,
    pub theta: f64,
    pub mu: f64,
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
    /// Speed bound `M`.
    pub speed: f64,
    /// Seed point `z` when built by [`build_curve_family`].
    pub seed: Option<Point>,
}

impl ProbeCurve {
    pub fn new(knots: Vec<(f64, Point)>, t_final: f64, theta: f64) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::Invalid("curve needs at least one knot".into()));
        }
        if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Invalid("curve knot times must increase".into()));
        }
        if !(theta > 0.0 && theta < t_final) {
            return Err(Error::Invalid(format!("theta = {theta} must lie in (0, T)")));
        }
        let mut knots = knots;
        if knots[0].0 > 0.0 {
            let p = knots[0].1;
            knots.insert(0, (0.0, p));
        }
        if knots[knots.len() - 1].0 < t_final {
            let p = knots[knots.len() - 1].1;
            knots.push((t_final, p));
        }
        let speed = knots
            .windows(2)
            .map(|w| dist(&w[0].1, &w[1].1) / (w[1].0 - w[0].0))
            .fold(0.0, f64::max);
        Ok(ProbeCurve { knots, t_final, theta, mu: 0.0, alpha: None, epsilon: None, speed, seed: None })
    }

    /// The constant curve `y(t) = y`.
    pub fn stationary(y: Point, t_final: f64, theta: f64) -> Result<Self> {
        Self::new(vec![(0.0, y), (t_final, y)], t_final, theta)
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    /// `y(t)`, extended by `y(0)` before 0 and `y(T)` after `T`.
    pub fn position(&self, t: f64) -> Point {
        let t = t.clamp(0.0, self.t_final);
        let k = &self.knots;
        if t <= k[0].0 {
            return k[0].1;
        }
        let i = k.partition_point(|(s, _)| *s < t);
        if i >= k.len() {
            return k[k.len() - 1].1;
        }
        let (t0, p0) = k[i - 1];
        let (t1, p1) = k[i];
        lerp(&p0, &p1, (t - t0) / (t1 - t0))
    }

    /// Distance from `x` to the tube centre `y(t)`.
    pub fn distance(&self, x: &Point, t: f64) -> f64 {
        dist(x, &self.position(t))
    }

    /// Uniform time samples on `[0, T]` merged with the knot times.
    pub fn sample_times(&self, n: usize) -> Vec<f64> {
        let mut ts: Vec<f64> = (0..=n).map(|k| self.t_final * k as f64 / n as f64).collect();
        ts.extend(self.knots.iter().map(|k| k.0).filter(|t| *t >= 0.0 && *t <= self.t_final));
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ts.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        ts
    }
}

/// `d(t) = d(y(t), D_t)` with `+inf` where `D_t` is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceProfile {
    pub times: Vec<f64>,
    pub d: Vec<f64>,
    pub eps_sigma: f64,
    /// Maximal sampled windows on which `D_t` is empty.
    pub vanishing: Vec<(f64, f64)>,
}

impl DistanceProfile {
    /// True when the curve never meets a nonempty `D_t`.
    pub fn no_inclusion_met(&self) -> bool {
        self.eps_sigma.is_infinite()
    }

    pub fn at(&self, t: f64) -> f64 {
        let i = self.times.partition_point(|s| *s < t).min(self.times.len() - 1);
        self.d[i]
    }
}

/// Samples `d(t)` on the curve's time grid (uniform plus knots).
pub fn curve_profile(curve: &ProbeCurve, incl: &MovingInclusion) -> DistanceProfile {
    let times = curve.sample_times(1000);
    let d: Vec<f64> = times.iter().map(|&t| incl.distances(&curve.position(t), t).0).collect();
    let eps_sigma = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut vanishing: Vec<(f64, f64)> = Vec::new();
    let mut open: Option<f64> = None;
    for (k, &t) in times.iter().enumerate() {
        if d[k].is_infinite() {
            open.get_or_insert(t);
            if k + 1 == times.len() {
                vanishing.push((open.take().unwrap(), t));
            }
        } else if let Some(s) = open.take() {
            vanishing.push((s, times[k - 1]));
        }
    }
    DistanceProfile { times, d, eps_sigma, vanishing }
}

/// Options for [`build_curve_family`].
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyOptions {
    /// Lipschitz constant of the inclusion (from `validate_inclusion`).
    pub k_d: f64,
    /// How far beyond the body the escape path ends.
    pub exit_margin: f64,
    /// Grid cells per unit length for the fallback path search.
    pub search_cells: usize,
    /// Tolerance for `z` lying on the boundary of `D_theta`.
    pub seed_tol: f64,
}

impl Default for FamilyOptions {
    fn default() -> Self {
        FamilyOptions { k_d: 0.0, exit_margin: 0.05, search_cells: 64, seed_tol: 1e-6 }
    }
}

/// The curve family of the uniqueness proof: the curve sits at
/// `y~(eps/alpha^2)` for `|t - theta| <= eps` and follows
/// `y~(|t - theta| / alpha^2)` otherwise, `y~` being an escape path from
/// `z` to the outside of the body.
#[allow(clippy::too_many_arguments)]
pub fn build_curve_family(
    z: &Point,
    theta: f64,
    alpha: f64,
    epsilon: f64,
    incl: &MovingInclusion,
    other: Option<&MovingInclusion>,
    dom: &Domain,
    opts: &FamilyOptions,
) -> Result<ProbeCurve> {
    let t_final = incl.t_final;
    if !(theta > 0.0 && theta < t_final) {
        return Err(Error::Invalid(format!("theta = {theta} must lie in (0, T)")));
    }
    let (d_in, d_out) = incl.distances(z, theta);
    if d_in > opts.seed_tol || d_out > opts.seed_tol {
        return Err(Error::Invalid(format!("seed point is not on the boundary of D_theta (d_in={d_in:e}, d_out={d_out:e})")));
    }
    // alpha cap: alpha <= min(1, 1/(2 K_D), d(boundary of Omega, D_t))
    let mut gap = f64::INFINITY;
    for k in 0..=32 {
        let t = t_final * k as f64 / 32.0;
        for (p, _) in incl.boundary_samples(t, 64) {
            gap = gap.min(dom.depth(&p));
        }
    }
    let cap = 1.0f64.min(if opts.k_d > 0.0 { 0.5 / opts.k_d } else { f64::INFINITY }).min(gap);
    if !(alpha > 0.0 && alpha <= cap * (1.0 + 1e-12)) {
        return Err(Error::Invalid(format!("alpha = {alpha} violates the cap {cap:.4}")));
    }
    if !(epsilon > 0.0 && epsilon <= alpha * alpha * (1.0 + 1e-12)) {
        return Err(Error::Invalid(format!("epsilon = {epsilon} must lie in (0, alpha^2]")));
    }

    let mut path = straight_escape(z, theta, incl, dom, opts);
    let mut curve = None;
    if let Some(p) = &path {
        curve = assemble(p, z, theta, alpha, epsilon, t_final).ok();
        if let Some(c) = &curve {
            if check_bands(c, incl, other, alpha, epsilon).is_err() {
                curve = None;
            }
        }
    }
    if curve.is_none() {
        path = searched_escape(z, theta, alpha, incl, other, dom, opts);
        let p = path.ok_or_else(|| Error::Construction("no escape path found".into()))?;
        let c = assemble(&p, z, theta, alpha, epsilon, t_final)?;
        check_bands(&c, incl, other, alpha, epsilon)?;
        curve = Some(c);
    }
    Ok(curve.unwrap())
}

/// Outward-normal ray from `z` to the outside of the body.
fn straight_escape(z: &Point, theta: f64, incl: &MovingInclusion, dom: &Domain, opts: &FamilyOptions) -> Option<Vec<Point>> {
    let samples = incl.boundary_samples(theta, 720);
    let (_, n) = samples
        .iter()
        .min_by(|a, b| dist(&a.0, z).partial_cmp(&dist(&b.0, z)).unwrap())?;
    let mut s_exit = f64::INFINITY;
    for i in 0..dom.dim {
        if n[i] > 1e-12 {
            s_exit = s_exit.min((dom.hi[i] - z[i]) / n[i]);
        } else if n[i] < -1e-12 {
            s_exit = s_exit.min((dom.lo[i] - z[i]) / n[i]);
        }
    }
    let end = add(z, &scale(n, s_exit + opts.exit_margin));
    Some(vec![*z, end])
}

#[derive(PartialEq)]
struct Node(f64, usize);
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Node {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.partial_cmp(&self.0).unwrap_or(Ordering::Equal)
    }
}

/// Planar Dijkstra search with clearance penalties, then shortcutting.
fn searched_escape(
    z: &Point,
    theta: f64,
    alpha: f64,
    incl: &MovingInclusion,
    other: Option<&MovingInclusion>,
    dom: &Domain,
    opts: &FamilyOptions,
) -> Option<Vec<Point>> {
    if dom.dim != 2 {
        return None;
    }
    let margin = opts.exit_margin * 2.0;
    let lo = [dom.lo[0] - margin, dom.lo[1] - margin, 0.0];
    let hi = [dom.hi[0] + margin, dom.hi[1] + margin, 0.0];
    let h = 1.0 / opts.search_cells as f64;
    let nx = ((hi[0] - lo[0]) / h).ceil() as usize + 1;
    let ny = ((hi[1] - lo[1]) / h).ceil() as usize + 1;
    let pt = |k: usize| [lo[0] + (k % nx) as f64 * h, lo[1] + (k / nx) as f64 * h, 0.0];
    let t_grid: Vec<f64> = (0..=16).map(|k| incl.t_final * k as f64 / 16.0).collect();
    let clear_other = |p: &Point| -> f64 {
        match other {
            Some(o) => t_grid.iter().map(|&t| o.distances(p, t).0).fold(f64::INFINITY, f64::min),
            None => f64::INFINITY,
        }
    };
    let clearance = |p: &Point| -> (bool, f64) {
        let d_self = incl.distances(p, theta).0;
        let d_o = clear_other(p);
        let ok = d_self > 0.0 && d_o >= 0.5 * alpha * 1.05;
        (ok, d_self.min(d_o))
    };
    let n = nx * ny;
    let start = ((z[0] - lo[0]) / h).round() as usize + nx * (((z[1] - lo[1]) / h).round() as usize);
    let mut cost = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    cost[start] = 0.0;
    heap.push(Node(0.0, start));
    let mut goal = None;
    while let Some(Node(c, k)) = heap.pop() {
        if c > cost[k] {
            continue;
        }
        let p = pt(k);
        if dom.outside_distance(&p) >= opts.exit_margin {
            goal = Some(k);
            break;
        }
        let (i, j) = ((k % nx) as i64, (k / nx) as i64);
        for (di, dj) in [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)] {
            let (a, b) = (i + di, j + dj);
            if a < 0 || b < 0 || a >= nx as i64 || b >= ny as i64 {
                continue;
            }
            let q = (a + nx as i64 * b) as usize;
            let pq = pt(q);
            let (ok, cl) = clearance(&pq);
            if !ok && dist(&pq, z) > 2.0 * h {
                continue;
            }
            let step = h * ((di * di + dj * dj) as f64).sqrt();
            let c2 = c + step * (1.0 + 0.02 / cl.max(1e-3));
            if c2 < cost[q] {
                cost[q] = c2;
                prev[q] = k;
                heap.push(Node(c2, q));
            }
        }
    }
    let mut k = goal?;
    let mut raw = vec![pt(k)];
    while prev[k] != usize::MAX {
        k = prev[k];
        raw.push(pt(k));
    }
    raw.reverse();
    raw[0] = *z;
    // shortcut: greedily skip vertices while the segment keeps clearance
    let seg_ok = |a: &Point, b: &Point| -> bool {
        let m = ((dist(a, b) / (0.25 * h)).ceil() as usize).max(1);
        (1..=m).all(|s| {
            let p = lerp(a, b, s as f64 / m as f64);
            clearance(&p).0
        })
    };
    let mut out = vec![raw[0]];
    let mut i = 0;
    while i + 1 < raw.len() {
        let mut j = raw.len() - 1;
        while j > i + 1 && !seg_ok(&raw[i], &raw[j]) {
            j -= 1;
        }
        out.push(raw[j]);
        i = j;
    }
    Some(out)
}

/// Knots of `y(t)` from the polyline `y~` (arc-length parametrised on [0, 1]).
fn assemble(path: &[Point], z: &Point, theta: f64, alpha: f64, eps: f64, t_final: f64) -> Result<ProbeCurve> {
    let mut cum = vec![0.0];
    for w in path.windows(2) {
        cum.push(cum[cum.len() - 1] + dist(&w[0], &w[1]));
    }
    let len = cum[cum.len() - 1];
    if len <= 0.0 {
        return Err(Error::Construction("degenerate escape path".into()));
    }
    let ytilde = |s: f64| -> Point {
        let target = s.clamp(0.0, 1.0) * len;
        let i = cum.partition_point(|c| *c < target).clamp(1, path.len() - 1);
        let f = (target - cum[i - 1]) / (cum[i] - cum[i - 1]);
        lerp(&path[i - 1], &path[i], f)
    };
    let a2 = alpha * alpha;
    let y = |t: f64| -> Point {
        let u = (t - theta).abs().max(eps);
        ytilde(u / a2)
    };
    let mut times: Vec<f64> = vec![0.0, t_final, theta - eps, theta + eps, theta - a2, theta + a2];
    for c in &cum {
        let s = c / len * a2;
        if s > eps {
            times.push(theta - s);
            times.push(theta + s);
        }
    }
    times.retain(|t| *t >= 0.0 && *t <= t_final);
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
    let knots: Vec<(f64, Point)> = times.iter().map(|&t| (t, y(t))).collect();
    let mut c = ProbeCurve::new(knots, t_final, theta)?;
    c.alpha = Some(alpha);
    c.epsilon = Some(eps);
    c.seed = Some(*z);
    // M = M~ / alpha^2 with M~ the polyline Lipschitz constant (its length).
    c.speed = c.speed.max(len / a2);
    Ok(c)
}

/// Asserts the four bands of the family conditions on dense samples.
fn check_bands(c: &ProbeCurve, incl: &MovingInclusion, other: Option<&MovingInclusion>, alpha: f64, eps: f64) -> Result<()> {
    let theta = c.theta;
    let a2 = alpha * alpha;
    let a3 = a2 * alpha;
    let tol = 1e-9;
    for w in c.knots.windows(2) {
        let v = dist(&w[0].1, &w[1].1) / (w[1].0 - w[0].0);
        if v > c.speed * (1.0 + tol) {
            return Err(Error::Construction(format!("speed band violated: {v} > M = {}", c.speed)));
        }
    }
    for t in c.sample_times(4000) {
        let (d, _) = incl.distances(&c.position(t), t);
        if d.is_infinite() {
            continue;
        }
        let u = (t - theta).abs();
        if u <= eps {
            if d > 2.0 * eps / a3 * (1.0 + tol) {
                return Err(Error::Construction(format!("near band violated at t={t}: d={d}")));
            }
        } else if u <= a2 {
            if d < u / (2.0 * alpha) * (1.0 - tol) || d > 2.0 * u / a3 * (1.0 + tol) {
                return Err(Error::Construction(format!("middle band violated at t={t}: d={d}")));
            }
        } else if d < 0.5 * alpha * (1.0 - tol) {
            return Err(Error::Construction(format!("far band violated at t={t}: d={d}")));
        }
        if let Some(o) = other {
            let d2 = o.distances(&c.position(t), t).0;
            if d2 < 0.5 * alpha {
                return Err(Error::Construction(format!("curve comes within {d2:.4} of the other inclusion at t={t}")));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::Shape;
    use super::*;

    fn disc(c: [f64; 2], r: f64) -> MovingInclusion {
        MovingInclusion::stationary(2, 1.0, vec![Shape::Ball { center: [c[0], c[1], 0.0], radius: r }]).unwrap()
    }

    #[test]
    fn stationary_curve_profile_is_constant() {
        let inc = disc([0.5, 0.5], 0.2);
        let c = ProbeCurve::stationary([0.1, 0.5, 0.0], 1.0, 0.5).unwrap();
        let p = curve_profile(&c, &inc);
        assert!(p.d.iter().all(|d| (d - 0.2).abs() < 1e-12));
        assert!((p.eps_sigma - 0.2).abs() < 1e-12);
    }

    #[test]
    fn family_satisfies_bands() {
        let inc = disc([0.5, 0.5], 0.2);
        let z = [0.3, 0.5, 0.0];
        let alpha = 0.25;
        let eps = alpha * alpha;
        let c = build_curve_family(&z, 0.5, alpha, eps, &inc, None, &Domain::unit(2), &FamilyOptions::default()).unwrap();
        let p = curve_profile(&c, &inc);
        for (t, d) in p.times.iter().zip(&p.d) {
            if (t - 0.5).abs() >= alpha * alpha {
                assert!(*d >= alpha / 2.0);
            }
        }
        assert!(p.at(0.5) <= 2.0 * eps / alpha.powi(3));
    }

    #[test]
    fn position_is_clamped_outside_horizon() {
        let c = ProbeCurve::new(vec![(0.0, [0.0; 3]), (1.0, [1.0, 0.0, 0.0])], 1.0, 0.5).unwrap();
        assert_eq!(c.position(-3.0), [0.0; 3]);
        assert_eq!(c.position(7.0), [1.0, 0.0, 0.0]);
        assert!((c.speed - 1.0).abs() < 1e-15);
    }
}

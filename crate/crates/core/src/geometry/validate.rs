#[allow(unused_imports)]
use num_traits::Float;
use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::shape::{cross, perp};
use super::{Domain, MovingInclusion};
use crate::math::{add, dist, scale, unit_ball_volume, Point};
use crate::{Error, Result};

/// Sampling resolution for [`validate_inclusion`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryGrid {
    /// Number of time intervals on `[0, T]`.
    pub n_time: usize,
    /// Grid points per axis for Lipschitz quotients and flood fill.
    pub n_space: usize,
    /// Boundary samples per primitive.
    pub n_boundary: usize,
    /// Radii for the density constant; empty means a geometric default.
    pub radii: Vec<f64>,
    /// Midpoint cells per axis for planar area quadrature.
    pub quad: usize,
    /// Monte-Carlo samples for volumes in 3D.
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for GeometryGrid {
    fn default() -> Self {
        GeometryGrid { n_time: 32, n_space: 41, n_boundary: 48, radii: Vec::new(), quad: 48, mc_samples: 100_000, seed: 7 }
    }
}

/// Estimated regularity constants and hypothesis flags.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryReport {
    pub k_d: f64,
    pub rho: f64,
    pub l_d: f64,
    pub h1_ok: bool,
    pub h2_ok: bool,
    pub h3a_ok: bool,
    pub h3b_ok: bool,
    pub empty_intervals: Vec<(f64, f64)>,
    pub violations: Vec<String>,
}

impl GeometryReport {
    pub fn all_ok(&self) -> bool {
        self.h1_ok && self.h2_ok && self.h3a_ok && self.h3b_ok
    }
}

struct SpaceGrid {
    dim: usize,
    n: usize,
    lo: Point,
    step: [f64; 3],
}

impl SpaceGrid {
    fn new(dom: &Domain, n: usize) -> Self {
        let n = n.max(3);
        let mut step = [0.0; 3];
        for i in 0..dom.dim {
            step[i] = (dom.hi[i] - dom.lo[i]) / (n - 1) as f64;
        }
        SpaceGrid { dim: dom.dim, n, lo: dom.lo, step }
    }

    fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    fn point(&self, k: usize) -> Point {
        let mut x = self.lo;
        let mut r = k;
        for i in 0..self.dim {
            x[i] += (r % self.n) as f64 * self.step[i];
            r /= self.n;
        }
        x
    }

    fn neighbours(&self, k: usize, out: &mut Vec<usize>) {
        out.clear();
        let mut stride = 1;
        let mut r = k;
        for _ in 0..self.dim {
            let c = r % self.n;
            if c > 0 {
                out.push(k - stride);
            }
            if c + 1 < self.n {
                out.push(k + stride);
            }
            r /= self.n;
            stride *= self.n;
        }
    }

    fn on_edge(&self, k: usize) -> bool {
        let mut r = k;
        for _ in 0..self.dim {
            let c = r % self.n;
            if c == 0 || c + 1 == self.n {
                return true;
            }
            r /= self.n;
        }
        false
    }
}

/// Numerical check of the geometric hypotheses on a sampled grid.
pub fn validate_inclusion(incl: &MovingInclusion, dom: &Domain, grid: &GeometryGrid) -> Result<GeometryReport> {
    if grid.n_time == 0 || grid.n_space < 3 || grid.n_boundary == 0 || grid.quad == 0 {
        return Err(Error::Invalid("geometry grid resolution must be positive".into()));
    }
    let t_final = incl.t_final;
    let times: Vec<f64> = (0..=grid.n_time).map(|k| t_final * k as f64 / grid.n_time as f64).collect();
    let sg = SpaceGrid::new(dom, grid.n_space);
    let mut violations = Vec::new();

    // (H1'): closure(D_t) inside Omega and connected complement
    let mut h1_ok = true;
    for &t in &times {
        for (i, s) in incl.shapes_at(t).iter().enumerate() {
            let (a, b) = s.bbox();
            if (0..dom.dim).any(|k| a[k] <= dom.lo[k] || b[k] >= dom.hi[k]) {
                h1_ok = false;
                violations.push(format!("H1': t={t:.4}: primitive {i} touches or leaves the body"));
            }
        }
        if !incl.is_empty_at(t) && !complement_connected(incl, &sg, t) {
            h1_ok = false;
            violations.push(format!("H1': t={t:.4}: complement of D_t is disconnected"));
        }
    }

    // (H2): sampled Lipschitz quotients of t -> d(x, D_t), d(x, Omega \ D_t)
    let pts: Vec<Point> = (0..sg.len()).map(|k| sg.point(k)).collect();
    let mut prev: Vec<(f64, f64)> = pts.iter().map(|x| incl.distances(x, times[0])).collect();
    let mut k_d: f64 = 0.0;
    for w in times.windows(2) {
        let dt = w[1] - w[0];
        for (x, p) in pts.iter().zip(prev.iter_mut()) {
            let cur = incl.distances(x, w[1]);
            if cur.0.is_finite() && p.0.is_finite() {
                k_d = k_d.max((cur.0 - p.0).abs() / dt);
            }
            if !incl.is_empty_at(w[0]) && !incl.is_empty_at(w[1]) {
                k_d = k_d.max((cur.1 - p.1).abs() / dt);
            }
            *p = cur;
        }
    }
    let h2_ok = k_d.is_finite();

    // (H3a): exterior cone height along outward normals
    let d_omega = dom.diameter();
    let mut rho = f64::INFINITY;
    let mut any_nonempty = false;
    for &t in &times {
        if incl.is_empty_at(t) {
            continue;
        }
        any_nonempty = true;
        for (z, n) in incl.boundary_samples(t, grid.n_boundary) {
            rho = rho.min(cone_height(incl, t, &z, &n, d_omega));
        }
    }
    if !any_nonempty {
        rho = f64::INFINITY;
    }
    let h3a_ok = rho > 0.0;
    if !h3a_ok {
        violations.push("H3a: exterior cone of positive height not found".into());
    }

    // (H3b): density constant
    let mut rng = ChaCha8Rng::seed_from_u64(grid.seed);
    let mut l_d: f64 = 1.0;
    let t_stride = (grid.n_time / 8).max(1);
    for &t in times.iter().step_by(t_stride) {
        if incl.is_empty_at(t) {
            continue;
        }
        let (lo, hi) = incl.bbox_at(t).unwrap();
        let diam = dist(&lo, &hi);
        let vol_d = volume(incl, t, &lo, &hi, grid, &mut rng);
        if vol_d <= 0.0 {
            continue;
        }
        let radii: Vec<f64> = if grid.radii.is_empty() {
            (0..6).map(|k| diam * 0.02 * 50f64.powf(k as f64 / 5.0)).collect()
        } else {
            grid.radii.clone()
        };
        let samples = incl.boundary_samples(t, grid.n_boundary);
        let stride = (samples.len() / 32).max(1);
        for (z, _) in samples.iter().step_by(stride) {
            for &r in &radii {
                let lens = lens_volume(incl, t, z, r, grid, &mut rng);
                let ball = unit_ball_volume(incl.dim) * r.powi(incl.dim as i32);
                l_d = l_d.min(lens / vol_d.min(ball));
            }
        }
    }
    let l_d = l_d.min(1.0);
    let h3b_ok = l_d > 0.0;
    if !h3b_ok {
        violations.push("H3b: density constant vanishes".into());
    }

    Ok(GeometryReport {
        k_d,
        rho,
        l_d,
        h1_ok,
        h2_ok,
        h3a_ok,
        h3b_ok,
        empty_intervals: incl.empty_intervals(),
        violations,
    })
}

fn complement_connected(incl: &MovingInclusion, sg: &SpaceGrid, t: f64) -> bool {
    let n = sg.len();
    let blocked: Vec<bool> = (0..n).map(|k| incl.contains(&sg.point(k), t)).collect();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::new();
    for k in 0..n {
        if sg.on_edge(k) && !blocked[k] {
            seen[k] = true;
            queue.push_back(k);
        }
    }
    let mut nb = Vec::new();
    while let Some(k) = queue.pop_front() {
        sg.neighbours(k, &mut nb);
        for &j in &nb {
            if !seen[j] && !blocked[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    (0..n).all(|k| blocked[k] || seen[k])
}

/// Height of the largest cone with apex `z` and axis `n` avoiding
/// `closure(D_t)`; aperture chosen so the cone of height `h` has volume `h^d`.
fn cone_height(incl: &MovingInclusion, t: f64, z: &Point, n: &Point, cap: f64) -> f64 {
    let d = incl.dim;
    let tan_phi = if d == 2 { 1.0 } else { (3.0 / core::f64::consts::PI).sqrt() };
    let t1 = perp(n, d);
    let t2 = if d == 3 { cross(n, &t1) } else { [0.0; 3] };
    let mut offsets: Vec<Point> = Vec::new();
    if d == 2 {
        for j in -4i32..=4 {
            offsets.push(scale(&t1, tan_phi * j as f64 / 4.0));
        }
    } else {
        offsets.push([0.0; 3]);
        for ring in 1..=3 {
            let rr = tan_phi * ring as f64 / 3.0;
            for l in 0..8 {
                let b = core::f64::consts::PI * l as f64 / 4.0;
                offsets.push(add(&scale(&t1, rr * b.cos()), &scale(&t2, rr * b.sin())));
            }
        }
    }
    let k_max = 64;
    let da = cap / k_max as f64;
    for k in 1..=k_max {
        let a = da * k as f64;
        for o in &offsets {
            let p = add(z, &scale(&add(n, o), a));
            if incl.distances(&p, t).0 <= 0.0 {
                return a - da;
            }
        }
    }
    cap
}

fn volume(incl: &MovingInclusion, t: f64, lo: &Point, hi: &Point, grid: &GeometryGrid, rng: &mut ChaCha8Rng) -> f64 {
    if incl.dim == 2 {
        let q = 256;
        let (hx, hy) = ((hi[0] - lo[0]) / q as f64, (hi[1] - lo[1]) / q as f64);
        let mut count = 0usize;
        for j in 0..q {
            for i in 0..q {
                let p = [lo[0] + (i as f64 + 0.5) * hx, lo[1] + (j as f64 + 0.5) * hy, 0.0];
                if incl.contains(&p, t) {
                    count += 1;
                }
            }
        }
        count as f64 * hx * hy
    } else {
        let n = grid.mc_samples;
        let mut hit = 0usize;
        for _ in 0..n {
            let p = [
                lo[0] + rng.gen::<f64>() * (hi[0] - lo[0]),
                lo[1] + rng.gen::<f64>() * (hi[1] - lo[1]),
                lo[2] + rng.gen::<f64>() * (hi[2] - lo[2]),
            ];
            if incl.contains(&p, t) {
                hit += 1;
            }
        }
        hit as f64 / n as f64 * (hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2])
    }
}

/// `|D_t cap B(z, r)|` by midpoint quadrature (2D) or Monte-Carlo (3D).
fn lens_volume(incl: &MovingInclusion, t: f64, z: &Point, r: f64, grid: &GeometryGrid, rng: &mut ChaCha8Rng) -> f64 {
    if incl.dim == 2 {
        let q = grid.quad;
        let h = 2.0 * r / q as f64;
        let mut count = 0usize;
        for j in 0..q {
            for i in 0..q {
                let p = [z[0] - r + (i as f64 + 0.5) * h, z[1] - r + (j as f64 + 0.5) * h, 0.0];
                if dist(&p, z) < r && incl.contains(&p, t) {
                    count += 1;
                }
            }
        }
        count as f64 * h * h
    } else {
        let n = grid.mc_samples;
        let mut hit = 0usize;
        let mut inside = 0usize;
        while inside < n {
            let u = [rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0];
            if u[0] * u[0] + u[1] * u[1] + u[2] * u[2] >= 1.0 {
                continue;
            }
            inside += 1;
            if incl.contains(&add(z, &scale(&u, r)), t) {
                hit += 1;
            }
        }
        hit as f64 / n as f64 * unit_ball_volume(3) * r * r * r
    }
}

/// Greedy maximal packing: centres in `D_t` with disjoint `B(x_i, 1/tau)`
/// and `closure(D_t)` covered by the `B(x_i, 3/tau)`.
pub fn vitali_cover(incl: &MovingInclusion, t: f64, tau: f64) -> Result<Vec<Point>> {
    if tau <= 0.0 {
        return Err(Error::Invalid("tau must be positive".into()));
    }
    let (lo, hi) = incl
        .bbox_at(t)
        .ok_or_else(|| Error::Invalid(format!("D_t is empty at t = {t}")))?;
    let d = incl.dim;
    let mut spacing = 0.25 / tau;
    for _attempt in 0..4 {
        let mut cand = Vec::new();
        let counts: Vec<usize> = (0..3)
            .map(|i| if i < d { ((hi[i] - lo[i]) / spacing).ceil() as usize + 1 } else { 1 })
            .collect();
        for k in 0..counts[2] {
            for j in 0..counts[1] {
                for i in 0..counts[0] {
                    let p = [
                        lo[0] + i as f64 * spacing,
                        lo[1] + j as f64 * spacing,
                        if d == 3 { lo[2] + k as f64 * spacing } else { 0.0 },
                    ];
                    if incl.contains(&p, t) {
                        cand.push(p);
                    }
                }
            }
        }
        let mut centres: Vec<Point> = Vec::new();
        for p in &cand {
            if centres.iter().all(|c| dist(c, p) >= 2.0 / tau) {
                centres.push(*p);
            }
        }
        if centres.is_empty() {
            spacing *= 0.5;
            continue;
        }
        let audit = incl.boundary_samples(t, 256);
        let covered = cand
            .iter()
            .chain(audit.iter().map(|(p, _)| p))
            .all(|p| centres.iter().any(|c| dist(c, p) <= 3.0 / tau));
        if covered {
            return Ok(centres);
        }
        spacing *= 0.5;
    }
    Err(Error::Numerical(format!("covering audit failed at t = {t}, tau = {tau}")))
}

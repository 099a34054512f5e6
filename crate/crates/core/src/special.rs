//! Special solutions concentrated along a probe curve, explicit kernels,
//! the screened kernel `p_tau` and the Aronson constant.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;

use crate::conductivity::Tensor;
use crate::geometry::ProbeCurve;
use crate::math::{bessel_k0, dist, norm, Point};
use crate::mesh::{BoxMesh, SpaceTimeField, TimeGrid};
use crate::pde::{DampedSolver, Direction, Medium, ScreenedSolver};
use crate::{Error, Result};

/// `M0(r) = |1 - r|` for `|r| <= 1`, zero elsewhere.
#[inline]
pub fn m0(r: f64) -> f64 {
    if r.abs() <= 1.0 {
        (1.0 - r).abs()
    } else {
        0.0
    }
}

/// `m_tau(x, t) = M0(tau |x - y(t)|)`.
pub fn mollifier_m(x: &Point, t: f64, curve: &ProbeCurve, tau: f64) -> f64 {
    m0(tau * dist(x, &curve.position(t)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// Heat kernel at time `s`.
    Heat,
    /// Kernel of `-Delta + s^2`.
    Screened,
}

/// Free-space kernels of the homogeneous operators.
pub fn kernel_explicit(kind: KernelKind, x: &Point, s: f64, dim: usize) -> Result<f64> {
    let r = norm(x);
    let d = dim as f64;
    match kind {
        KernelKind::Heat => {
            if s <= 0.0 {
                if r == 0.0 && s == 0.0 {
                    return Err(Error::Domain("heat kernel is singular at the origin".into()));
                }
                return Ok(0.0);
            }
            Ok((4.0 * PI * s).powf(-d / 2.0) * (-r * r / (4.0 * s)).exp())
        }
        KernelKind::Screened => {
            if r == 0.0 {
                return Err(Error::Domain("screened kernel is singular at the origin".into()));
            }
            if dim == 3 {
                Ok((-s * r).exp() / (4.0 * PI * r))
            } else {
                Ok(bessel_k0(s * r) / (2.0 * PI))
            }
        }
    }
}

/// Nonnegative bump `M0(|x - y| / radius)` normalised to unit lumped mass.
pub fn bump(mesh: &BoxMesh, y: &Point, radius: f64) -> Result<Vec<f64>> {
    let m = mesh.lumped_mass();
    let mut f = vec![0.0; mesh.num_nodes()];
    let mut mass = 0.0;
    for p in mesh.nodes_in_ball(y, radius) {
        let v = m0(dist(&mesh.node(p), y) / radius);
        f[p] = v;
        mass += m[p] * v;
    }
    if mass <= 0.0 {
        return Err(Error::Resolution(format!("bump of radius {radius:e} at {y:?} contains no mesh node")));
    }
    f.iter_mut().for_each(|v| *v /= mass);
    Ok(f)
}

/// Bump radius used for point sources: `1 / (4 tau)`, but never below
/// one mesh width.
pub fn source_radius(mesh: &BoxMesh, tau: f64) -> f64 {
    (0.25 / tau).max(mesh.h)
}

/// Factored screened operator for repeated `p_tau(.; y)` evaluations.
pub struct PKernel<'a> {
    pub screened: ScreenedSolver<'a>,
}

impl<'a> PKernel<'a> {
    pub fn new(mesh: &'a BoxMesh, b: &[Tensor], tau: f64) -> Result<Self> {
        Ok(PKernel { screened: ScreenedSolver::new(mesh, b, tau)? })
    }

    pub fn at(&self, y: &Point) -> Result<Vec<f64>> {
        let mesh = self.screened.mesh;
        let src = bump(mesh, y, source_radius(mesh, self.screened.tau))?;
        self.screened.solve(&src)
    }

    /// `P_tau` for the mollified source `m_tau` centred at `y`.
    pub fn mollified(&self, y: &Point) -> Result<Vec<f64>> {
        let mesh = self.screened.mesh;
        let tau = self.screened.tau;
        let mut src = vec![0.0; mesh.num_nodes()];
        for q in mesh.nodes_in_ball(y, 1.0 / tau) {
            src[q] = m0(tau * dist(&mesh.node(q), y));
        }
        self.screened.solve(&src)
    }
}

/// `p_tau(.; y)` from a normalised narrow bump at `y`.
pub fn compute_p_tau(b: &[Tensor], y: &Point, tau: f64, mesh: &BoxMesh) -> Result<Vec<f64>> {
    PKernel::new(mesh, b, tau)?.at(y)
}

/// Smallest admissible `mu`: `4 d_Omega max(1/(T - theta), 1/theta) / kappa`.
pub fn mu_floor(kappa_hat: f64, d_omega: f64, t_final: f64, theta: f64) -> f64 {
    4.0 / kappa_hat * d_omega * (1.0 / (t_final - theta)).max(1.0 / theta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpecialOptions {
    /// Enforce the `mu` floor with this constant when present.
    pub kappa_hat: Option<f64>,
    pub d_omega: f64,
}

/// Rescaled special solutions on the solve mesh and the full time grid.
#[derive(Debug, Clone)]
pub struct SpecialSolutionSet {
    pub tau: f64,
    pub mu: f64,
    pub theta: f64,
    /// `exp(-tau^2 (t + T)) u_tau`.
    pub u: SpaceTimeField,
    /// `exp(tau^2 (t + T)) u*_tau`.
    pub u_star: SpaceTimeField,
    /// `P_tau(., t_n)`.
    pub p: SpaceTimeField,
    /// `exp(-tau mu |t_n - theta|)`.
    pub envelope: Vec<f64>,
    pub curve: ProbeCurve,
}

impl SpecialSolutionSet {
    /// `q = u - exp(-tau mu |t - theta|) P` at grid time `n`.
    pub fn q(&self, n: usize) -> Vec<f64> {
        let e = self.envelope[n];
        self.u.at(n).iter().zip(self.p.at(n)).map(|(u, p)| u - e * p).collect()
    }

    /// The rescaled source `exp(-tau mu |t - theta|) m_tau` at grid time
    /// `n`, on any mesh.
    pub fn source_on(&self, mesh: &BoxMesh, grid: &TimeGrid, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; mesh.num_nodes()];
        let t = grid.t(n);
        let y = self.curve.position(t);
        for q in mesh.nodes_in_ball(&y, 1.0 / self.tau) {
            out[q] = self.envelope[n] * m0(self.tau * dist(&mesh.node(q), &y));
        }
        out
    }

    pub fn q_star(&self, n: usize) -> Vec<f64> {
        let e = self.envelope[n];
        self.u_star.at(n).iter().zip(self.p.at(n)).map(|(u, p)| u - e * p).collect()
    }
}

/// Builds the special solutions for the background `b` on `mesh`, which
/// should contain the body with a margin (zero Dirichlet data on its
/// boundary).
#[allow(clippy::too_many_arguments)]
pub fn compute_special_set(
    b: &[Tensor],
    mesh: &BoxMesh,
    grid: &TimeGrid,
    curve: &ProbeCurve,
    tau: f64,
    mu: f64,
    theta: f64,
    opts: &SpecialOptions,
) -> Result<SpecialSolutionSet> {
    if !(tau > 0.0) {
        return Err(Error::Invalid(format!("tau must be positive, got {tau}")));
    }
    if 2.0 / tau < 4.0 * mesh.h {
        return Err(Error::Resolution(format!(
            "tau = {tau} leaves fewer than 4 cells across the source support (h = {})",
            mesh.h
        )));
    }
    if !(theta > 0.0 && theta < grid.t_final) {
        return Err(Error::Invalid(format!("theta = {theta} outside (0, T)")));
    }
    if let Some(k) = opts.kappa_hat {
        let floor = mu_floor(k, opts.d_omega, grid.t_final, theta);
        if mu < floor {
            return Err(Error::Hypothesis(format!("mu = {mu} below the floor {floor:.4}")));
        }
    }
    let np = mesh.num_nodes();
    let nt = grid.num_times();
    let envelope: Vec<f64> = (0..nt).map(|n| (-tau * mu * (grid.t(n) - theta).abs()).exp()).collect();
    let screened = ScreenedSolver::new(mesh, b, tau)?;
    let mut m = SpaceTimeField::zeros(np, nt);
    let mut src = SpaceTimeField::zeros(np, nt);
    let mut p = SpaceTimeField::zeros(np, nt);
    let radius = 1.0 / tau;
    let mut last: Option<Point> = None;
    for n in 0..nt {
        let y = curve.position(grid.t(n));
        if last == Some(y) {
            let (prev_m, prev_p) = (m.at(n - 1).to_vec(), p.at(n - 1).to_vec());
            m.at_mut(n).copy_from_slice(&prev_m);
            p.at_mut(n).copy_from_slice(&prev_p);
        } else {
            let row = m.at_mut(n);
            for q in mesh.nodes_in_ball(&y, radius) {
                row[q] = m0(tau * dist(&mesh.node(q), &y));
            }
            let pn = screened.solve(m.at(n))?;
            p.at_mut(n).copy_from_slice(&pn);
        }
        last = Some(y);
        let e = envelope[n];
        let (mrow, srow) = (m.at(n).to_vec(), src.at_mut(n));
        for q in 0..np {
            srow[q] = e * mrow[q];
        }
    }
    drop(m);
    let solver = DampedSolver::new(mesh, grid, tau, Medium::Static(b))?;
    let all = (0, grid.n_steps);
    let u = solver.solve(Direction::Forward, all, None, Some(&src), None)?;
    let u_star = solver.solve(Direction::Backward, all, None, Some(&src), None)?;
    Ok(SpecialSolutionSet { tau, mu, theta, u, u_star, p, envelope, curve: curve.clone() })
}

/// Simulated heat kernel `G_y` on a mesh: the heat equation started from a
/// normalised narrow bump at `y`, zero Dirichlet data, stored at every step.
pub struct KernelSimulation<'a> {
    pub mesh: &'a BoxMesh,
    pub y: Point,
    pub dt: f64,
    /// `snapshots[k]` is the field at time `(k + 1) dt`.
    pub snapshots: Vec<Vec<f64>>,
}

impl<'a> KernelSimulation<'a> {
    pub fn run(mesh: &'a BoxMesh, b: &[Tensor], y: &Point, t_max: f64, steps_per_unit: usize, bump_radius: f64) -> Result<Self> {
        let grid = TimeGrid::new(1.0, steps_per_unit)?;
        let solver = DampedSolver::new(mesh, &grid, 0.0, Medium::Static(b))?;
        let mut u = bump(mesh, y, bump_radius)?;
        let steps = (t_max / grid.dt).ceil() as usize;
        let mut snapshots = Vec::with_capacity(steps);
        for k in 0..steps {
            u = solver.step(grid.n0() + 1 + k, &u, None, None)?;
            snapshots.push(u.clone());
        }
        Ok(KernelSimulation { mesh, y: *y, dt: grid.dt, snapshots })
    }

    pub fn t_max(&self) -> f64 {
        self.snapshots.len() as f64 * self.dt
    }

    /// Linear interpolation in time, P1 interpolation in space.
    pub fn value(&self, x: &Point, t: f64) -> Option<f64> {
        if t < self.dt || t > self.t_max() + 1e-12 {
            return None;
        }
        let s = t / self.dt - 1.0;
        let k = (s.floor() as usize).min(self.snapshots.len() - 1);
        let w = s - k as f64;
        let a = self.mesh.interpolate(&self.snapshots[k], x)?;
        if w <= 1e-12 || k + 1 >= self.snapshots.len() {
            return Some(a);
        }
        let b = self.mesh.interpolate(&self.snapshots[k + 1], x)?;
        Some((1.0 - w) * a + w * b)
    }

    /// Snapshot indices whose times lie in `[t0, t1]`.
    pub fn steps_in(&self, t0: f64, t1: f64) -> Vec<usize> {
        (0..self.snapshots.len()).filter(|&k| {
            let t = (k + 1) as f64 * self.dt;
            t >= t0 - 1e-12 && t <= t1 + 1e-12
        })
        .collect()
    }
}

/// Sampling plan for the Aronson constant.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSamples {
    pub sources: Vec<Point>,
    pub targets: Vec<Point>,
    pub times: Vec<f64>,
    /// Harnack cylinders `(center, t, r)`.
    pub cylinders: Vec<(Point, f64, f64)>,
    pub steps_per_unit: usize,
    /// Source bump radius; zero selects two mesh widths.
    pub bump_radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelConstants {
    pub kappa_hat: f64,
    pub harnack_c: f64,
    pub samples: usize,
    pub excluded_cylinders: usize,
    pub provenance: String,
}

/// Largest `kappa` in (0, 1) with both Gaussian bounds holding for one
/// sample `g = G_y(x, t)` at distance `r`.
pub fn aronson_threshold(g: f64, r: f64, t: f64, dim: usize) -> f64 {
    let norm = (4.0 * PI * t).powf(dim as f64 / 2.0);
    let gn = g * norm;
    let ok = |k: f64| {
        let lower = k * (-r * r / (4.0 * k * k * t)).exp();
        let upper = (-k * k * r * r / (4.0 * t)).exp() / k;
        lower <= gn && gn <= upper
    };
    if gn <= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    if !ok(1e-6) {
        return 0.0;
    }
    lo = lo.max(1e-6);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo.min(1.0 - 1e-12)
}

/// Harnack ratio over one cylinder of a simulated kernel, or `None` when
/// the cylinder violates the separation hypothesis or leaves the record.
pub fn harnack_ratio(sim: &KernelSimulation<'_>, center: &Point, t: f64, r: f64) -> Option<f64> {
    let separated = dist(center, &sim.y) >= 2.0 * r || !(t - r * r < 0.0 && 0.0 < t + r * r);
    if !separated || t - 0.75 * r * r < sim.dt || t + r * r > sim.t_max() {
        return None;
    }
    let nodes = sim.mesh.nodes_in_ball(center, r);
    if nodes.is_empty() {
        return None;
    }
    let early = sim.steps_in(t - 0.75 * r * r, t - 0.25 * r * r);
    let late = sim.steps_in(t + 0.25 * r * r, t + r * r);
    if early.is_empty() || late.is_empty() {
        return None;
    }
    let mut hi = f64::NEG_INFINITY;
    let mut lo = f64::INFINITY;
    for &k in &early {
        for &p in &nodes {
            hi = hi.max(sim.snapshots[k][p]);
        }
    }
    for &k in &late {
        for &p in &nodes {
            lo = lo.min(sim.snapshots[k][p]);
        }
    }
    if lo <= 0.0 {
        return Some(f64::INFINITY);
    }
    Some(hi / lo)
}

/// Empirical Aronson constant and parabolic Harnack constant of `b`.
pub fn estimate_kappa(b: &[Tensor], mesh: &BoxMesh, spec: &KernelSamples) -> Result<KernelConstants> {
    let t_max = spec
        .times
        .iter()
        .copied()
        .chain(spec.cylinders.iter().map(|c| c.1 + c.2 * c.2))
        .fold(0.0, f64::max);
    if spec.sources.is_empty() || spec.times.is_empty() || spec.targets.is_empty() {
        return Err(Error::Calibration("empty kernel sampling plan".into()));
    }
    let radius = if spec.bump_radius > 0.0 { spec.bump_radius } else { 2.0 * mesh.h };
    let mut kappa: f64 = 1.0;
    let mut worst = String::new();
    let mut count = 0;
    let mut harnack: f64 = 1.0;
    let mut excluded = 0;
    for y in &spec.sources {
        let sim = KernelSimulation::run(mesh, b, y, t_max, spec.steps_per_unit, radius)?;
        for x in &spec.targets {
            for &t in &spec.times {
                let g = sim
                    .value(x, t)
                    .ok_or_else(|| Error::Calibration(format!("sample ({x:?}, {t}) outside the simulation")))?;
                let k = aronson_threshold(g, dist(x, y), t, mesh.dim);
                count += 1;
                if k < kappa {
                    kappa = k;
                    worst = format!("y = {y:?}, x = {x:?}, t = {t}");
                }
            }
        }
        for (c, t, r) in &spec.cylinders {
            match harnack_ratio(&sim, c, *t, *r) {
                Some(v) => harnack = harnack.max(v),
                None => excluded += 1,
            }
        }
    }
    if !(kappa > 0.0) {
        return Err(Error::Calibration(format!("no kappa in (0, 1) satisfies the Gaussian bounds; worst sample {worst}")));
    }
    Ok(KernelConstants {
        kappa_hat: kappa,
        harnack_c: harnack,
        samples: count,
        excluded_cylinders: excluded,
        provenance: format!("{count} samples, binding at {worst}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::gauss_legendre;
    use crate::mesh::Embedding;

    #[test]
    fn mollifier_profile() {
        let c = ProbeCurve::stationary([0.5, 0.5, 0.0], 1.0, 0.5).unwrap();
        let tau = 10.0;
        assert_eq!(mollifier_m(&[0.5, 0.5, 0.0], 0.3, &c, tau), 1.0);
        assert!(mollifier_m(&[0.6, 0.5, 0.0], 0.3, &c, tau) < 1e-12);
        assert_eq!(mollifier_m(&[0.7, 0.5, 0.0], 0.3, &c, tau), 0.0);
        assert!((mollifier_m(&[0.55, 0.5, 0.0], 0.3, &c, tau) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn explicit_kernel_values() {
        let h = kernel_explicit(KernelKind::Heat, &[0.0; 3], 1.0, 3).unwrap();
        assert!((h - (4.0 * PI).powf(-1.5)).abs() < 1e-15);
        assert!((h - 0.0224484).abs() < 1e-7);
        let e = kernel_explicit(KernelKind::Screened, &[1.0, 0.0, 0.0], 1.0, 3).unwrap();
        assert!((e - 0.0292749).abs() < 1e-7);
        assert!(kernel_explicit(KernelKind::Screened, &[0.0; 3], 1.0, 2).is_err());
    }

    #[test]
    fn heat_kernel_has_unit_mass() {
        let (x, w) = gauss_legendre(64);
        for (dim, t) in [(2, 0.05), (3, 0.02)] {
            // Product Gauss-Legendre on [-2, 2]^d, far beyond the spread.
            let mut s = 0.0;
            let n = x.len();
            let nz = if dim == 3 { n } else { 1 };
            for i in 0..n {
                for j in 0..n {
                    for k in 0..nz {
                        let p = [2.0 * x[i], 2.0 * x[j], if dim == 3 { 2.0 * x[k] } else { 0.0 }];
                        let wz = if dim == 3 { 2.0 * w[k] } else { 1.0 };
                        s += 4.0 * w[i] * w[j] * wz * kernel_explicit(KernelKind::Heat, &p, t, dim).unwrap();
                    }
                }
            }
            assert!((s - 1.0).abs() < 1e-6, "dim {dim}: {s}");
        }
    }

    #[test]
    fn screened_kernel_is_laplace_transform_of_heat_kernel() {
        // p_tau(r) = int_0^inf exp(-tau^2 s) G(r, s) ds, by substitution s = e^v.
        for dim in [2, 3] {
            let (tau, r) = (3.0, 0.4);
            let (mut acc, h) = (0.0, 1e-3);
            let mut v = -25.0;
            while v < 4.0 {
                let s = v.exp();
                acc += h * s * (-tau * tau * s).exp() * kernel_explicit(KernelKind::Heat, &[r, 0.0, 0.0], s, dim).unwrap();
                v += h;
            }
            let e = kernel_explicit(KernelKind::Screened, &[r, 0.0, 0.0], tau, dim).unwrap();
            assert!(((acc - e) / e).abs() < 1e-5, "dim {dim}: {acc} {e}");
        }
    }

    #[test]
    fn p_tau_far_field_tracks_explicit_kernel() {
        let inner = BoxMesh::unit(2, 64).unwrap();
        let emb = Embedding::new(inner, 16).unwrap();
        let b = vec![Tensor::identity(); emb.outer.num_cells()];
        let y = [0.5, 0.5, 0.0];
        let tau = 10.0;
        let p = compute_p_tau(&b, &y, tau, &emb.outer).unwrap();
        assert!(p.iter().all(|v| *v >= 0.0));
        for r in [0.2, 0.3, 0.4] {
            let x = [0.5 + r, 0.5, 0.0];
            let num = emb.outer.interpolate(&p, &x).unwrap();
            let ex = kernel_explicit(KernelKind::Screened, &[r, 0.0, 0.0], tau, 2).unwrap();
            assert!((num / ex - 1.0).abs() < 0.1, "r = {r}: {}", num / ex);
        }
    }

    #[test]
    fn special_set_is_positive_and_bounded_at_time_zero() {
        let inner = BoxMesh::unit(2, 32).unwrap();
        let emb = Embedding::new(inner, 8).unwrap();
        let b = vec![Tensor::identity(); emb.outer.num_cells()];
        let grid = TimeGrid::new(2.0, 32).unwrap();
        let curve = ProbeCurve::new(alloc::vec![(0.0, [0.3, 0.5, 0.0]), (2.0, [0.7, 0.5, 0.0])], 2.0, 1.0).unwrap();
        let (tau, mu) = (6.0, 3.0);
        let opts = SpecialOptions { kappa_hat: None, d_omega: 2f64.sqrt() };
        let s = compute_special_set(&b, &emb.outer, &grid, &curve, tau, mu, 1.0, &opts).unwrap();
        assert!(s.u.data.iter().all(|v| *v >= 0.0));
        assert!(s.u_star.data.iter().all(|v| *v >= 0.0));
        let n0 = grid.n0();
        let bound = (-tau * mu * 1.0f64).exp();
        assert!(s.u.at(n0).iter().all(|v| *v <= bound * 1.01));
        let nth = grid.index_of(1.0).unwrap();
        assert_eq!(s.envelope[nth], 1.0);
        for (k, q) in s.q(nth).iter().enumerate() {
            assert_eq!(*q, s.u.at(nth)[k] - s.p.at(nth)[k]);
        }
        let too_fine = compute_special_set(&b, &emb.outer, &grid, &curve, 20.0, mu, 1.0, &opts);
        assert!(matches!(too_fine, Err(Error::Resolution(_))));
        let strict = SpecialOptions { kappa_hat: Some(0.9), d_omega: 2f64.sqrt() };
        let low_mu = compute_special_set(&b, &emb.outer, &grid, &curve, tau, 1.0, 1.0, &strict);
        assert!(low_mu.unwrap_err().is_hypothesis());
    }

    #[test]
    fn aronson_threshold_of_exact_kernel_is_one() {
        for dim in [2, 3] {
            let (r, t) = (0.3, 0.05);
            let g = kernel_explicit(KernelKind::Heat, &[r, 0.0, 0.0], t, dim).unwrap();
            assert!(aronson_threshold(g, r, t, dim) > 1.0 - 1e-9);
            assert!(aronson_threshold(g, r, t, dim) < 1.0);
            assert!(aronson_threshold(0.5 * g, r, t, dim) < 0.9);
        }
    }

    #[test]
    fn homogeneous_kappa_is_close_to_one_and_contrast_lowers_it() {
        let inner = BoxMesh::unit(2, 32).unwrap();
        let emb = Embedding::new(inner, 8).unwrap();
        let outer = &emb.outer;
        let spec = KernelSamples {
            sources: alloc::vec![[0.5, 0.5, 0.0]],
            targets: alloc::vec![[0.5, 0.5, 0.0], [0.6, 0.5, 0.0], [0.5, 0.75, 0.0], [0.3, 0.3, 0.0]],
            times: alloc::vec![0.01, 0.02, 0.05],
            cylinders: alloc::vec![([0.7, 0.5, 0.0], 0.03, 0.08)],
            steps_per_unit: 2048,
            bump_radius: 0.0,
        };
        let b = vec![Tensor::identity(); outer.num_cells()];
        let k = estimate_kappa(&b, outer, &spec).unwrap();
        assert!(k.kappa_hat > 0.8 && k.kappa_hat < 1.0, "{}", k.kappa_hat);
        assert!(k.harnack_c >= 1.0 && k.harnack_c.is_finite());
        let bc: Vec<Tensor> = (0..outer.num_cells())
            .map(|c| if outer.centroid(c)[0] < 0.55 { Tensor::scalar(0.5) } else { Tensor::scalar(2.0) })
            .collect();
        let kc = estimate_kappa(&bc, outer, &spec).unwrap();
        assert!(kc.kappa_hat < k.kappa_hat);
    }
}

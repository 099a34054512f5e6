//! Empirical constants for the supporting estimates, with refinement
//! stability as the pass criterion.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::geometry::{MovingInclusion, ProbeCurve};
use crate::indicator::IndicatorSamples;
use crate::math::{dist, dot, Point};
use crate::mesh::{BoxMesh, TimeGrid};
use crate::special::{harnack_ratio, KernelSimulation, PKernel, SpecialSolutionSet};
use crate::{Error, Result};

/// Fewest samples a report needs to count.
pub const MIN_SAMPLES: usize = 20;
/// Allowed ratio of fitted constants across one refinement.
pub const STABILITY_LIMIT: f64 = 1.5;

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantReport {
    pub lemma_id: String,
    pub fitted_constant: f64,
    pub samples: usize,
    pub excluded: usize,
    pub description: String,
    /// Fine over coarse constant, once a refinement was compared.
    pub stability: Option<f64>,
    pub pass: bool,
}

impl ConstantReport {
    pub fn new(lemma_id: &str, fitted_constant: f64, samples: usize, excluded: usize, description: String) -> Self {
        let pass = samples >= MIN_SAMPLES && fitted_constant.is_finite() && fitted_constant > 0.0;
        ConstantReport { lemma_id: lemma_id.to_string(), fitted_constant, samples, excluded, description, stability: None, pass }
    }

    /// Combines the reports of two refinement levels.
    pub fn refined(coarse: &Self, fine: &Self, limit: f64) -> Self {
        let ratio = fine.fitted_constant / coarse.fitted_constant;
        let stable = ratio.is_finite() && ratio >= 1.0 / limit && ratio <= limit;
        ConstantReport {
            lemma_id: fine.lemma_id.clone(),
            fitted_constant: fine.fitted_constant,
            samples: fine.samples,
            excluded: fine.excluded,
            description: format!("{}; coarse constant {:.4e}", fine.description, coarse.fitted_constant),
            stability: Some(ratio),
            pass: coarse.pass && fine.pass && stable,
        }
    }
}

/// Power of `tau` relating `|grad P|^2` to `p^2` in dimension `d`:
/// `P ~ tau^-d p` and `|grad p| ~ tau p`, hence `tau^(2 - 2d)`.
pub fn gradient_exponent(dim: usize) -> i32 {
    2 - 2 * dim as i32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HarnackKind {
    Parabolic,
    Elliptic,
}

/// Parabolic Harnack constant over cylinders `(center, t, r)` of simulated
/// kernels. Cylinders violating the separation hypothesis are excluded.
pub fn check_harnack_parabolic(sims: &[KernelSimulation<'_>], cylinders: &[(Point, f64, f64)]) -> ConstantReport {
    let (mut c, mut used, mut excluded) = (1.0f64, 0, 0);
    for sim in sims {
        for (x, t, r) in cylinders {
            match harnack_ratio(sim, x, *t, *r) {
                Some(v) => {
                    c = c.max(v);
                    used += 1;
                }
                None => excluded += 1,
            }
        }
    }
    ConstantReport::new("harnack-parabolic", c, used, excluded, format!("{used} cylinders over {} sources", sims.len()))
}

/// Elliptic Harnack constant of `p_tau(.; y)` over balls `B(x, beta/tau)`
/// with `y` outside `B(x, 2 beta/tau)`.
pub fn check_harnack_elliptic(mesh: &BoxMesh, kernels: &[(Point, Vec<f64>)], centers: &[Point], beta: f64, tau: f64) -> ConstantReport {
    let r = beta / tau;
    let (mut c, mut used, mut excluded) = (1.0f64, 0, 0);
    for (y, p) in kernels {
        for x in centers {
            let nodes = mesh.nodes_in_ball(x, r);
            if dist(x, y) < 2.0 * r || nodes.is_empty() || !inside(mesh, x, r) {
                excluded += 1;
                continue;
            }
            let hi = nodes.iter().map(|&q| p[q]).fold(f64::NEG_INFINITY, f64::max);
            let lo = nodes.iter().map(|&q| p[q]).fold(f64::INFINITY, f64::min);
            c = c.max(if lo > 0.0 { hi / lo } else { f64::INFINITY });
            used += 1;
        }
    }
    ConstantReport::new("harnack-elliptic", c, used, excluded, format!("beta = {beta}, tau = {tau}"))
}

fn inside(mesh: &BoxMesh, x: &Point, r: f64) -> bool {
    let hi = mesh.hi();
    (0..mesh.dim).all(|i| x[i] - r >= mesh.lo[i] - 1e-12 && x[i] + r <= hi[i] + 1e-12)
}

/// Cellwise integrals over the cells whose centroids satisfy `keep`:
/// `(int f^2, int |grad f|^2)`, with `f^2` averaged over vertices.
fn cell_integrals(mesh: &BoxMesh, f: &[f64], keep: impl Fn(&Point) -> bool) -> (f64, f64) {
    let vol = mesh.cell_volume();
    let (mut l2, mut h1) = (0.0, 0.0);
    for c in 0..mesh.num_cells() {
        if !keep(&mesh.centroid(c)) {
            continue;
        }
        let v = mesh.cell(c);
        l2 += vol * v.iter().map(|&p| f[p as usize] * f[p as usize]).sum::<f64>() / v.len() as f64;
        let g = mesh.cell_gradient(c, f);
        h1 += vol * dot(&g, &g);
    }
    (l2, h1)
}

/// Two-sided Caccioppoli constant for one time slice `p_field` of `P_tau`
/// with source centre `y`. Balls narrower than four cells, or meeting
/// `B(y, 1/tau)`, are skipped.
pub fn check_caccioppoli(mesh: &BoxMesh, p_field: &[f64], y: &Point, centers: &[Point], beta: f64, tau: f64) -> ConstantReport {
    let r = beta / tau;
    let (mut c, mut used, mut excluded) = (1.0f64, 0, 0);
    for x in centers {
        if dist(x, y) < r + 1.0 / tau || 2.0 * (r / 4.0) < 4.0 * mesh.h || !inside(mesh, x, r) {
            excluded += 1;
            continue;
        }
        let (small, _) = cell_integrals(mesh, p_field, |z| dist(z, x) <= r / 4.0);
        let (_, mid) = cell_integrals(mesh, p_field, |z| dist(z, x) <= r / 2.0);
        let (big, _) = cell_integrals(mesh, p_field, |z| dist(z, x) <= r);
        let t2 = tau * tau;
        let lower = t2 * small / mid;
        let upper = mid / (t2 * big);
        c = c.max(lower).max(upper);
        used += 1;
    }
    ConstantReport::new("caccioppoli", c, used, excluded, format!("beta = {beta}, tau = {tau}"))
}

/// Sampling plan shared by the pointwise and the in-inclusion checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePlan {
    /// Grid indices of the sampled times (inside `[0, T]`).
    pub steps: Vec<usize>,
    /// Sampled points (pointwise checks only).
    pub points: Vec<Point>,
    /// Cutoff `C_1`: points closer than `C_1 / tau` to `y(t)` are dropped.
    pub cutoff: f64,
}

impl SamplePlan {
    /// `n_times` grid times evenly over `[0, T]` and every `stride`-th
    /// node of `region`.
    pub fn regular(grid: &TimeGrid, n_times: usize, region: &BoxMesh, stride: usize, cutoff: f64) -> Self {
        let (a, b) = (grid.n0(), grid.n_t());
        let steps = (0..n_times).map(|k| a + (b - a) * k / (n_times - 1).max(1)).collect();
        let points = (0..region.num_nodes()).step_by(stride.max(1)).map(|p| region.node(p)).collect();
        SamplePlan { steps, points, cutoff }
    }
}

/// Caches `p_tau(.; y)` by source point.
pub struct KernelCache<'a> {
    pub kernel: &'a PKernel<'a>,
    entries: Vec<(Point, Vec<f64>)>,
}

impl<'a> KernelCache<'a> {
    pub fn new(kernel: &'a PKernel<'a>) -> Self {
        KernelCache { kernel, entries: Vec::new() }
    }

    pub fn get(&mut self, y: &Point) -> Result<&[f64]> {
        if let Some(i) = self.entries.iter().position(|(z, _)| z == y) {
            return Ok(&self.entries[i].1);
        }
        let p = self.kernel.at(y)?;
        if self.entries.len() >= 64 {
            self.entries.remove(0);
        }
        self.entries.push((*y, p));
        Ok(&self.entries.last().unwrap().1)
    }
}

/// Pointwise comparisons between `P`, `u`, its time difference, `q` and
/// `p_tau`. Returns the reports `comp-P-p`, `comp-u-p`, `comp-dtu-p`,
/// `comp-q-p` in that order. `special` and `cache` live on `mesh`.
pub fn check_comparisons(
    special: &SpecialSolutionSet,
    mesh: &BoxMesh,
    grid: &TimeGrid,
    cache: &mut KernelCache<'_>,
    plan: &SamplePlan,
) -> Result<Vec<ConstantReport>> {
    let tau = special.tau;
    let d = mesh.dim as i32;
    let curve = &special.curve;
    let (mut c8, mut c9, mut c10, mut c11) = (1.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut used, mut excluded) = (0, 0);
    for &n in &plan.steps {
        let t = grid.t(n);
        let y = curve.position(t);
        let p = cache.get(&y)?.to_vec();
        let e = special.envelope[n];
        let q = special.q(n);
        let (u, up) = (special.u.at(n), special.u.at(n - 1));
        for x in &plan.points {
            let r = dist(x, &y);
            if r < plan.cutoff / tau {
                excluded += 1;
                continue;
            }
            let Some((cell, bary)) = mesh.locate(x) else {
                excluded += 1;
                continue;
            };
            let at = |f: &[f64]| -> f64 { mesh.cell(cell).iter().zip(bary.iter()).map(|(&v, w)| w * f[v as usize]).sum() };
            let pv = at(&p);
            if !(pv > 0.0) {
                excluded += 1;
                continue;
            }
            let pp = at(special.p.at(n));
            let ratio = tau.powi(d) * pp / pv;
            c8 = c8.max(ratio).max(1.0 / ratio);
            c9 = c9.max(at(u) / (e * tau.powi(-d) * pv));
            let du = (at(u) - at(up)) / grid.dt;
            c10 = c10.max(du.abs() / (e * tau.powi(1 - d) * pv));
            c11 = c11.max(at(&q).abs() / (tau.powi(-d) * e * r * pv));
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::Invalid("no comparison samples survive the cutoff".into()));
    }
    let desc = format!("tau = {tau}, cutoff {} / tau", plan.cutoff);
    Ok(vec![
        ConstantReport::new("comp-P-p", c8, used, excluded, desc.clone()),
        ConstantReport::new("comp-u-p", c9, used, excluded, desc.clone()),
        ConstantReport::new("comp-dtu-p", c10, used, excluded, desc.clone()),
        ConstantReport::new("comp-q-p", c11, used, excluded, desc),
    ])
}

/// Integrals over `D_t` of the outer mesh at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InclusionIntegrals {
    pub grad_p: f64,
    pub grad_q: f64,
    pub p2: f64,
    pub moment: f64,
    pub d: f64,
}

pub fn inclusion_integrals(
    special: &SpecialSolutionSet,
    mesh: &BoxMesh,
    grid: &TimeGrid,
    incl: &MovingInclusion,
    p: &[f64],
    n: usize,
) -> InclusionIntegrals {
    let t = grid.t(n);
    let y = special.curve.position(t);
    let (q, qs) = (special.q(n), special.q_star(n));
    let pn = special.p.at(n);
    let vol = mesh.cell_volume();
    let mut s = InclusionIntegrals { grad_p: 0.0, grad_q: 0.0, p2: 0.0, moment: 0.0, d: incl.distances(&y, t).0 };
    for c in 0..mesh.num_cells() {
        let x = mesh.centroid(c);
        if !incl.contains(&x, t) {
            continue;
        }
        let g = mesh.cell_gradient(c, pn);
        s.grad_p += vol * dot(&g, &g);
        let (a, b) = (mesh.cell_gradient(c, &q), mesh.cell_gradient(c, &qs));
        s.grad_q += vol * (dot(&a, &a) + dot(&b, &b));
        let v = mesh.cell(c);
        for &k in v {
            let z = mesh.node(k as usize);
            let w = vol / v.len() as f64 * p[k as usize] * p[k as usize];
            s.p2 += w;
            let r = dist(&z, &y);
            s.moment += w * r * r;
        }
    }
    s
}

/// In-inclusion estimates: `c12` (gradient of `P` against `p`), `C_M`
/// (gradient of `q` and `q*`) and `C14` (the moment bound). Times with
/// `tau d(t) < guard` or empty `D_t` are skipped.
pub fn check_inclusion_estimates(
    special: &SpecialSolutionSet,
    mesh: &BoxMesh,
    grid: &TimeGrid,
    incl: &MovingInclusion,
    cache: &mut KernelCache<'_>,
    plan: &SamplePlan,
    guard: f64,
) -> Result<Vec<ConstantReport>> {
    let tau = special.tau;
    let k = tau.powi(gradient_exponent(mesh.dim));
    let (mut c12, mut cm, mut c14) = (1.0f64, 0.0f64, 0.0f64);
    let (mut used, mut excluded) = (0, 0);
    for &n in &plan.steps {
        let t = grid.t(n);
        let y = special.curve.position(t);
        let d = incl.distances(&y, t).0;
        if !d.is_finite() || tau * d < guard {
            excluded += 1;
            continue;
        }
        let p = cache.get(&y)?.to_vec();
        let s = inclusion_integrals(special, mesh, grid, incl, &p, n);
        if !(s.p2 > 0.0 && s.grad_p > 0.0) {
            excluded += 1;
            continue;
        }
        let ratio = s.grad_p / (k * s.p2);
        c12 = c12.max(ratio).max(1.0 / ratio);
        let e = special.envelope[n];
        cm = cm.max(s.grad_q / (d * d * k * e * e * s.p2));
        c14 = c14.max(s.moment / (d * d * s.p2));
        used += 1;
    }
    let desc = format!("tau = {tau}, guard tau d(t) >= {guard}");
    Ok(vec![
        ConstantReport::new("incl-grad-P", c12, used, excluded, desc.clone()),
        ConstantReport::new("incl-grad-q", cm, used, excluded, desc.clone()),
        ConstantReport::new("incl-moment", c14, used, excluded, desc),
    ])
}

/// `S_-` and `S_+`: time integrals over `D_t` of
/// `(1 - C_M d(t)^2) exp(-2 tau mu |t - theta|) p^2` and of the same
/// without the first factor.
pub fn p_integrals(
    cache: &mut KernelCache<'_>,
    mesh: &BoxMesh,
    grid: &TimeGrid,
    incl: &MovingInclusion,
    curve: &ProbeCurve,
    mu: f64,
    theta: f64,
    c_m: f64,
) -> Result<(f64, f64)> {
    let tau = cache.kernel.screened.tau;
    let vol = mesh.cell_volume();
    let (mut minus, mut plus) = (0.0, 0.0);
    for n in grid.n0() + 1..=grid.n_t() {
        let t = grid.t(n);
        if incl.is_empty_at(t) {
            continue;
        }
        let y = curve.position(t);
        let d = incl.distances(&y, t).0;
        let p = cache.get(&y)?;
        let mut s = 0.0;
        for c in 0..mesh.num_cells() {
            if incl.contains(&mesh.centroid(c), t) {
                let v = mesh.cell(c);
                s += vol * v.iter().map(|&k| p[k as usize] * p[k as usize]).sum::<f64>() / v.len() as f64;
            }
        }
        let e = (-2.0 * tau * mu * (t - theta).abs()).exp();
        plus += grid.dt * e * s;
        minus += grid.dt * (1.0 - c_m * d * d) * e * s;
    }
    Ok((minus, plus))
}

/// Smallest single constant `c >= 1` with
/// `tau^k S_- / c - R <= I <= c tau^k S_+ + R` at every sweep point;
/// `k` is [`gradient_exponent`]. Fails when the lower bound is positive
/// but `I + R` is not.
pub fn check_indicator_bounds(
    samples: &IndicatorSamples,
    s_minus: &[f64],
    s_plus: &[f64],
    residual: &[f64],
    dim: usize,
) -> ConstantReport {
    let k = gradient_exponent(dim);
    let mut c = 1.0f64;
    let mut offending = None;
    for i in 0..samples.len() {
        let (tau, val) = (samples.taus[i], samples.values[i]);
        let tk = tau.powi(k);
        let r = residual[i];
        if val - r > 0.0 && s_plus[i] > 0.0 {
            c = c.max((val - r) / (tk * s_plus[i]));
        }
        if s_minus[i] > 0.0 {
            if val + r > 0.0 {
                c = c.max(tk * s_minus[i] / (val + r));
            } else {
                offending.get_or_insert(tau);
            }
        }
    }
    let mut rep = ConstantReport::new("indicator-bounds", c, samples.len(), 0, format!("tau^{k} scaling, {} sweep points", samples.len()));
    if let Some(t) = offending {
        rep.fitted_constant = f64::INFINITY;
        rep.pass = false;
        rep.description = format!("lower bound violated at tau = {t}");
    }
    rep
}

/// Smallest sweep `tau` from which every later constant stays within
/// `limit` of the constant there.
pub fn empirical_tau0(points: &[(f64, f64)], limit: f64) -> Option<f64> {
    (0..points.len()).find_map(|i| {
        let c = points[i].1;
        points[i..].iter().all(|(_, v)| *v <= c * limit && *v >= c / limit).then_some(points[i].0)
    })
}

/// Log-log slope of `int_D |grad P|^2 / int_D p^2` against `tau` for a
/// static source at `y`; the scaling predicts [`gradient_exponent`].
pub fn fit_gradient_exponent(mesh: &BoxMesh, b: &[crate::conductivity::Tensor], y: &Point, incl: &MovingInclusion, t: f64, taus: &[f64]) -> Result<f64> {
    let (mut x, mut v) = (Vec::new(), Vec::new());
    for &tau in taus {
        let pk = PKernel::new(mesh, b, tau)?;
        let big = pk.mollified(y)?;
        let p = pk.at(y)?;
        let (_, grad) = cell_integrals(mesh, &big, |z| incl.contains(z, t));
        let (p2, _) = cell_integrals(mesh, &p, |z| incl.contains(z, t));
        if !(grad > 0.0 && p2 > 0.0) {
            return Err(Error::Invalid(format!("inclusion carries no mass at tau = {tau}")));
        }
        x.push(tau.ln());
        v.push((grad / p2).ln());
    }
    Ok(crate::math::line_fit(&x, &v).0)
}

/// Least-squares decay rate of `ln |I|` against `tau`.
pub fn decay_rate(samples: &IndicatorSamples) -> f64 {
    let pts: Vec<(f64, f64)> = samples.taus.iter().zip(&samples.values).filter(|(_, v)| **v != 0.0).map(|(t, v)| (*t, v.abs().ln())).collect();
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    crate::math::line_fit(&x, &y).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conductivity::Tensor;
    use crate::geometry::Shape;
    use crate::indicator::{indicator_sweep, IndicatorMode, IndicatorValue};
    use crate::mesh::Embedding;
    use crate::special::{compute_special_set, KernelKind, SpecialOptions};

    #[test]
    fn constant_kernel_has_harnack_constant_one() {
        let mesh = BoxMesh::unit(2, 16).unwrap();
        let sim = KernelSimulation { mesh: &mesh, y: [0.5, 0.5, 0.0], dt: 0.01, snapshots: vec![vec![2.0; mesh.num_nodes()]; 100] };
        let cyl: Vec<(Point, f64, f64)> = (0..25).map(|k| ([0.2 + 0.02 * k as f64, 0.3, 0.0], 0.5, 0.2)).collect();
        let r = check_harnack_parabolic(&[sim], &cyl);
        assert_eq!(r.fitted_constant, 1.0);
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn refinement_ratio_decides_pass() {
        let a = ConstantReport::new("x", 2.0, 30, 0, String::new());
        let b = ConstantReport::new("x", 2.9, 30, 0, String::new());
        let c = ConstantReport::new("x", 3.1, 30, 0, String::new());
        assert!(ConstantReport::refined(&a, &b, 1.5).pass);
        assert!(!ConstantReport::refined(&a, &c, 1.5).pass);
        assert!(!ConstantReport::new("x", 2.0, 19, 0, String::new()).pass);
    }

    #[test]
    fn elliptic_harnack_of_explicit_kernel_grows_with_beta() {
        // Explicit screened kernel sampled on a mesh as the oracle field.
        let mesh = BoxMesh::new(2, [-1.0, -1.0, 0.0], [64, 64, 0], 2.0 / 64.0).unwrap();
        let tau = 10.0;
        let y = [0.0, 0.0, 0.0];
        let p: Vec<f64> = (0..mesh.num_nodes())
            .map(|q| crate::special::kernel_explicit(KernelKind::Screened, &mesh.node(q), tau, 2).unwrap_or(1e3))
            .collect();
        let centers: Vec<Point> = (0..24).map(|k| [0.45 + 0.01 * k as f64, 0.1, 0.0]).collect();
        let c1 = check_harnack_elliptic(&mesh, &[(y, p.clone())], &centers, 1.0, tau);
        let c2 = check_harnack_elliptic(&mesh, &[(y, p)], &centers, 2.0, tau);
        assert!(c1.pass && c1.fitted_constant.is_finite());
        assert!(c2.fitted_constant > c1.fitted_constant);
    }

    #[test]
    fn moment_bound_holds_when_inclusion_is_near_the_source() {
        let emb = Embedding::new(BoxMesh::unit(2, 32).unwrap(), 8).unwrap();
        let grid = TimeGrid::new(2.0, 16).unwrap();
        let b = vec![Tensor::identity(); emb.outer.num_cells()];
        let y = [0.3, 0.5, 0.0];
        let curve = ProbeCurve::stationary(y, 2.0, 1.0).unwrap();
        let incl = MovingInclusion::stationary(2, 2.0, vec![Shape::Ball { center: [0.55, 0.5, 0.0], radius: 0.1 }]).unwrap();
        let tau = 8.0;
        let sp = compute_special_set(&b, &emb.outer, &grid, &curve, tau, 3.0, 1.0, &SpecialOptions { kappa_hat: None, d_omega: 1.5 }).unwrap();
        let pk = PKernel::new(&emb.outer, &b, tau).unwrap();
        let mut cache = KernelCache::new(&pk);
        let p = cache.get(&y).unwrap().to_vec();
        let s = inclusion_integrals(&sp, &emb.outer, &grid, &incl, &p, grid.index_of(1.0).unwrap());
        // D lies in B(y, 2 d) with d = 0.15, so the moment is at most 4 d^2 int p^2.
        assert!((s.d - 0.15).abs() < 1e-12);
        assert!(s.moment <= 4.0 * s.d * s.d * s.p2);
        let plan = SamplePlan::regular(&grid, 24, &emb.inner, 1, 3.0);
        let reps = check_inclusion_estimates(&sp, &emb.outer, &grid, &incl, &mut cache, &plan, 1.0).unwrap();
        assert_eq!(reps.len(), 3);
        assert!(reps.iter().all(|r| r.pass), "{reps:?}");
        assert!(reps[2].fitted_constant <= 4.0);
    }

    #[test]
    fn comparison_constants_are_finite_for_homogeneous_medium() {
        let emb = Embedding::new(BoxMesh::unit(2, 32).unwrap(), 8).unwrap();
        let grid = TimeGrid::new(2.0, 16).unwrap();
        let b = vec![Tensor::identity(); emb.outer.num_cells()];
        let curve = ProbeCurve::stationary([0.3, 0.5, 0.0], 2.0, 1.0).unwrap();
        let tau = 8.0;
        let sp = compute_special_set(&b, &emb.outer, &grid, &curve, tau, 3.0, 1.0, &SpecialOptions { kappa_hat: None, d_omega: 1.5 }).unwrap();
        let pk = PKernel::new(&emb.outer, &b, tau).unwrap();
        let mut cache = KernelCache::new(&pk);
        let plan = SamplePlan::regular(&grid, 8, &emb.inner, 7, 3.0);
        let reps = check_comparisons(&sp, &emb.outer, &grid, &mut cache, &plan).unwrap();
        assert_eq!(reps.len(), 4);
        for r in &reps {
            assert!(r.pass, "{r:?}");
        }
        // q + e P = u holds by construction at every node.
        let n = grid.index_of(1.0).unwrap();
        let q = sp.q(n);
        for k in 0..q.len() {
            assert!((q[k] + sp.envelope[n] * sp.p.at(n)[k] - sp.u.at(n)[k]).abs() <= 1e-14 * (1.0 + sp.u.at(n)[k].abs()));
        }
        let far = SamplePlan { steps: plan.steps.clone(), points: vec![[0.31, 0.5, 0.0]], cutoff: 3.0 };
        assert!(check_comparisons(&sp, &emb.outer, &grid, &mut cache, &far).is_err());
    }

    #[test]
    fn gradient_exponent_matches_dimension_scaling() {
        let mesh = BoxMesh::new(2, [-0.5, -0.5, 0.0], [96, 96, 0], 2.0 / 96.0).unwrap();
        let b = vec![Tensor::identity(); mesh.num_cells()];
        let incl = MovingInclusion::stationary(2, 2.0, vec![Shape::Ball { center: [0.8, 0.5, 0.0], radius: 0.12 }]).unwrap();
        let slope = fit_gradient_exponent(&mesh, &b, &[0.4, 0.5, 0.0], &incl, 1.0, &[8.0, 12.0, 16.0]).unwrap();
        std::eprintln!("fitted exponent {slope:.3}, predicted {}", gradient_exponent(2));
        assert!((slope - gradient_exponent(2) as f64).abs() <= 0.5);
    }

    #[test]
    fn indicator_bounds_fit_one_constant() {
        let taus = [6.0, 8.0, 10.0];
        let s = indicator_sweep(&taus, IndicatorMode::Volume, "c", "a", |t| {
            Ok(IndicatorValue { tau: t, value: 2.0 * t.powi(-2) * (-t).exp(), floor: 0.0, runge_residual: None })
        });
        let sp: Vec<f64> = taus.iter().map(|t| (-t).exp()).collect();
        let r = check_indicator_bounds(&s, &sp, &sp, &[0.0; 3], 2);
        assert!((r.fitted_constant - 2.0).abs() < 1e-12);
        let neg = indicator_sweep(&taus, IndicatorMode::Volume, "c", "a", |t| Ok(IndicatorValue { tau: t, value: -1e-3, floor: 0.0, runge_residual: None }));
        let r = check_indicator_bounds(&neg, &sp, &sp, &[0.0; 3], 2);
        assert!(!r.pass && r.description.contains("tau = 6"));
        assert_eq!(empirical_tau0(&[(6.0, 1.0), (8.0, 3.0), (10.0, 3.5), (12.0, 3.2)], 1.5), Some(8.0));
    }
}

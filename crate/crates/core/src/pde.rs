//! P1 finite elements with lumped mass and implicit Euler in time.
//!
//! Damped problems read `M (v_n - v_{n-1}) / dt + tau^2 M v_n + K_n v_n = M s_n`
//! forward and `M (w_n - w_{n+1}) / dt + tau^2 M w_n + K_n w_n = M r_n`
//! backward, with Dirichlet data on the mesh boundary. `K_n` is assembled
//! from the conductivity at `t_n`. Boundary fluxes are the residuals of
//! these equations on boundary rows.

use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

#[allow(unused_imports)]
use num_traits::Float;

use crate::conductivity::{ConductivityPair, Tensor};
use crate::linalg::{Csr, SpdSolver};
use crate::mesh::{BoxMesh, SpaceTimeField, TimeGrid};
use crate::{Error, Result};

/// Cellwise coefficient of a solve.
#[derive(Debug, Clone, Copy)]
pub enum Medium<'a> {
    Static(&'a [Tensor]),
    /// The perturbed field `a` of a pair, following the inclusion in time.
    Moving(&'a ConductivityPair),
}

impl Medium<'_> {
    fn key(&self, t: f64) -> Vec<bool> {
        match self {
            Medium::Static(_) => Vec::new(),
            Medium::Moving(p) => p.mask(t),
        }
    }

    fn tensors(&self, key: &[bool]) -> Vec<Tensor> {
        match self {
            Medium::Static(b) => b.to_vec(),
            Medium::Moving(p) => p.a_from_mask(key),
        }
    }

    fn num_cells(&self) -> usize {
        match self {
            Medium::Static(b) => b.len(),
            Medium::Moving(p) => p.b.len(),
        }
    }
}

/// Stiffness matrix `K_ij = int A grad phi_j . grad phi_i`.
pub fn assemble_stiffness(mesh: &BoxMesh, tensors: &[Tensor]) -> Csr {
    let mut k = Csr::with_pattern(&mesh.pattern());
    add_cells(&mut k, mesh, tensors, 0..mesh.num_cells(), 1.0);
    k
}

/// Adds `w` times the element matrices of `cells` to `k`.
pub fn add_cells(k: &mut Csr, mesh: &BoxMesh, tensors: &[Tensor], cells: impl Iterator<Item = usize>, w: f64) {
    let vol = mesh.cell_volume();
    for c in cells {
        let g = mesh.cell_grads(c);
        let v = mesh.cell(c);
        let t = &tensors[c];
        for (i, gi) in g.iter().enumerate() {
            let agi = t.apply(gi);
            for (j, gj) in g.iter().enumerate() {
                let e = w * vol * crate::math::dot(&agi, gj);
                k.add_to(v[i] as usize, v[j] as usize, e);
            }
        }
    }
}

/// `K_a - K_b`, supported on the cells of `mask`.
pub fn stiffness_jump(mesh: &BoxMesh, pair: &ConductivityPair, mask: &[bool]) -> Csr {
    let mut k = Csr::with_pattern(&mesh.pattern());
    let diff: Vec<Tensor> = pair.fill.iter().zip(&pair.b).map(|(a, b)| a.sub(b)).collect();
    add_cells(&mut k, mesh, &diff, (0..mesh.num_cells()).filter(|&c| mask[c]), 1.0);
    k
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Values on the boundary nodes of a mesh over consecutive grid times
/// `start .. start + n_times`. Traces store nodal values, fluxes store the
/// flux density (weak flux divided by the lumped boundary mass).
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryField {
    pub nodes: Vec<u32>,
    pub mass: Vec<f64>,
    pub start: usize,
    pub n_times: usize,
    pub data: Vec<f64>,
}

impl BoundaryField {
    pub fn zeros(mesh: &BoxMesh, start: usize, n_times: usize) -> Self {
        let nodes: Vec<u32> = mesh.boundary_nodes().iter().map(|&p| p as u32).collect();
        let bm = mesh.boundary_mass();
        let mass = nodes.iter().map(|&p| bm[p as usize]).collect();
        let n = nodes.len();
        BoundaryField { nodes, mass, start, n_times, data: vec![0.0; n * n_times] }
    }

    /// Trace of a field on the grid times `start .. start + n_times`.
    pub fn trace(mesh: &BoxMesh, field: &SpaceTimeField, start: usize, n_times: usize) -> Self {
        let mut b = Self::zeros(mesh, start, n_times);
        for k in 0..n_times {
            let src = field.at(start + k);
            let nodes = &b.nodes;
            let n = nodes.len();
            for (j, &p) in nodes.iter().enumerate() {
                b.data[k * n + j] = src[p as usize];
            }
        }
        b
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn end(&self) -> usize {
        self.start + self.n_times
    }

    /// Values at grid time `n`, if covered.
    pub fn at_time(&self, n: usize) -> Option<&[f64]> {
        if n < self.start || n >= self.end() {
            return None;
        }
        let k = n - self.start;
        let m = self.nodes.len();
        Some(&self.data[k * m..(k + 1) * m])
    }

    pub fn at_time_mut(&mut self, n: usize) -> &mut [f64] {
        let k = n - self.start;
        let m = self.nodes.len();
        &mut self.data[k * m..(k + 1) * m]
    }

    /// Writes the values at time `n` into the boundary entries of `full`.
    pub fn scatter(&self, n: usize, full: &mut [f64]) {
        if let Some(v) = self.at_time(n) {
            for (j, &p) in self.nodes.iter().enumerate() {
                full[p as usize] = v[j];
            }
        }
    }

    /// `dt sum_n sum_i mass_i f_i(n) z_i(n)` over the covered times.
    pub fn pair_with(&self, z: &SpaceTimeField, dt: f64) -> f64 {
        let mut acc = 0.0;
        for n in self.start..self.end() {
            let f = self.at_time(n).unwrap();
            let zn = z.at(n);
            for (j, &p) in self.nodes.iter().enumerate() {
                acc += self.mass[j] * f[j] * zn[p as usize];
            }
        }
        acc * dt
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

struct Step {
    k: Csr,
    a: Csr,
    interior: SpdSolver,
    /// Interior unknown index to node.
    unknowns: Vec<usize>,
}

/// Damped implicit Euler on one mesh for one `tau`. Factorizations are
/// cached per distinct inclusion mask.
pub struct DampedSolver<'a> {
    pub mesh: &'a BoxMesh,
    pub grid: TimeGrid,
    pub tau: f64,
    pub medium: Medium<'a>,
    pub mass: Vec<f64>,
    cache: RefCell<Vec<(Vec<bool>, Rc<Step>)>>,
}

const CACHE_SLOTS: usize = 16;

impl<'a> DampedSolver<'a> {
    pub fn new(mesh: &'a BoxMesh, grid: &TimeGrid, tau: f64, medium: Medium<'a>) -> Result<Self> {
        if medium.num_cells() != mesh.num_cells() {
            return Err(Error::Invalid("conductivity does not match the mesh".into()));
        }
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::Invalid(format!("invalid tau {tau}")));
        }
        Ok(DampedSolver { mesh, grid: grid.clone(), tau, medium, mass: mesh.lumped_mass(), cache: RefCell::new(Vec::new()) })
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt
    }

    /// Number of factorizations held.
    pub fn cached(&self) -> usize {
        self.cache.borrow().len()
    }

    fn step_at(&self, n: usize) -> Result<Rc<Step>> {
        let key = self.medium.key(self.grid.t(n));
        {
            let mut c = self.cache.borrow_mut();
            if let Some(pos) = c.iter().position(|(k, _)| *k == key) {
                let e = c.remove(pos);
                let s = e.1.clone();
                c.insert(0, e);
                return Ok(s);
            }
        }
        let tensors = self.medium.tensors(&key);
        let k = assemble_stiffness(self.mesh, &tensors);
        let alpha = 1.0 / self.dt() + self.tau * self.tau;
        let a = k.shifted(alpha, &self.mass);
        let keep: Vec<bool> = self.mesh.boundary_flags().iter().map(|b| !b).collect();
        let (aii, map) = a.restrict(&keep);
        let mut unknowns = vec![0; aii.n];
        for (p, &m) in map.iter().enumerate() {
            if m != usize::MAX {
                unknowns[m] = p;
            }
        }
        let interior = SpdSolver::new(aii)?;
        let step = Rc::new(Step { k, a, interior, unknowns });
        let mut c = self.cache.borrow_mut();
        c.insert(0, (key, step.clone()));
        c.truncate(CACHE_SLOTS);
        Ok(step)
    }

    /// True when the interior systems are factored rather than solved by CG.
    pub fn is_direct(&self) -> Result<bool> {
        Ok(matches!(self.step_at(self.grid.n0())?.interior, SpdSolver::Banded(_)))
    }

    /// One implicit step: solves `A_n v = M prev / dt + M src` in the interior
    /// with boundary values taken from `g` (zero when absent).
    pub fn step(&self, n: usize, prev: &[f64], src: Option<&[f64]>, g: Option<&[f64]>) -> Result<Vec<f64>> {
        let st = self.step_at(n)?;
        let np = self.mesh.num_nodes();
        let idt = 1.0 / self.dt();
        let mut rhs: Vec<f64> = (0..np).map(|i| self.mass[i] * prev[i] * idt).collect();
        if let Some(s) = src {
            for i in 0..np {
                rhs[i] += self.mass[i] * s[i];
            }
        }
        let mut out = vec![0.0; np];
        let flags = self.mesh.boundary_flags();
        if let Some(g) = g {
            for i in 0..np {
                if flags[i] {
                    out[i] = g[i];
                }
            }
            let mut ag = vec![0.0; np];
            st.a.matvec(&out, &mut ag);
            for i in 0..np {
                rhs[i] -= ag[i];
            }
        }
        let b: Vec<f64> = st.unknowns.iter().map(|&p| rhs[p]).collect();
        let mut x: Vec<f64> = st.unknowns.iter().map(|&p| prev[p]).collect();
        st.interior.solve(&b, &mut x)?;
        for (m, &p) in st.unknowns.iter().enumerate() {
            out[p] = x[m];
        }
        Ok(out)
    }

    /// Solves on the grid window `[lo, hi]`. The endpoint is imposed at `lo`
    /// (forward) or `hi` (backward); the output is zero outside the window.
    pub fn solve(
        &self,
        direction: Direction,
        window: (usize, usize),
        endpoint: Option<&[f64]>,
        source: Option<&SpaceTimeField>,
        boundary: Option<&BoundaryField>,
    ) -> Result<SpaceTimeField> {
        let (lo, hi) = window;
        let nt = self.grid.num_times();
        if lo > hi || hi >= nt {
            return Err(Error::Invalid(format!("window [{lo}, {hi}] outside the time grid")));
        }
        let np = self.mesh.num_nodes();
        check_len(source.map(|s| (s.n_nodes, s.n_times)), np, nt)?;
        if let Some(b) = boundary {
            if b.nodes.len() != self.mesh.boundary_nodes().len() {
                return Err(Error::Invalid("boundary field does not match the mesh".into()));
            }
        }
        let mut out = SpaceTimeField::zeros(np, nt);
        let first = if direction == Direction::Forward { lo } else { hi };
        if let Some(e) = endpoint {
            if e.len() != np {
                return Err(Error::Invalid("endpoint length mismatch".into()));
            }
            out.at_mut(first).copy_from_slice(e);
        }
        let mut g = vec![0.0; np];
        let order: Vec<(usize, usize)> = match direction {
            Direction::Forward => (lo + 1..=hi).map(|n| (n, n - 1)).collect(),
            Direction::Backward => (lo..hi).rev().map(|n| (n, n + 1)).collect(),
        };
        for (n, prev_n) in order {
            let gref = boundary.map(|b| {
                b.scatter(n, &mut g);
                &g[..]
            });
            let v = self.step(n, out.at(prev_n), source.map(|s| s.at(n)), gref)?;
            out.at_mut(n).copy_from_slice(&v);
        }
        if !out.is_finite() {
            return Err(Error::Numerical("non-finite values in time stepping".into()));
        }
        Ok(out)
    }

    /// Weak boundary flux of a solution over `window`, i.e. the residual of
    /// the discrete equation on boundary rows. Forward fluxes live on
    /// `lo + 1 ..= hi`, backward fluxes on `lo .. hi`.
    pub fn flux(
        &self,
        field: &SpaceTimeField,
        direction: Direction,
        window: (usize, usize),
        source: Option<&SpaceTimeField>,
    ) -> Result<BoundaryField> {
        let (lo, hi) = window;
        let start = if direction == Direction::Forward { lo + 1 } else { lo };
        let mut out = BoundaryField::zeros(self.mesh, start, hi - lo);
        let np = self.mesh.num_nodes();
        let idt = 1.0 / self.dt();
        let t2 = self.tau * self.tau;
        let mut kv = vec![0.0; np];
        for n in start..start + (hi - lo) {
            let other = if direction == Direction::Forward { n - 1 } else { n + 1 };
            let st = self.step_at(n)?;
            let v = field.at(n);
            let vp = field.at(other);
            st.k.matvec(v, &mut kv);
            let nodes = out.nodes.clone();
            let row = out.at_time_mut(n);
            for (j, &p) in nodes.iter().enumerate() {
                let p = p as usize;
                let mut r = self.mass[p] * ((v[p] - vp[p]) * idt + t2 * v[p]) + kv[p];
                if let Some(s) = source {
                    r -= self.mass[p] * s.at(n)[p];
                }
                row[j] = r;
            }
        }
        for k in 0..out.n_times {
            let m = out.nodes.len();
            for j in 0..m {
                out.data[k * m + j] /= out.mass[j];
            }
        }
        Ok(out)
    }
}

fn check_len(dims: Option<(usize, usize)>, np: usize, nt: usize) -> Result<()> {
    match dims {
        Some((a, b)) if a != np || b != nt => Err(Error::Invalid("source field does not match mesh and grid".into())),
        _ => Ok(()),
    }
}

/// Heat equation on `[0, T]` with Dirichlet data `f` and initial value `v0`.
pub fn solve_heat(
    medium: Medium<'_>,
    f: &BoundaryField,
    v0: &[f64],
    mesh: &BoxMesh,
    grid: &TimeGrid,
) -> Result<SpaceTimeField> {
    let s = DampedSolver::new(mesh, grid, 0.0, medium)?;
    s.solve(Direction::Forward, (grid.n0(), grid.n_t()), Some(v0), None, Some(f))
}

/// One-shot damped solve; see [`DampedSolver::solve`].
#[allow(clippy::too_many_arguments)]
pub fn solve_damped(
    medium: Medium<'_>,
    tau: f64,
    source: Option<&SpaceTimeField>,
    boundary: Option<&BoundaryField>,
    endpoint: Option<&[f64]>,
    direction: Direction,
    window: (usize, usize),
    mesh: &BoxMesh,
    grid: &TimeGrid,
) -> Result<SpaceTimeField> {
    DampedSolver::new(mesh, grid, tau, medium)?.solve(direction, window, endpoint, source, boundary)
}

/// Factored screened operator `-div(b grad) + tau^2` with zero Dirichlet
/// data on the mesh boundary.
pub struct ScreenedSolver<'a> {
    pub mesh: &'a BoxMesh,
    pub tau: f64,
    pub mass: Vec<f64>,
    pub stiffness: Csr,
    solver: SpdSolver,
    unknowns: Vec<usize>,
}

impl<'a> ScreenedSolver<'a> {
    pub fn new(mesh: &'a BoxMesh, b: &[Tensor], tau: f64) -> Result<Self> {
        if b.len() != mesh.num_cells() {
            return Err(Error::Invalid("conductivity does not match the mesh".into()));
        }
        if !(tau > 0.0) {
            return Err(Error::Invalid(format!("screened solve needs tau > 0, got {tau}")));
        }
        let mass = mesh.lumped_mass();
        let stiffness = assemble_stiffness(mesh, b);
        let a = stiffness.shifted(tau * tau, &mass);
        let keep: Vec<bool> = mesh.boundary_flags().iter().map(|b| !b).collect();
        let (aii, map) = a.restrict(&keep);
        let mut unknowns = vec![0; aii.n];
        for (p, &m) in map.iter().enumerate() {
            if m != usize::MAX {
                unknowns[m] = p;
            }
        }
        Ok(ScreenedSolver { mesh, tau, mass, stiffness, solver: SpdSolver::new(aii)?, unknowns })
    }

    /// `(K + tau^2 M) P = M rhs` in the interior, `P = 0` on the boundary.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let b: Vec<f64> = self.unknowns.iter().map(|&p| self.mass[p] * rhs[p]).collect();
        let mut x = vec![0.0; b.len()];
        self.solver.solve(&b, &mut x)?;
        let mut out = vec![0.0; self.mesh.num_nodes()];
        for (m, &p) in self.unknowns.iter().enumerate() {
            out[p] = x[m];
        }
        Ok(out)
    }
}

pub fn solve_screened(b: &[Tensor], tau: f64, rhs: &[f64], mesh: &BoxMesh) -> Result<Vec<f64>> {
    ScreenedSolver::new(mesh, b, tau)?.solve(rhs)
}

/// Weak Neumann trace of a forward solution; see [`DampedSolver::flux`].
pub fn neumann_trace(
    solver: &DampedSolver<'_>,
    field: &SpaceTimeField,
    window: (usize, usize),
    source: Option<&SpaceTimeField>,
) -> Result<BoundaryField> {
    solver.flux(field, Direction::Forward, window, source)
}

/// Damped Dirichlet-to-Neumann map on `[0, T]`: boundary values go to the
/// flux of the damped solution started from `exp(-tau^2 T) v0`.
pub struct DampedDNMap<'a> {
    pub solver: DampedSolver<'a>,
    pub v0: Vec<f64>,
}

pub fn assemble_damped_dn<'a>(
    medium: Medium<'a>,
    v0: &[f64],
    tau: f64,
    mesh: &'a BoxMesh,
    grid: &TimeGrid,
) -> Result<DampedDNMap<'a>> {
    if v0.len() != mesh.num_nodes() {
        return Err(Error::Invalid("initial value length mismatch".into()));
    }
    let solver = DampedSolver::new(mesh, grid, tau, medium)?;
    let f = (-tau * tau * grid.t_final).exp();
    Ok(DampedDNMap { solver, v0: v0.iter().map(|v| v * f).collect() })
}

impl DampedDNMap<'_> {
    pub fn window(&self) -> (usize, usize) {
        (self.solver.grid.n0(), self.solver.grid.n_t())
    }

    pub fn tau(&self) -> f64 {
        self.solver.tau
    }

    /// Solution and flux for boundary data `trace` (which must cover the
    /// window; its value at `t = 0` is ignored).
    pub fn apply_with_field(&self, trace: &BoundaryField) -> Result<(SpaceTimeField, BoundaryField)> {
        let w = self.window();
        if trace.start > w.0 + 1 || trace.end() <= w.1 {
            return Err(Error::Contract("boundary data do not cover [0, T]".into()));
        }
        let v = self.solver.solve(Direction::Forward, w, Some(&self.v0), None, Some(trace))?;
        let f = self.solver.flux(&v, Direction::Forward, w, None)?;
        Ok((v, f))
    }

    pub fn apply(&self, trace: &BoundaryField) -> Result<BoundaryField> {
        Ok(self.apply_with_field(trace)?.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    fn identity(mesh: &BoxMesh) -> Vec<Tensor> {
        vec![Tensor::identity(); mesh.num_cells()]
    }

    #[test]
    fn stiffness_annihilates_constants_and_reproduces_dirichlet_energy() {
        let mesh = BoxMesh::unit(2, 8).unwrap();
        let k = assemble_stiffness(&mesh, &identity(&mesh));
        let ones = vec![1.0; mesh.num_nodes()];
        let mut y = vec![0.0; mesh.num_nodes()];
        k.matvec(&ones, &mut y);
        assert!(y.iter().all(|v| v.abs() < 1e-12));
        let x: Vec<f64> = (0..mesh.num_nodes()).map(|p| mesh.node(p)[0]).collect();
        assert!((k.bilinear(&x, &x) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constants_are_preserved() {
        let mesh = BoxMesh::unit(2, 8).unwrap();
        let grid = TimeGrid::new(0.5, 16).unwrap();
        let b = identity(&mesh);
        let mut f = BoundaryField::zeros(&mesh, 0, grid.num_times());
        f.data.iter_mut().for_each(|v| *v = 0.7);
        let v = solve_heat(Medium::Static(&b), &f, &vec![0.7; mesh.num_nodes()], &mesh, &grid).unwrap();
        for n in grid.n0()..=grid.n_t() {
            assert!(v.at(n).iter().all(|x| (x - 0.7).abs() < 1e-12));
        }
    }

    #[test]
    fn zero_data_give_zero_solution() {
        let mesh = BoxMesh::unit(2, 6).unwrap();
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let b = identity(&mesh);
        let w = solve_damped(Medium::Static(&b), 5.0, None, None, None, Direction::Backward, (0, grid.n_steps), &mesh, &grid)
            .unwrap();
        assert!(w.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn screened_constant_rhs_with_matching_boundary_is_exact() {
        // With P = c / tau^2 imposed through a damped steady state: the
        // screened solve of a constant in the interior is bounded by it.
        let mesh = BoxMesh::unit(2, 16).unwrap();
        let b = identity(&mesh);
        let tau = 4.0;
        let rhs = vec![2.0; mesh.num_nodes()];
        let p = solve_screened(&b, tau, &rhs, &mesh).unwrap();
        let bound = 2.0 / (tau * tau);
        assert!(p.iter().all(|v| *v >= 0.0 && *v <= bound * (1.0 + 1e-12)));
        let zero = solve_screened(&b, tau, &vec![0.0; mesh.num_nodes()], &mesh).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sine_mode_decays_at_the_continuum_rate() {
        let mesh = BoxMesh::unit(2, 64).unwrap();
        let grid = TimeGrid::new(0.0625, 512).unwrap();
        let b = identity(&mesh);
        let v0: Vec<f64> = (0..mesh.num_nodes())
            .map(|p| {
                let x = mesh.node(p);
                (PI * x[0]).sin() * (PI * x[1]).sin()
            })
            .collect();
        let f = BoundaryField::zeros(&mesh, 0, grid.num_times());
        let v = solve_heat(Medium::Static(&b), &f, &v0, &mesh, &grid).unwrap();
        let m = mesh.lumped_mass();
        let n = grid.n_t();
        let decay = (-2.0 * PI * PI * grid.t_final).exp();
        let (mut e, mut r) = (0.0, 0.0);
        for p in 0..mesh.num_nodes() {
            let ex = decay * v0[p];
            e += m[p] * (v.at(n)[p] - ex).powi(2);
            r += m[p] * ex * ex;
        }
        assert!((e / r).sqrt() < 0.05, "relative error {}", (e / r).sqrt());
    }

    #[test]
    fn forward_and_backward_solvers_are_adjoint() {
        let mesh = BoxMesh::unit(2, 10).unwrap();
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let b: Vec<Tensor> = (0..mesh.num_cells())
            .map(|c| if mesh.centroid(c)[0] < 0.4 { Tensor::diag([2.0, 0.5, 1.0]) } else { Tensor::identity() })
            .collect();
        let nt = grid.num_times();
        let np = mesh.num_nodes();
        let mut s = SpaceTimeField::zeros(np, nt);
        let mut r = SpaceTimeField::zeros(np, nt);
        for n in 0..nt {
            for p in 0..np {
                let x = mesh.node(p);
                s.at_mut(n)[p] = (3.0 * x[0] + n as f64 * 0.1).sin() + x[1];
                r.at_mut(n)[p] = (x[0] * x[1] * 5.0 - n as f64 * 0.05).cos();
            }
        }
        let solver = DampedSolver::new(&mesh, &grid, 3.0, Medium::Static(&b)).unwrap();
        let w = (0, grid.n_steps);
        let u = solver.solve(Direction::Forward, w, None, Some(&s), None).unwrap();
        let z = solver.solve(Direction::Backward, w, None, Some(&r), None).unwrap();
        // sum_{n=1}^N <u_n, r_{n-1}>_M = sum_{n=1}^N <z_{n-1}, s_n>_M.
        let m = &solver.mass;
        let (mut lhs, mut rhs) = (0.0, 0.0);
        for n in 1..=grid.n_steps {
            for p in 0..np {
                lhs += m[p] * u.at(n)[p] * r.at(n - 1)[p];
                rhs += m[p] * z.at(n - 1)[p] * s.at(n)[p];
            }
        }
        assert!(((lhs - rhs) / lhs.abs()).abs() < 1e-8, "{lhs} {rhs}");
    }

    #[test]
    fn linear_profile_has_unit_normal_flux() {
        let mesh = BoxMesh::unit(2, 8).unwrap();
        let grid = TimeGrid::new(0.25, 16).unwrap();
        let b = identity(&mesh);
        let np = mesh.num_nodes();
        let mut v = SpaceTimeField::zeros(np, grid.num_times());
        for n in 0..grid.num_times() {
            for p in 0..np {
                v.at_mut(n)[p] = mesh.node(p)[0];
            }
        }
        let solver = DampedSolver::new(&mesh, &grid, 0.0, Medium::Static(&b)).unwrap();
        let f = solver.flux(&v, Direction::Forward, (grid.n0(), grid.n_t()), None).unwrap();
        let row = f.at_time(grid.n0() + 1).unwrap();
        for (j, &p) in f.nodes.iter().enumerate() {
            let x = mesh.node(p as usize);
            let corner = (x[0] == 0.0 || x[0] == 1.0) && (x[1] == 0.0 || x[1] == 1.0);
            if corner {
                continue;
            }
            let nu1 = if x[0] == 0.0 { -1.0 } else if x[0] == 1.0 { 1.0 } else { 0.0 };
            assert!((row[j] - nu1).abs() < 1e-12, "{x:?} {}", row[j]);
        }
        let c = SpaceTimeField { n_nodes: np, n_times: grid.num_times(), data: vec![3.0; np * grid.num_times()] };
        let f = solver.flux(&c, Direction::Forward, (grid.n0(), grid.n_t()), None).unwrap();
        assert!(f.data.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn flux_balances_the_change_of_heat() {
        let mesh = BoxMesh::unit(2, 12).unwrap();
        let grid = TimeGrid::new(0.5, 32).unwrap();
        let b = identity(&mesh);
        let mut f = BoundaryField::zeros(&mesh, 0, grid.num_times());
        for n in 0..grid.num_times() {
            let t = grid.t(n);
            let nodes = f.nodes.clone();
            let row = f.at_time_mut(n);
            for (j, &p) in nodes.iter().enumerate() {
                let x = mesh.node(p as usize);
                row[j] = (2.0 * t + x[0]).sin() * x[1];
            }
        }
        let v0 = vec![0.0; mesh.num_nodes()];
        let v = solve_heat(Medium::Static(&b), &f, &v0, &mesh, &grid).unwrap();
        let solver = DampedSolver::new(&mesh, &grid, 0.0, Medium::Static(&b)).unwrap();
        let fl = solver.flux(&v, Direction::Forward, (grid.n0(), grid.n_t()), None).unwrap();
        let m = &solver.mass;
        for n in grid.n0() + 1..=grid.n_t() {
            let total: f64 = fl.at_time(n).unwrap().iter().zip(&fl.mass).map(|(a, b)| a * b).sum();
            let heat: f64 = (0..mesh.num_nodes()).map(|p| m[p] * (v.at(n)[p] - v.at(n - 1)[p])).sum::<f64>() / grid.dt;
            assert!((total - heat).abs() <= 1e-8 * (1.0 + heat.abs()), "{total} {heat}");
        }
    }

    #[test]
    fn discrete_maximum_principle() {
        let mesh = BoxMesh::unit(2, 12).unwrap();
        let grid = TimeGrid::new(0.5, 32).unwrap();
        let b = identity(&mesh);
        let mut f = BoundaryField::zeros(&mesh, 0, grid.num_times());
        for (k, v) in f.data.iter_mut().enumerate() {
            *v = 0.5 + 0.5 * ((k as f64) * 0.37).sin();
        }
        let v0: Vec<f64> = (0..mesh.num_nodes()).map(|p| 0.5 + 0.5 * (p as f64 * 1.3).cos()).collect();
        let v = solve_heat(Medium::Static(&b), &f, &v0, &mesh, &grid).unwrap();
        for n in grid.n0()..=grid.n_t() {
            assert!(v.at(n).iter().all(|x| *x >= -1e-12 && *x <= 1.0 + 1e-12));
        }
    }

    #[test]
    fn damped_steady_state_matches_screened_solve() {
        let mesh = BoxMesh::unit(2, 16).unwrap();
        let grid = TimeGrid::new(1.0, 32).unwrap();
        let b = identity(&mesh);
        let tau = 8.0;
        let np = mesh.num_nodes();
        let src: Vec<f64> = (0..np).map(|p| 1.0 + mesh.node(p)[0]).collect();
        let mut s = SpaceTimeField::zeros(np, grid.num_times());
        for n in 0..grid.num_times() {
            s.at_mut(n).copy_from_slice(&src);
        }
        let u = solve_damped(Medium::Static(&b), tau, Some(&s), None, None, Direction::Forward, (0, grid.n_steps), &mesh, &grid)
            .unwrap();
        let p = solve_screened(&b, tau, &src, &mesh).unwrap();
        let last = u.at(grid.n_steps);
        let gap = last.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = p.iter().fold(0.0, |a: f64, b| a.max(b.abs()));
        assert!(gap <= 0.1 * scale, "{gap} {scale}");
    }

    #[test]
    fn screened_solutions_decrease_with_tau() {
        let mesh = BoxMesh::unit(2, 16).unwrap();
        let b = identity(&mesh);
        let rhs: Vec<f64> = (0..mesh.num_nodes()).map(|p| (mesh.node(p)[1] * 7.0).sin().abs()).collect();
        let m = mesh.lumped_mass();
        let norm = |v: &[f64]| v.iter().zip(&m).map(|(a, b)| a * a * b).sum::<f64>().sqrt();
        let mut last = f64::INFINITY;
        for tau in [1.0, 2.0, 4.0, 8.0, 16.0] {
            let p = solve_screened(&b, tau, &rhs, &mesh).unwrap();
            assert!(p.iter().all(|v| *v >= 0.0));
            let n = norm(&p);
            assert!(n <= last && n * tau * tau <= norm(&rhs) * (1.0 + 1e-12));
            last = n;
        }
    }

    fn smooth_trace(mesh: &BoxMesh, grid: &TimeGrid, k: f64) -> BoundaryField {
        let mut f = BoundaryField::zeros(mesh, 0, grid.num_times());
        for n in 0..grid.num_times() {
            let t = grid.t(n);
            let nodes = f.nodes.clone();
            let row = f.at_time_mut(n);
            for (j, &p) in nodes.iter().enumerate() {
                let x = mesh.node(p as usize);
                row[j] = (k * x[0] + t).cos() + x[1] * t;
            }
        }
        f
    }

    #[test]
    fn damped_dn_map_is_affine() {
        let mesh = BoxMesh::unit(2, 8).unwrap();
        let grid = TimeGrid::new(0.5, 16).unwrap();
        let b = identity(&mesh);
        let v0: Vec<f64> = (0..mesh.num_nodes()).map(|p| mesh.node(p)[0]).collect();
        let dn = assemble_damped_dn(Medium::Static(&b), &v0, 1.5, &mesh, &grid).unwrap();
        let f1 = smooth_trace(&mesh, &grid, 2.0);
        let f2 = smooth_trace(&mesh, &grid, 5.0);
        let mut f12 = f1.clone();
        f12.data.iter_mut().zip(&f2.data).for_each(|(a, b)| *a += b);
        let zero = BoundaryField::zeros(&mesh, 0, grid.num_times());
        let g0 = dn.apply(&zero).unwrap();
        let (g1, g2, g12) = (dn.apply(&f1).unwrap(), dn.apply(&f2).unwrap(), dn.apply(&f12).unwrap());
        for k in 0..g0.data.len() {
            let lin = (g1.data[k] - g0.data[k]) + (g2.data[k] - g0.data[k]);
            assert!((g12.data[k] - g0.data[k] - lin).abs() < 1e-10);
        }
        let dz = assemble_damped_dn(Medium::Static(&b), &vec![0.0; mesh.num_nodes()], 1.5, &mesh, &grid).unwrap();
        assert!(dz.apply(&zero).unwrap().data.iter().all(|v| *v == 0.0));
    }

    /// Damped flux and rescaled undamped flux on a grid with `spu` steps
    /// per unit time, for compatible smooth data.
    fn two_paths(spu: usize) -> (TimeGrid, BoundaryField, BoundaryField) {
        let mesh = BoxMesh::unit(2, 6).unwrap();
        let grid = TimeGrid::new(1.0 / 64.0, spu).unwrap();
        let b = identity(&mesh);
        let tau = 1.0;
        let t_final = grid.t_final;
        let g = |x: &crate::math::Point, t: f64| 1.0 + x[0] * x[1] + 0.5 * (3.0 * x[0] + 2.0 * t).sin();
        let v0: Vec<f64> = (0..mesh.num_nodes()).map(|p| g(&mesh.node(p), 0.0)).collect();
        let mut ft = BoundaryField::zeros(&mesh, 0, grid.num_times());
        let mut f = ft.clone();
        for n in 0..grid.num_times() {
            let (t, nodes) = (grid.t(n), ft.nodes.clone());
            let e = (-tau * tau * (t + t_final)).exp();
            for (j, &p) in nodes.iter().enumerate() {
                let v = g(&mesh.node(p as usize), t.max(0.0));
                ft.at_time_mut(n)[j] = e * v;
                f.at_time_mut(n)[j] = v;
            }
        }
        let dn = assemble_damped_dn(Medium::Static(&b), &v0, tau, &mesh, &grid).unwrap();
        let damped = dn.apply(&ft).unwrap();
        let heat = DampedSolver::new(&mesh, &grid, 0.0, Medium::Static(&b)).unwrap();
        let w = (grid.n0(), grid.n_t());
        let v = heat.solve(Direction::Forward, w, Some(&v0), None, Some(&f)).unwrap();
        let mut raw = heat.flux(&v, Direction::Forward, w, None).unwrap();
        for n in raw.start..raw.end() {
            let e = (-tau * tau * (grid.t(n) + t_final)).exp();
            raw.at_time_mut(n).iter_mut().for_each(|x| *x *= e);
        }
        (grid, damped, raw)
    }

    #[test]
    fn damped_map_matches_rescaled_undamped_map_at_small_tau() {
        // Both schemes are first order in time and differ at O(dt), so each
        // path is Richardson-extrapolated to dt -> 0 before comparing.
        let (gc, dc, rc) = two_paths(4096);
        let (gf, df, rf) = two_paths(8192);
        let (mut gap, mut raw_gap, mut scale) = (0.0f64, 0.0f64, 0.0f64);
        for k in 1..=(gc.n_t() - gc.n0()) {
            let (nc, nf) = (gc.n0() + k, gf.n0() + 2 * k);
            let (a0, a1) = (dc.at_time(nc).unwrap(), df.at_time(nf).unwrap());
            let (b0, b1) = (rc.at_time(nc).unwrap(), rf.at_time(nf).unwrap());
            for j in 0..a0.len() {
                let da = 2.0 * a1[j] - a0[j];
                let db = 2.0 * b1[j] - b0[j];
                gap = gap.max((da - db).abs());
                raw_gap = raw_gap.max((a1[j] - b1[j]).abs());
                scale = scale.max(da.abs());
            }
        }
        assert!(gap / scale < 1e-6, "extrapolated relative gap {} (unextrapolated {})", gap / scale, raw_gap / scale);
    }

    #[test]
    fn moving_medium_caches_per_mask_and_matches_static_when_frozen() {
        use crate::conductivity::{build_conductivity, Background, Fill};
        use crate::geometry::{MotionPath, MovingInclusion, MovingShape, Shape};
        let mesh = BoxMesh::unit(2, 16).unwrap();
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let times: Vec<f64> = (grid.n0()..=grid.n_t()).map(|n| grid.t(n)).collect();
        let ball = Shape::Ball { center: [0.3, 0.5, 0.0], radius: 0.15 };
        let moving = MovingInclusion::new(
            2,
            1.0,
            vec![MovingShape { shape: ball.clone(), path: MotionPath::linear([0.4, 0.0, 0.0], 1.0), active: (f64::NEG_INFINITY, f64::INFINITY) }],
        )
        .unwrap();
        let bg = Background::Uniform(Tensor::identity());
        let pm = build_conductivity(&bg, &moving, Fill::Scaled(2.0), &times, &mesh, &Default::default()).unwrap();
        let f = smooth_trace(&mesh, &grid, 2.0);
        let v0 = vec![0.0; mesh.num_nodes()];
        let dn = assemble_damped_dn(Medium::Moving(&pm), &v0, 2.0, &mesh, &grid).unwrap();
        dn.apply(&f).unwrap();
        assert!(dn.solver.cached() > 1);

        let frozen = MovingInclusion::stationary(2, 1.0, vec![ball]).unwrap();
        let ps = build_conductivity(&bg, &frozen, Fill::Scaled(2.0), &times, &mesh, &Default::default()).unwrap();
        let a = ps.a_at(0.0);
        let g1 = assemble_damped_dn(Medium::Moving(&ps), &v0, 2.0, &mesh, &grid).unwrap().apply(&f).unwrap();
        let g2 = assemble_damped_dn(Medium::Static(&a), &v0, 2.0, &mesh, &grid).unwrap().apply(&f).unwrap();
        assert_eq!(g1, g2);
    }
}

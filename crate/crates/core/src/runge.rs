//! Approximation of local solutions on a region around the inclusion by
//! global solutions driven only by boundary data.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
#[allow(unused_imports)]
use num_traits::Float;

use crate::conductivity::Tensor;
use crate::geometry::{MovingInclusion, ProbeCurve};
use crate::linalg::Csr;
use crate::math::dist;
use crate::mesh::{BoxMesh, SpaceTimeField};
use crate::pde::{add_cells, BoundaryField, DampedSolver, Direction, Medium};
use crate::{Error, Result};

/// Dense eigen-decompositions of the boundary graph are capped here.
pub const MAX_TRACE_NODES: usize = 2000;

/// Boundary trace modes (graph-Laplacian eigenvectors, orthonormal in the
/// lumped boundary mass) and the number of time hats.
#[derive(Debug, Clone)]
pub struct BoundaryBasis {
    pub nodes: Vec<u32>,
    pub mass: Vec<f64>,
    pub modes: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub n_time: usize,
    pub warnings: Vec<String>,
}

impl BoundaryBasis {
    pub fn n_space(&self) -> usize {
        self.modes.len()
    }

    pub fn len(&self) -> usize {
        self.n_space() * self.n_time
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest deviation of the mode Gram matrix from the identity.
    pub fn gram_error(&self) -> f64 {
        let mut e: f64 = 0.0;
        for (i, a) in self.modes.iter().enumerate() {
            for (j, b) in self.modes.iter().enumerate() {
                let g: f64 = a.iter().zip(b).zip(&self.mass).map(|((x, y), m)| x * y * m).sum();
                e = e.max((g - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        e
    }
}

pub fn boundary_basis(mesh: &BoxMesh, n_space: usize, n_time: usize) -> Result<BoundaryBasis> {
    if n_space == 0 || n_time == 0 {
        return Err(Error::Invalid("basis counts must be at least 1".into()));
    }
    let bnodes = mesh.boundary_nodes();
    let nb = bnodes.len();
    if nb > MAX_TRACE_NODES {
        return Err(Error::Resolution(format!("{nb} boundary nodes exceed the dense trace-mode limit {MAX_TRACE_NODES}")));
    }
    let mut local = vec![usize::MAX; mesh.num_nodes()];
    for (j, &p) in bnodes.iter().enumerate() {
        local[p] = j;
    }
    let bm = mesh.boundary_mass();
    let mass: Vec<f64> = bnodes.iter().map(|&p| bm[p]).collect();
    let mut lap = DMatrix::<f64>::zeros(nb, nb);
    let mut seen = alloc::collections::BTreeSet::new();
    for f in mesh.facets() {
        let v = &f.nodes[..mesh.dim];
        for a in 0..v.len() {
            for b in a + 1..v.len() {
                let (i, j) = (local[v[a] as usize], local[v[b] as usize]);
                if seen.insert((i.min(j), i.max(j))) {
                    lap[(i, i)] += 1.0;
                    lap[(j, j)] += 1.0;
                    lap[(i, j)] -= 1.0;
                    lap[(j, i)] -= 1.0;
                }
            }
        }
    }
    let s: Vec<f64> = mass.iter().map(|m| 1.0 / m.sqrt()).collect();
    for i in 0..nb {
        for j in 0..nb {
            lap[(i, j)] *= s[i] * s[j];
        }
    }
    let eig = SymmetricEigen::new(lap);
    let mut order: Vec<usize> = (0..nb).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut warnings = Vec::new();
    let keep = if n_space > nb {
        warnings.push(format!("n_space = {n_space} truncated to the trace dimension {nb}"));
        nb
    } else {
        n_space
    };
    let mut modes = Vec::with_capacity(keep);
    let mut eigenvalues = Vec::with_capacity(keep);
    for &k in order.iter().take(keep) {
        let col = eig.eigenvectors.column(k);
        // Fix the sign so the basis is deterministic.
        let pivot = (0..nb).max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs())).unwrap();
        let sg = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        modes.push((0..nb).map(|i| sg * col[i] * s[i]).collect());
        eigenvalues.push(eig.eigenvalues[k]);
    }
    Ok(BoundaryBasis { nodes: bnodes.iter().map(|&p| p as u32).collect(), mass, modes, eigenvalues, n_time, warnings })
}

/// Piecewise-linear hats in time, clustered around `theta`. Hat `k` peaks
/// at `knots[k + 1]`; `knots[0]` is the end carrying no data. Hats built
/// with `K` and `2K` pieces are nested.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeHats {
    pub knots: Vec<f64>,
}

impl TimeHats {
    pub fn new(t_lo: f64, t_hi: f64, theta: f64, count: usize, direction: Direction) -> Self {
        let theta = theta.clamp(t_lo, t_hi);
        let map = |s: f64| {
            if s >= 0.0 {
                theta + (t_hi - theta) * s.powf(1.5)
            } else {
                theta - (theta - t_lo) * (-s).powf(1.5)
            }
        };
        let mut knots: Vec<f64> = (0..=count).map(|j| map(-1.0 + 2.0 * j as f64 / count as f64)).collect();
        if direction == Direction::Backward {
            knots.reverse();
        }
        TimeHats { knots }
    }

    pub fn len(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, k: usize, t: f64) -> f64 {
        let (a, c) = (self.knots[k], self.knots[k + 1]);
        let lin = |x: f64, from: f64, to: f64| (x - from) / (to - from);
        let (lo, hi) = if a < c { (a, c) } else { (c, a) };
        if t >= lo && t <= hi {
            return lin(t, a, c).clamp(0.0, 1.0);
        }
        if let Some(&e) = self.knots.get(k + 2) {
            let (lo, hi) = if c < e { (c, e) } else { (e, c) };
            if t >= lo && t <= hi {
                return lin(t, e, c).clamp(0.0, 1.0);
            }
        }
        0.0
    }
}

/// Space-time region `U`: the cells within `margin` of `D_t`, per grid
/// time of the window.
#[derive(Debug, Clone)]
pub struct RungeRegion {
    pub margin: f64,
    pub window: (usize, usize),
    masks: Vec<Vec<bool>>,
    index: Vec<usize>,
    /// Smallest distance from a cell of `U_t` to `y(t)` minus `1/tau`.
    pub tube_gap: f64,
    pub connected: bool,
}

impl RungeRegion {
    /// Margin `max(2/tau, 2h)`.
    pub fn build(
        mesh: &BoxMesh,
        incl: &MovingInclusion,
        curve: Option<&ProbeCurve>,
        grid: &crate::mesh::TimeGrid,
        tau: f64,
        window: (usize, usize),
    ) -> Result<Self> {
        Self::with_margin(mesh, incl, curve, grid, tau, window, (2.0 / tau).max(2.0 * mesh.h))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_margin(
        mesh: &BoxMesh,
        incl: &MovingInclusion,
        curve: Option<&ProbeCurve>,
        grid: &crate::mesh::TimeGrid,
        tau: f64,
        window: (usize, usize),
        margin: f64,
    ) -> Result<Self> {
        let (lo, hi) = window;
        if lo > hi || hi >= grid.num_times() {
            return Err(Error::Invalid(format!("window [{lo}, {hi}] outside the time grid")));
        }
        let nc = mesh.num_cells();
        let cents: Vec<_> = (0..nc).map(|c| mesh.centroid(c)).collect();
        let mut masks: Vec<Vec<bool>> = Vec::new();
        let mut index = Vec::with_capacity(hi - lo + 1);
        let mut gap = f64::INFINITY;
        for n in lo..=hi {
            let t = grid.t(n).clamp(0.0, incl.t_final);
            let m: Vec<bool> = cents.iter().map(|x| incl.distances(x, t).0 <= margin).collect();
            let id = match masks.iter().rposition(|k| *k == m) {
                Some(i) => i,
                None => {
                    masks.push(m);
                    masks.len() - 1
                }
            };
            index.push(id);
            if let Some(c) = curve {
                let y = c.position(grid.t(n));
                let d = (0..nc).filter(|&k| masks[id][k]).map(|k| dist(&cents[k], &y)).fold(f64::INFINITY, f64::min);
                gap = gap.min(d - 1.0 / tau);
            }
        }
        let connected = masks.iter().all(|m| complement_connected(mesh, m));
        Ok(RungeRegion { margin, window, masks, index, tube_gap: gap, connected })
    }

    pub fn mask(&self, n: usize) -> &[bool] {
        &self.masks[self.index[n - self.window.0]]
    }

    pub fn is_empty(&self) -> bool {
        self.masks.iter().all(|m| !m.iter().any(|&b| b))
    }

    /// Tube and region separated by at least two cells.
    pub fn separated(&self, h: f64) -> bool {
        self.tube_gap >= 2.0 * h
    }
}

fn complement_connected(mesh: &BoxMesh, mask: &[bool]) -> bool {
    let nc = mesh.num_cells();
    let mut node_cells: Vec<Vec<u32>> = vec![Vec::new(); mesh.num_nodes()];
    for c in (0..nc).filter(|&c| !mask[c]) {
        for &p in mesh.cell(c) {
            node_cells[p as usize].push(c as u32);
        }
    }
    let Some(start) = (0..nc).find(|&c| !mask[c]) else {
        return true;
    };
    let mut seen = vec![false; nc];
    let mut stack = vec![start];
    seen[start] = true;
    let mut count = 1;
    while let Some(c) = stack.pop() {
        for &p in mesh.cell(c) {
            for &d in &node_cells[p as usize] {
                let d = d as usize;
                if !seen[d] {
                    seen[d] = true;
                    count += 1;
                    stack.push(d);
                }
            }
        }
    }
    count == mask.iter().filter(|&&b| !b).count()
}

#[derive(Debug, Clone)]
pub struct RungeApproximant {
    /// Coefficients, index `i * n_time + k` for trace mode `i`, hat `k`.
    pub coefficients: Vec<f64>,
    /// Relative error `|u_j - target|_U / |target|_U`.
    pub residual: f64,
    pub target_norm: f64,
    pub lambda_reg: f64,
    /// Set when the normal matrix needed spectral truncation.
    pub flagged: bool,
    pub truncated: usize,
    pub direction: Direction,
    pub window: (usize, usize),
    pub tau: f64,
    /// The fitted global solution on the whole mesh.
    pub field: SpaceTimeField,
    /// Its boundary data over the window.
    pub trace: BoundaryField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RungeOptions {
    /// Absolute Tikhonov weight; `None` selects `1e-8` times the largest
    /// eigenvalue of the normal matrix.
    pub lambda_reg: Option<f64>,
    /// Spectral truncation threshold on the condition number.
    pub cond_limit: f64,
    /// Impulse responses are cut once they fall below this fraction of
    /// their initial size.
    pub decay_tol: f64,
    /// Time around which the hats cluster; the window midpoint if unset.
    pub focus: Option<f64>,
}

impl Default for RungeOptions {
    fn default() -> Self {
        RungeOptions { lambda_reg: None, cond_limit: 1e12, decay_tol: 1e-14, focus: None }
    }
}

/// Weighted seminorm pieces on `U`: `K_U + tau^2 M_U` and `M_U`, restricted
/// to the union node set.
struct Weights {
    a: Csr,
    m: Vec<f64>,
}

fn region_weights(mesh: &BoxMesh, mask: &[bool], keep: &[bool], tau: f64) -> Weights {
    let mut k = Csr::with_pattern(&mesh.pattern());
    let id = vec![Tensor::identity(); mesh.num_cells()];
    let cells: Vec<usize> = (0..mesh.num_cells()).filter(|&c| mask[c]).collect();
    add_cells(&mut k, mesh, &id, cells.iter().copied(), 1.0);
    let mut m = vec![0.0; mesh.num_nodes()];
    let share = mesh.cell_volume() / (mesh.dim + 1) as f64;
    for &c in &cells {
        for &p in mesh.cell(c) {
            m[p as usize] += share;
        }
    }
    let k = k.shifted(tau * tau, &m);
    let (a, _) = k.restrict(keep);
    let m = (0..mesh.num_nodes()).filter(|&p| keep[p]).map(|p| m[p]).collect();
    Weights { a, m }
}

/// Discrete `H^{1,0} & H^{0,1}` square norm of `e` over `U` and the window.
fn region_norm2(e: &SpaceTimeField, region: &RungeRegion, weights: &[Weights], keep_nodes: &[usize], dt: f64, tau: f64) -> f64 {
    let (lo, hi) = region.window;
    let nu = keep_nodes.len();
    let mut prev = vec![0.0; nu];
    let mut y = vec![0.0; nu];
    let mut acc = 0.0;
    for n in lo..=hi {
        let w = &weights[region.index[n - lo]];
        let cur: Vec<f64> = keep_nodes.iter().map(|&p| e.at(n)[p]).collect();
        w.a.matvec(&cur, &mut y);
        acc += dt * cur.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
        if n > lo {
            acc += (cur.iter().zip(&prev).zip(&w.m).map(|((a, b), m)| m * (a - b) * (a - b)).sum::<f64>()) / (dt * tau * tau);
        }
        prev = cur;
    }
    acc
}

/// Tikhonov least-squares fit of `target` (a full-grid field on `mesh`)
/// on `region` by `S_0 + sum_k c_k S(phi_k)`, where `S_0` carries the
/// target's own trace and its value at the starting end of the window.
pub fn runge_fit(
    target: &SpaceTimeField,
    basis: &BoundaryBasis,
    region: &RungeRegion,
    solver: &DampedSolver<'_>,
    direction: Direction,
    opts: &RungeOptions,
) -> Result<RungeApproximant> {
    let mesh = solver.mesh;
    if let Medium::Moving(_) = solver.medium {
        return Err(Error::Contract("Runge fits need a static background".into()));
    }
    let np = mesh.num_nodes();
    if target.n_nodes != np || target.n_times != solver.grid.num_times() {
        return Err(Error::Invalid("target does not match mesh and grid".into()));
    }
    if basis.nodes.len() != mesh.boundary_nodes().len() {
        return Err(Error::Invalid("basis does not match the mesh boundary".into()));
    }
    let (lo, hi) = region.window;
    let tau = solver.tau;
    let dt = solver.dt();
    let grid = &solver.grid;
    let start = if direction == Direction::Forward { lo } else { hi };
    let own = BoundaryField::trace(mesh, target, lo, hi - lo + 1);
    let s0 = solver.solve(direction, (lo, hi), Some(target.at(start)), None, Some(&own))?;

    // Union of the closures of the region masks.
    let mut keep = vec![false; np];
    for m in &region.masks {
        for c in (0..mesh.num_cells()).filter(|&c| m[c]) {
            for &p in mesh.cell(c) {
                keep[p as usize] = true;
            }
        }
    }
    let unodes: Vec<usize> = (0..np).filter(|&p| keep[p]).collect();
    let nu = unodes.len();
    let weights: Vec<Weights> = region.masks.iter().map(|m| region_weights(mesh, m, &keep, tau)).collect();

    let focus = opts.focus.unwrap_or(0.5 * (grid.t(lo) + grid.t(hi)));
    let hats = TimeHats::new(grid.t(lo), grid.t(hi), focus, basis.n_time, direction);
    let ns = basis.n_space();
    let nk = hats.len();
    let ncols = ns * nk;

    // Data steps carry boundary values; hat values there.
    let data_steps: Vec<usize> = match direction {
        Direction::Forward => (lo + 1..=hi).collect(),
        Direction::Backward => (lo..hi).collect(),
    };
    let mut hv = vec![0.0; nk * (hi - lo + 1)];
    for &m in &data_steps {
        for k in 0..nk {
            hv[k * (hi - lo + 1) + (m - lo)] = hats.value(k, grid.t(m));
        }
    }
    let hat = |k: usize, m: usize| hv[k * (hi - lo + 1) + (m - lo)];

    // Impulse responses on the union nodes, lag by lag.
    let mut resp: Vec<Vec<Vec<f64>>> = Vec::with_capacity(ns);
    let mut g = vec![0.0; np];
    let max_lag = hi - lo;
    let probe_n = if direction == Direction::Forward { lo + 1 } else { lo };
    for mode in &basis.modes {
        for (j, &p) in basis.nodes.iter().enumerate() {
            g[p as usize] = mode[j];
        }
        let zero = vec![0.0; np];
        let mut v = solver.step(probe_n, &zero, None, Some(&g))?;
        let first = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let mut lags = Vec::new();
        let zg = vec![0.0; np];
        for lag in 0..max_lag {
            lags.push(unodes.iter().map(|&p| v[p]).collect::<Vec<f64>>());
            let size = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            if lag + 1 == max_lag || size < opts.decay_tol * first {
                break;
            }
            v = solver.step(probe_n, &v, None, Some(&zg))?;
        }
        resp.push(lags);
    }
    let n_lags = resp.iter().map(|r| r.len()).max().unwrap_or(0);

    // Column fields at grid time n, for the active columns.
    let column_fields = |n: usize| -> (Vec<usize>, DMatrix<f64>) {
        let ms: Vec<usize> = match direction {
            Direction::Forward => data_steps.iter().copied().filter(|&m| m <= n && n - m < n_lags).collect(),
            Direction::Backward => data_steps.iter().copied().filter(|&m| m >= n && m - n < n_lags).collect(),
        };
        let mut cols = Vec::new();
        let mut blocks: Vec<(usize, Vec<(usize, f64)>)> = Vec::new();
        for k in 0..nk {
            let w: Vec<(usize, f64)> = ms
                .iter()
                .filter_map(|&m| {
                    let v = hat(k, m);
                    (v != 0.0).then(|| (if m <= n { n - m } else { m - n }, v))
                })
                .collect();
            if !w.is_empty() {
                blocks.push((k, w));
            }
        }
        for i in 0..ns {
            for (k, _) in &blocks {
                cols.push(i * nk + k);
            }
        }
        let mut x = DMatrix::<f64>::zeros(nu, cols.len());
        let mut c = 0;
        for i in 0..ns {
            for (_, w) in &blocks {
                let mut col = x.column_mut(c);
                for &(lag, v) in w {
                    if let Some(r) = resp[i].get(lag) {
                        for q in 0..nu {
                            col[q] += v * r[q];
                        }
                    }
                }
                c += 1;
            }
        }
        (cols, x)
    };

    let mut gmat = DMatrix::<f64>::zeros(ncols, ncols);
    let mut rhs = DVector::<f64>::zeros(ncols);
    let mut prev: Option<(Vec<usize>, DMatrix<f64>, Vec<f64>)> = None;
    let mut y = vec![0.0; nu];
    let order: Vec<usize> = match direction {
        Direction::Forward => (lo..=hi).collect(),
        Direction::Backward => (lo..=hi).rev().collect(),
    };
    for &n in &order {
        let w = &weights[region.index[n - lo]];
        let (cols, x) = column_fields(n);
        let d: Vec<f64> = unodes.iter().map(|&p| target.at(n)[p] - s0.at(n)[p]).collect();
        if !cols.is_empty() {
            let mut ax = DMatrix::<f64>::zeros(nu, cols.len());
            for c in 0..cols.len() {
                let xc: Vec<f64> = x.column(c).iter().copied().collect();
                w.a.matvec(&xc, &mut y);
                ax.column_mut(c).copy_from_slice(&y);
            }
            let g = x.tr_mul(&ax) * dt;
            let ad = DVector::from_column_slice(&d);
            let r = ax.tr_mul(&ad) * dt;
            for (a, &ca) in cols.iter().enumerate() {
                rhs[ca] += r[a];
                for (bb, &cb) in cols.iter().enumerate() {
                    gmat[(ca, cb)] += g[(a, bb)];
                }
            }
        }
        // Time differences between consecutive steps of the sweep.
        if let Some((pcols, px, pd)) = &prev {
            let mut all: Vec<usize> = cols.iter().chain(pcols.iter()).copied().collect();
            all.sort_unstable();
            all.dedup();
            if !all.is_empty() {
                let mut e = DMatrix::<f64>::zeros(nu, all.len());
                for (c, &col) in cols.iter().enumerate() {
                    let j = all.binary_search(&col).unwrap();
                    e.column_mut(j).copy_from(&x.column(c));
                }
                for (c, &col) in pcols.iter().enumerate() {
                    let j = all.binary_search(&col).unwrap();
                    let mut ec = e.column_mut(j);
                    ec -= px.column(c);
                }
                let wt = 1.0 / (dt * tau * tau);
                let mut me = e.clone();
                for q in 0..nu {
                    for j in 0..all.len() {
                        me[(q, j)] *= w.m[q] * wt;
                    }
                }
                let g = e.tr_mul(&me);
                let dd: Vec<f64> = d.iter().zip(pd).map(|(a, b)| a - b).collect();
                let r = me.tr_mul(&DVector::from_column_slice(&dd));
                for (a, &ca) in all.iter().enumerate() {
                    rhs[ca] += r[a];
                    for (bb, &cb) in all.iter().enumerate() {
                        gmat[(ca, cb)] += g[(a, bb)];
                    }
                }
            }
        }
        prev = Some((cols, x, d));
    }

    // Spectral Tikhonov solve.
    let eig = SymmetricEigen::new(gmat);
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v));
    let lambda = opts.lambda_reg.unwrap_or(1e-8 * lmax);
    let floor = lmax / opts.cond_limit;
    let mut coefficients = vec![0.0; ncols];
    let mut truncated = 0;
    for j in 0..ncols {
        let l = eig.eigenvalues[j];
        if l + lambda <= floor || l <= 0.0 && lambda == 0.0 {
            truncated += 1;
            continue;
        }
        let v = eig.eigenvectors.column(j);
        let proj = v.dot(&rhs) / (l + lambda);
        for (c, vc) in coefficients.iter_mut().zip(v.iter()) {
            *c += proj * vc;
        }
    }
    let flagged = truncated > 0 && lmax > 0.0;

    // The fitted global solution.
    let mut trace = own;
    for n in lo..=hi {
        let row = trace.at_time_mut(n);
        for (i, mode) in basis.modes.iter().enumerate() {
            for k in 0..nk {
                let h = hat(k, n);
                let c = coefficients[i * nk + k];
                if h != 0.0 && c != 0.0 {
                    for (j, r) in row.iter_mut().enumerate() {
                        *r += c * h * mode[j];
                    }
                }
            }
        }
    }
    let field = solver.solve(direction, (lo, hi), Some(target.at(start)), None, Some(&trace))?;
    let mut err = SpaceTimeField::zeros(np, target.n_times);
    for n in lo..=hi {
        let (f, t) = (field.at(n), target.at(n));
        for (p, e) in err.at_mut(n).iter_mut().enumerate() {
            *e = f[p] - t[p];
        }
    }
    let mut tw = SpaceTimeField::zeros(np, target.n_times);
    for n in lo..=hi {
        tw.at_mut(n).copy_from_slice(target.at(n));
    }
    let target_norm = region_norm2(&tw, region, &weights, &unodes, dt, tau).sqrt();
    let abs = region_norm2(&err, region, &weights, &unodes, dt, tau).sqrt();
    let residual = if target_norm > 0.0 { abs / target_norm } else { abs };
    Ok(RungeApproximant {
        coefficients,
        residual,
        target_norm,
        lambda_reg: lambda,
        flagged,
        truncated,
        direction,
        window: (lo, hi),
        tau,
        field,
        trace,
    })
}

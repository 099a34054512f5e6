//! Structured simplicial meshes of boxes and the space-time grid.
//!
//! A box is cut into squares (cubes) of side `h`; each square is split into
//! two right triangles and each cube into six Kuhn tetrahedra. All cells of
//! one kind are translates of each other, so element gradients are shared.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::Point;
use crate::{Error, Result};

/// Kuhn permutations; tet `k` walks the axes in `PERMS[k]` order.
const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// A boundary facet with its outward unit normal.
#[derive(Debug, Clone)]
pub struct BoundaryFacet {
    pub nodes: [u32; 3],
    pub normal: Point,
    pub measure: f64,
}

#[derive(Debug, Clone)]
pub struct BoxMesh {
    pub dim: usize,
    /// Cells per axis (unused axes hold 0).
    pub n: [usize; 3],
    pub lo: Point,
    pub h: f64,
    cells: Vec<[u32; 4]>,
    kind_grads: Vec<[Point; 4]>,
    cell_vol: f64,
    facets: Vec<BoundaryFacet>,
    on_boundary: Vec<bool>,
}

impl BoxMesh {
    /// Box `[lo, lo + n h]` with `n[i]` cells along axis `i`.
    pub fn new(dim: usize, lo: Point, n: [usize; 3], h: f64) -> Result<Self> {
        if !(dim == 2 || dim == 3) {
            return Err(Error::Invalid(format!("dimension {dim} not supported")));
        }
        if h <= 0.0 || (0..dim).any(|i| n[i] == 0) {
            return Err(Error::Invalid("empty mesh".into()));
        }
        let mut n = n;
        if dim == 2 {
            n[2] = 0;
        }
        let mut mesh = BoxMesh {
            dim,
            n,
            lo,
            h,
            cells: Vec::new(),
            kind_grads: Vec::new(),
            cell_vol: 0.0,
            facets: Vec::new(),
            on_boundary: Vec::new(),
        };
        mesh.build();
        Ok(mesh)
    }

    /// Unit square / cube meshed with `cells` squares per side.
    pub fn unit(dim: usize, cells: usize) -> Result<Self> {
        Self::new(dim, [0.0; 3], [cells, cells, cells], 1.0 / cells as f64)
    }

    fn kinds(&self) -> usize {
        if self.dim == 2 {
            2
        } else {
            6
        }
    }

    /// Local vertex offsets (in units of `h`) of cell kind `k`.
    fn kind_offsets(&self, k: usize) -> [[usize; 3]; 4] {
        if self.dim == 2 {
            if k == 0 {
                [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 0, 0]]
            } else {
                [[0, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 0]]
            }
        } else {
            let p = PERMS[k];
            let mut v = [[0usize; 3]; 4];
            for s in 0..3 {
                v[s + 1] = v[s];
                v[s + 1][p[s]] += 1;
            }
            v
        }
    }

    fn build(&mut self) {
        let d = self.dim;
        let kinds = self.kinds();
        // Barycentric gradients per kind: rows of E^{-1}, E = [v_j - v_0].
        for k in 0..kinds {
            let off = self.kind_offsets(k);
            let mut e = [[0.0f64; 3]; 3];
            for j in 0..d {
                for i in 0..d {
                    e[i][j] = (off[j + 1][i] as f64 - off[0][i] as f64) * self.h;
                }
            }
            let inv = invert(&e, d);
            let mut g = [[0.0; 3]; 4];
            for a in 1..=d {
                for i in 0..d {
                    g[a][i] = inv[a - 1][i];
                }
            }
            for i in 0..d {
                g[0][i] = -(1..=d).map(|a| g[a][i]).sum::<f64>();
            }
            self.kind_grads.push(g);
        }
        self.cell_vol = if d == 2 { self.h * self.h / 2.0 } else { self.h.powi(3) / 6.0 };
        let (nx, ny, nz) = (self.n[0], self.n[1], if d == 3 { self.n[2] } else { 1 });
        self.cells.reserve(nx * ny * nz * kinds);
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx {
                    for k in 0..kinds {
                        let off = self.kind_offsets(k);
                        let mut c = [0u32; 4];
                        for a in 0..=d {
                            c[a] = self.node_index([ix + off[a][0], iy + off[a][1], iz + off[a][2]]) as u32;
                        }
                        self.cells.push(c);
                    }
                }
            }
        }
        self.on_boundary = (0..self.num_nodes()).map(|p| self.is_box_boundary(p)).collect();
        // Boundary facets: facets whose vertices share an extreme coordinate.
        let mut facets = Vec::new();
        for c in &self.cells {
            for drop in 0..=d {
                let verts: Vec<u32> = (0..=d).filter(|&a| a != drop).map(|a| c[a]).collect();
                for axis in 0..d {
                    for side in 0..2 {
                        let target = if side == 0 { 0 } else { self.n[axis] };
                        if verts.iter().all(|&v| self.node_ijk(v as usize)[axis] == target) {
                            let mut normal = [0.0; 3];
                            normal[axis] = if side == 0 { -1.0 } else { 1.0 };
                            let mut nodes = [0u32; 3];
                            nodes[..d].copy_from_slice(&verts);
                            let measure = if d == 2 { self.h } else { self.h * self.h / 2.0 };
                            facets.push(BoundaryFacet { nodes, normal, measure });
                        }
                    }
                }
            }
        }
        self.facets = facets;
    }

    pub fn num_nodes(&self) -> usize {
        (0..3).map(|i| if i < self.dim { self.n[i] + 1 } else { 1 }).product()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    #[inline]
    pub fn node_index(&self, ijk: [usize; 3]) -> usize {
        ijk[0] + (self.n[0] + 1) * (ijk[1] + (self.n[1] + 1) * ijk[2])
    }

    #[inline]
    pub fn node_ijk(&self, p: usize) -> [usize; 3] {
        let sx = self.n[0] + 1;
        let sy = self.n[1] + 1;
        [p % sx, (p / sx) % sy, p / (sx * sy)]
    }

    #[inline]
    pub fn node(&self, p: usize) -> Point {
        let ijk = self.node_ijk(p);
        let mut x = [0.0; 3];
        for i in 0..self.dim {
            x[i] = self.lo[i] + ijk[i] as f64 * self.h;
        }
        x
    }

    pub fn hi(&self) -> Point {
        let mut x = self.lo;
        for i in 0..self.dim {
            x[i] += self.n[i] as f64 * self.h;
        }
        x
    }

    fn is_box_boundary(&self, p: usize) -> bool {
        let ijk = self.node_ijk(p);
        (0..self.dim).any(|i| ijk[i] == 0 || ijk[i] == self.n[i])
    }

    #[inline]
    pub fn is_boundary(&self, p: usize) -> bool {
        self.on_boundary[p]
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.on_boundary
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes()).filter(|&p| self.on_boundary[p]).collect()
    }

    pub fn facets(&self) -> &[BoundaryFacet] {
        &self.facets
    }

    #[inline]
    pub fn cell(&self, c: usize) -> &[u32] {
        &self.cells[c][..=self.dim]
    }

    #[inline]
    pub fn cell_kind(&self, c: usize) -> usize {
        c % self.kinds()
    }

    /// Gradients of the barycentric functions of cell `c`.
    #[inline]
    pub fn cell_grads(&self, c: usize) -> &[Point] {
        &self.kind_grads[self.cell_kind(c)][..=self.dim]
    }

    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.cell_vol
    }

    /// Largest cell diameter.
    pub fn diameter(&self) -> f64 {
        self.h * (self.dim as f64).sqrt()
    }

    pub fn centroid(&self, c: usize) -> Point {
        let mut x = [0.0; 3];
        let v = self.cell(c);
        for &p in v {
            let q = self.node(p as usize);
            for i in 0..3 {
                x[i] += q[i];
            }
        }
        let k = v.len() as f64;
        [x[0] / k, x[1] / k, x[2] / k]
    }

    /// Lumped (row-sum) mass: every vertex of a cell gets `vol/(d+1)`.
    pub fn lumped_mass(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.num_nodes()];
        let share = self.cell_vol / (self.dim + 1) as f64;
        for c in 0..self.num_cells() {
            for &p in self.cell(c) {
                m[p as usize] += share;
            }
        }
        m
    }

    /// Lumped boundary mass `int_Gamma phi_i dsigma`.
    pub fn boundary_mass(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.num_nodes()];
        for f in &self.facets {
            let share = f.measure / self.dim as f64;
            for &p in &f.nodes[..self.dim] {
                m[p as usize] += share;
            }
        }
        m
    }

    /// Sorted neighbour lists (including the node itself), i.e. the
    /// sparsity pattern of P1 stiffness matrices.
    pub fn pattern(&self) -> Vec<Vec<u32>> {
        let offs: Vec<[i64; 3]> = if self.dim == 2 {
            alloc::vec![[0, 0, 0], [1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [1, 1, 0], [-1, -1, 0]]
        } else {
            let mut o = alloc::vec![[0, 0, 0], [1, 1, 1], [-1, -1, -1]];
            for i in 0..3 {
                let mut e = [0i64; 3];
                e[i] = 1;
                o.push(e);
                o.push([-e[0], -e[1], -e[2]]);
                for j in (i + 1)..3 {
                    let mut f = e;
                    f[j] = 1;
                    o.push(f);
                    o.push([-f[0], -f[1], -f[2]]);
                }
            }
            o
        };
        (0..self.num_nodes())
            .map(|p| {
                let ijk = self.node_ijk(p);
                let mut row: Vec<u32> = offs
                    .iter()
                    .filter_map(|o| {
                        let mut q = [0usize; 3];
                        for i in 0..3 {
                            let v = ijk[i] as i64 + o[i];
                            let top = if i < self.dim { self.n[i] as i64 } else { 0 };
                            if v < 0 || v > top {
                                return None;
                            }
                            q[i] = v as usize;
                        }
                        Some(self.node_index(q) as u32)
                    })
                    .collect();
                row.sort_unstable();
                row
            })
            .collect()
    }

    /// Cell containing `x` and its barycentric coordinates.
    pub fn locate(&self, x: &Point) -> Option<(usize, [f64; 4])> {
        let d = self.dim;
        let mut ijk = [0usize; 3];
        let mut u = [0.0; 3];
        for i in 0..d {
            let s = (x[i] - self.lo[i]) / self.h;
            if s < -1e-12 || s > self.n[i] as f64 + 1e-12 {
                return None;
            }
            let k = (s.floor().max(0.0) as usize).min(self.n[i] - 1);
            ijk[i] = k;
            u[i] = (s - k as f64).clamp(0.0, 1.0);
        }
        let base = ijk[0] + self.n[0] * (ijk[1] + self.n[1] * ijk[2]);
        if d == 2 {
            if u[0] >= u[1] {
                Some((base * 2, [1.0 - u[0], u[0] - u[1], u[1], 0.0]))
            } else {
                Some((base * 2 + 1, [1.0 - u[1], u[0], u[1] - u[0], 0.0]))
            }
        } else {
            let mut ord = [0usize, 1, 2];
            ord.sort_by(|&a, &b| u[b].partial_cmp(&u[a]).unwrap().then(a.cmp(&b)));
            let k = PERMS.iter().position(|p| *p == ord).unwrap();
            let l = [1.0 - u[ord[0]], u[ord[0]] - u[ord[1]], u[ord[1]] - u[ord[2]], u[ord[2]]];
            Some((base * 6 + k, l))
        }
    }

    /// P1 interpolation of a nodal field.
    pub fn interpolate(&self, f: &[f64], x: &Point) -> Option<f64> {
        let (c, l) = self.locate(x)?;
        Some(self.cell(c).iter().zip(l.iter()).map(|(&p, w)| w * f[p as usize]).sum())
    }

    /// Gradient of a nodal field on cell `c`.
    pub fn cell_gradient(&self, c: usize, f: &[f64]) -> Point {
        let mut g = [0.0; 3];
        for (a, &p) in self.cell(c).iter().enumerate() {
            let ga = self.cell_grads(c)[a];
            for i in 0..3 {
                g[i] += ga[i] * f[p as usize];
            }
        }
        g
    }

    /// Nearest node to `x` (clamped into the box).
    pub fn nearest_node(&self, x: &Point) -> usize {
        let mut ijk = [0usize; 3];
        for i in 0..self.dim {
            let s = ((x[i] - self.lo[i]) / self.h).round();
            ijk[i] = (s.max(0.0) as usize).min(self.n[i]);
        }
        self.node_index(ijk)
    }

    /// Nodes within distance `r` of `x`.
    pub fn nodes_in_ball(&self, x: &Point, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for i in 0..3 {
            if i < self.dim {
                let a = ((x[i] - r - self.lo[i]) / self.h).floor();
                let b = ((x[i] + r - self.lo[i]) / self.h).ceil();
                lo[i] = a.max(0.0) as usize;
                hi[i] = (b.max(0.0) as usize).min(self.n[i]);
                if a > self.n[i] as f64 || b < 0.0 {
                    return out;
                }
            }
        }
        for k in lo[2]..=hi[2] {
            for j in lo[1]..=hi[1] {
                for i in lo[0]..=hi[0] {
                    let p = self.node_index([i, j, k]);
                    if crate::math::dist(&self.node(p), x) <= r {
                        out.push(p);
                    }
                }
            }
        }
        out
    }
}

fn invert(e: &[[f64; 3]; 3], d: usize) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    if d == 2 {
        let det = e[0][0] * e[1][1] - e[0][1] * e[1][0];
        out[0][0] = e[1][1] / det;
        out[0][1] = -e[0][1] / det;
        out[1][0] = -e[1][0] / det;
        out[1][1] = e[0][0] / det;
    } else {
        let m = nalgebra::Matrix3::from_fn(|i, j| e[i][j]);
        let inv = m.try_inverse().expect("degenerate cell");
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = inv[(i, j)];
            }
        }
    }
    out
}

/// Uniform time grid `t_n = -1 + n dt` on `[-1, T + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    pub t_final: f64,
    pub steps_per_unit: usize,
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    /// `T` must be a multiple of `1 / steps_per_unit`.
    pub fn new(t_final: f64, steps_per_unit: usize) -> Result<Self> {
        if t_final <= 0.0 || steps_per_unit == 0 {
            return Err(Error::Invalid("time grid needs T > 0 and steps > 0".into()));
        }
        let m = steps_per_unit as f64;
        let k = (t_final * m).round();
        if (k - t_final * m).abs() > 1e-9 {
            return Err(Error::Invalid(format!("T = {t_final} is not on the time grid")));
        }
        let n_steps = (k as usize) + 2 * steps_per_unit;
        Ok(TimeGrid { t_final, steps_per_unit, dt: 1.0 / m, n_steps })
    }

    #[inline]
    pub fn t(&self, n: usize) -> f64 {
        -1.0 + n as f64 * self.dt
    }

    pub fn num_times(&self) -> usize {
        self.n_steps + 1
    }

    /// Index of a time that must lie on the grid.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let s = (t + 1.0) * self.steps_per_unit as f64;
        let k = s.round();
        if (k - s).abs() > 1e-9 || k < 0.0 || k as usize > self.n_steps {
            return Err(Error::Invalid(format!("time {t} is not a grid point")));
        }
        Ok(k as usize)
    }

    pub fn n0(&self) -> usize {
        self.steps_per_unit
    }

    pub fn n_t(&self) -> usize {
        self.n_steps - self.steps_per_unit
    }
}

/// Nodal values at all grid times, stored time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    pub n_nodes: usize,
    pub n_times: usize,
    pub data: Vec<f64>,
}

impl SpaceTimeField {
    pub fn zeros(n_nodes: usize, n_times: usize) -> Self {
        SpaceTimeField { n_nodes, n_times, data: vec![0.0; n_nodes * n_times] }
    }

    #[inline]
    pub fn at(&self, n: usize) -> &[f64] {
        &self.data[n * self.n_nodes..(n + 1) * self.n_nodes]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.data[n * self.n_nodes..(n + 1) * self.n_nodes]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Restriction to a sub-mesh through a node map.
    pub fn restrict(&self, map: &[u32]) -> SpaceTimeField {
        let mut out = SpaceTimeField::zeros(map.len(), self.n_times);
        for n in 0..self.n_times {
            let src = self.at(n);
            let dst = out.at_mut(n);
            for (k, &p) in map.iter().enumerate() {
                dst[k] = src[p as usize];
            }
        }
        out
    }
}

/// An inner box embedded node-aligned in an outer box `pad` cells wider on
/// every side.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub inner: BoxMesh,
    pub outer: BoxMesh,
    pub pad: usize,
    /// Inner node index to outer node index.
    pub node_map: Vec<u32>,
    /// Inner cell index to outer cell index.
    pub cell_map: Vec<u32>,
}

impl Embedding {
    pub fn new(inner: BoxMesh, pad: usize) -> Result<Self> {
        let d = inner.dim;
        let mut lo = inner.lo;
        let mut n = inner.n;
        for i in 0..d {
            lo[i] -= pad as f64 * inner.h;
            n[i] += 2 * pad;
        }
        let outer = BoxMesh::new(d, lo, n, inner.h)?;
        let node_map = (0..inner.num_nodes())
            .map(|p| {
                let mut ijk = inner.node_ijk(p);
                for v in ijk.iter_mut().take(d) {
                    *v += pad;
                }
                outer.node_index(ijk) as u32
            })
            .collect();
        let kinds = if d == 2 { 2 } else { 6 };
        let cell_map = (0..inner.num_cells())
            .map(|c| {
                let k = c % kinds;
                let b = c / kinds;
                let nx = inner.n[0];
                let ny = inner.n[1];
                let (ix, iy, iz) = (b % nx, (b / nx) % ny, b / (nx * ny));
                let (ox, oy) = (ix + pad, iy + pad);
                let oz = if d == 3 { iz + pad } else { 0 };
                ((ox + outer.n[0] * (oy + outer.n[1] * oz)) * kinds + k) as u32
            })
            .collect();
        Ok(Embedding { inner, outer, pad, node_map, cell_map })
    }

    /// Outer cells that lie inside the inner box.
    pub fn inner_cell_flags(&self) -> Vec<bool> {
        let mut f = vec![false; self.outer.num_cells()];
        for &c in &self.cell_map {
            f[c as usize] = true;
        }
        f
    }
}

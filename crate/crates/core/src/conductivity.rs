//! Cellwise conductivity tensors: the known background `b` and the
//! perturbed field `a` that differs from `b` on the moving inclusion.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::{Matrix2, Matrix3};

use crate::geometry::MovingInclusion;
use crate::math::Point;
use crate::mesh::{BoxMesh, Embedding};
use crate::{Error, Result};

/// Symmetric matrix. Planar problems only use the upper-left 2x2 block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tensor(pub [[f64; 3]; 3]);

impl Tensor {
    pub fn identity() -> Self {
        Self::scalar(1.0)
    }

    pub fn scalar(s: f64) -> Self {
        Self::diag([s, s, s])
    }

    pub fn diag(d: [f64; 3]) -> Self {
        Tensor([[d[0], 0.0, 0.0], [0.0, d[1], 0.0], [0.0, 0.0, d[2]]])
    }

    #[inline]
    pub fn apply(&self, v: &Point) -> Point {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    /// `u . M v`.
    #[inline]
    pub fn quad(&self, u: &Point, v: &Point) -> f64 {
        crate::math::dot(u, &self.apply(v))
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut m = self.0;
        m.iter_mut().flatten().for_each(|v| *v *= s);
        Tensor(m)
    }

    pub fn sub(&self, o: &Tensor) -> Self {
        let mut m = self.0;
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] -= o.0[i][j];
            }
        }
        Tensor(m)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let m = &self.0;
        (m[0][1] - m[1][0]).abs() <= tol && (m[0][2] - m[2][0]).abs() <= tol && (m[1][2] - m[2][1]).abs() <= tol
    }

    /// Eigenvalues of the active block, ascending.
    pub fn eigenvalues(&self, dim: usize) -> Vec<f64> {
        let m = &self.0;
        let mut ev: Vec<f64> = if dim == 2 {
            let a = Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1]);
            a.symmetric_eigenvalues().iter().copied().collect()
        } else {
            let a = Matrix3::new(m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]);
            a.symmetric_eigenvalues().iter().copied().collect()
        };
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ev
    }

    /// Inverse of the active block (the inactive diagonal entry is kept).
    pub fn inverse(&self, dim: usize) -> Option<Self> {
        let m = &self.0;
        if dim == 2 {
            let inv = Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1]).try_inverse()?;
            Some(Tensor([[inv[(0, 0)], inv[(0, 1)], 0.0], [inv[(1, 0)], inv[(1, 1)], 0.0], [0.0, 0.0, m[2][2]]]))
        } else {
            let inv = Matrix3::new(m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2])
                .try_inverse()?;
            let mut out = [[0.0; 3]; 3];
            for (i, row) in out.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = inv[(i, j)];
                }
            }
            Some(Tensor(out))
        }
    }
}

/// Piecewise constant background, evaluated at cell centroids.
#[derive(Debug, Clone, PartialEq)]
pub enum Background {
    Uniform(Tensor),
    /// `below` where `x[axis] < at`, `above` elsewhere.
    Layered { axis: usize, at: f64, below: Tensor, above: Tensor },
    /// Checkerboard of `blocks` squares per side over the box `[lo, hi]`.
    Checker { lo: Point, hi: Point, blocks: usize, even: Tensor, odd: Tensor },
}

impl Background {
    pub fn at(&self, x: &Point, dim: usize) -> Tensor {
        match self {
            Background::Uniform(t) => *t,
            Background::Layered { axis, at, below, above } => {
                if x[*axis] < *at {
                    *below
                } else {
                    *above
                }
            }
            Background::Checker { lo, hi, blocks, even, odd } => {
                let mut s = 0usize;
                for i in 0..dim {
                    let f = ((x[i] - lo[i]) / (hi[i] - lo[i])).clamp(0.0, 1.0 - 1e-12);
                    s += (f * *blocks as f64) as usize;
                }
                if s % 2 == 0 {
                    *even
                } else {
                    *odd
                }
            }
        }
    }
}

/// Value of `a` inside the inclusion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fill {
    Tensor(Tensor),
    /// `a = s b` cellwise.
    Scaled(f64),
}

/// Which of the two sign conditions on the jump holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JumpCase {
    /// `a < b` in the matrix sense.
    H0a,
    /// `a > b` in the matrix sense.
    H0b,
}

/// The clause that attains the jump constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JumpClause {
    Direct,
    Inverse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConductivityOptions {
    /// Restrict the jump check to cells within this distance of the
    /// inclusion boundary.
    pub boundary_band: Option<f64>,
}

impl Default for ConductivityOptions {
    fn default() -> Self {
        ConductivityOptions { boundary_band: None }
    }
}

/// `b` and `a` on the cells of one mesh. A cell belongs to `D_t` when its
/// centroid does.
#[derive(Debug, Clone)]
pub struct ConductivityPair {
    pub dim: usize,
    pub b: Vec<Tensor>,
    pub fill: Vec<Tensor>,
    pub inclusion: MovingInclusion,
    pub gamma_inf: f64,
    pub delta_1: f64,
    pub case: Option<JumpCase>,
    pub binding: Option<JumpClause>,
    centroids: Vec<Point>,
}

/// Ellipticity ratio `max(lambda_max, 1 / lambda_min)` of one tensor.
fn ellipticity(t: &Tensor, dim: usize) -> Result<f64> {
    let ev = t.eigenvalues(dim);
    if ev[0] <= 0.0 {
        return Err(Error::Hypothesis(format!("tensor not positive definite (eigenvalue {:e})", ev[0])));
    }
    Ok(ev[dim - 1].max(1.0 / ev[0]))
}

/// Jump constants `(case, clause, delta)` for one cell.
fn jump(b: &Tensor, a: &Tensor, dim: usize) -> Option<(JumpCase, JumpClause, f64)> {
    let ainv = a.inverse(dim)?;
    let binv = b.inverse(dim)?;
    let direct = a.sub(b).eigenvalues(dim);
    let inverse = binv.sub(&ainv).eigenvalues(dim);
    // H0b: a - b >= delta and b^-1 - a^-1 >= delta.
    if direct[0] > 0.0 && inverse[0] > 0.0 {
        let (d, c) = if direct[0] <= inverse[0] {
            (direct[0], JumpClause::Direct)
        } else {
            (inverse[0], JumpClause::Inverse)
        };
        return Some((JumpCase::H0b, c, d));
    }
    let (dmax, imax) = (direct[dim - 1], inverse[dim - 1]);
    if dmax < 0.0 && imax < 0.0 {
        let (d, c) = if -dmax <= -imax { (-dmax, JumpClause::Direct) } else { (-imax, JumpClause::Inverse) };
        return Some((JumpCase::H0a, c, d));
    }
    None
}

/// Builds the pair on `mesh`, checking ellipticity everywhere and the jump
/// condition on every cell inside `D_t` for every time in `times`.
pub fn build_conductivity(
    background: &Background,
    incl: &MovingInclusion,
    fill: Fill,
    times: &[f64],
    mesh: &BoxMesh,
    opts: &ConductivityOptions,
) -> Result<ConductivityPair> {
    let dim = mesh.dim;
    if incl.dim != dim {
        return Err(Error::Invalid("inclusion and mesh dimensions differ".into()));
    }
    let nc = mesh.num_cells();
    let centroids: Vec<Point> = (0..nc).map(|c| mesh.centroid(c)).collect();
    let b: Vec<Tensor> = centroids.iter().map(|x| background.at(x, dim)).collect();
    let fill_cells: Vec<Tensor> = match fill {
        Fill::Tensor(t) => alloc::vec![t; nc],
        Fill::Scaled(s) => b.iter().map(|t| t.scale(s)).collect(),
    };
    let mut gamma: f64 = 1.0;
    for (c, t) in b.iter().enumerate() {
        if !t.is_symmetric(1e-12) {
            return Err(Error::Hypothesis(format!("background not symmetric on cell {c}")));
        }
        gamma = gamma.max(ellipticity(t, dim).map_err(|e| annotate(e, c))?);
    }
    let mut delta = f64::INFINITY;
    let mut case: Option<JumpCase> = None;
    let mut binding = None;
    let mut checked = alloc::vec![false; nc];
    for &t in times {
        for c in 0..nc {
            let x = &centroids[c];
            if !incl.contains(x, t) {
                continue;
            }
            if let Some(band) = opts.boundary_band {
                let (_, depth) = incl.distances(x, t);
                if depth > band {
                    continue;
                }
            }
            if checked[c] {
                continue;
            }
            checked[c] = true;
            let a = &fill_cells[c];
            if !a.is_symmetric(1e-12) {
                return Err(Error::Hypothesis(format!("fill not symmetric on cell {c}")));
            }
            gamma = gamma.max(ellipticity(a, dim).map_err(|e| annotate(e, c))?);
            let (k, clause, d) = jump(&b[c], a, dim).ok_or_else(|| {
                Error::Hypothesis(format!("jump b - a is sign-indefinite on cell {c} at t = {t}"))
            })?;
            if d <= 0.0 {
                return Err(Error::Hypothesis(format!("jump vanishes on cell {c} at t = {t}")));
            }
            match case {
                None => case = Some(k),
                Some(k0) if k0 != k => {
                    return Err(Error::Hypothesis(format!(
                        "jump changes sign across the inclusion (cell {c} at t = {t})"
                    )))
                }
                _ => {}
            }
            if d < delta {
                delta = d;
                binding = Some(clause);
            }
        }
    }
    // Cells of D that the band excluded still need a positive definite fill.
    if opts.boundary_band.is_some() {
        for &t in times {
            for c in 0..nc {
                if incl.contains(&centroids[c], t) {
                    gamma = gamma.max(ellipticity(&fill_cells[c], dim).map_err(|e| annotate(e, c))?);
                }
            }
        }
    }
    Ok(ConductivityPair { dim, b, fill: fill_cells, inclusion: incl.clone(), gamma_inf: gamma, delta_1: delta, case, binding, centroids })
}

fn annotate(e: Error, c: usize) -> Error {
    match e {
        Error::Hypothesis(s) => Error::Hypothesis(format!("{s} on cell {c}")),
        other => other,
    }
}

impl ConductivityPair {
    /// Cells inside `D_t`.
    pub fn mask(&self, t: f64) -> Vec<bool> {
        self.centroids.iter().map(|x| self.inclusion.contains(x, t)).collect()
    }

    /// `a(., t)` cellwise.
    pub fn a_at(&self, t: f64) -> Vec<Tensor> {
        self.a_from_mask(&self.mask(t))
    }

    pub fn a_from_mask(&self, mask: &[bool]) -> Vec<Tensor> {
        self.b.iter().zip(&self.fill).zip(mask).map(|((b, f), &m)| if m { *f } else { *b }).collect()
    }

    /// Same pair with `a = b` everywhere.
    pub fn background_only(&self) -> ConductivityPair {
        let mut p = self.clone();
        p.inclusion = MovingInclusion::empty(self.dim, self.inclusion.t_final);
        p.delta_1 = f64::INFINITY;
        p.case = None;
        p.binding = None;
        p
    }

    /// `b` on the outer mesh of an embedding, the identity outside.
    pub fn background_on(&self, emb: &Embedding) -> Vec<Tensor> {
        let mut out = alloc::vec![Tensor::identity(); emb.outer.num_cells()];
        for (c, &oc) in emb.cell_map.iter().enumerate() {
            out[oc as usize] = self.b[c];
        }
        out
    }
}

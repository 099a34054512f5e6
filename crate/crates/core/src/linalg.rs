//! Sparse storage and the two symmetric positive definite solvers used by
//! every time step: banded Cholesky for moderate meshes and Jacobi
//! preconditioned conjugate gradients for large ones.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Debug, Clone)]
pub struct Csr {
    pub n: usize,
    pub ptr: Vec<usize>,
    pub idx: Vec<u32>,
    pub val: Vec<f64>,
}

impl Csr {
    /// Empty matrix with a fixed sorted pattern (one list per row).
    pub fn with_pattern(rows: &[Vec<u32>]) -> Self {
        let mut ptr = Vec::with_capacity(rows.len() + 1);
        ptr.push(0);
        let mut idx = Vec::new();
        for r in rows {
            idx.extend_from_slice(r);
            ptr.push(idx.len());
        }
        let nnz = idx.len();
        Csr { n: rows.len(), ptr, idx, val: vec![0.0; nnz] }
    }

    /// Position of entry `(i, j)` in `val`, if it is in the pattern.
    #[inline]
    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        let row = &self.idx[self.ptr[i]..self.ptr[i + 1]];
        row.binary_search(&(j as u32)).ok().map(|p| self.ptr[i] + p)
    }

    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        let p = self.find(i, j).expect("entry outside sparsity pattern");
        self.val[p] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.find(i, j).map(|p| self.val[p]).unwrap_or(0.0)
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for p in self.ptr[i]..self.ptr[i + 1] {
                s += self.val[p] * x[self.idx[p] as usize];
            }
            y[i] = s;
        }
    }

    /// `x . A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            if x[i] == 0.0 {
                continue;
            }
            let mut s = 0.0;
            for p in self.ptr[i]..self.ptr[i + 1] {
                s += self.val[p] * y[self.idx[p] as usize];
            }
            acc += x[i] * s;
        }
        acc
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// `alpha * diag(m) + self`, same pattern.
    pub fn shifted(&self, alpha: f64, m: &[f64]) -> Csr {
        let mut out = self.clone();
        for (i, mi) in m.iter().enumerate() {
            let p = out.find(i, i).expect("diagonal missing");
            out.val[p] += alpha * mi;
        }
        out
    }

    /// Principal submatrix on the rows/cols flagged `keep`, renumbered
    /// compactly. Returns the matrix and the old-to-new map.
    pub fn restrict(&self, keep: &[bool]) -> (Csr, Vec<usize>) {
        let mut map = vec![usize::MAX; self.n];
        let mut k = 0;
        for (i, &f) in keep.iter().enumerate() {
            if f {
                map[i] = k;
                k += 1;
            }
        }
        let mut ptr = Vec::with_capacity(k + 1);
        ptr.push(0);
        let mut idx = Vec::new();
        let mut val = Vec::new();
        for i in 0..self.n {
            if !keep[i] {
                continue;
            }
            for p in self.ptr[i]..self.ptr[i + 1] {
                let j = self.idx[p] as usize;
                if keep[j] {
                    idx.push(map[j] as u32);
                    val.push(self.val[p]);
                }
            }
            ptr.push(idx.len());
        }
        (Csr { n: k, ptr, idx, val }, map)
    }

    /// Largest `|i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        let mut bw = 0;
        for i in 0..self.n {
            for p in self.ptr[i]..self.ptr[i + 1] {
                let j = self.idx[p] as usize;
                bw = bw.max(i.abs_diff(j));
            }
        }
        bw
    }
}

/// Cholesky factor of a symmetric positive definite band matrix,
/// stored row-wise: row `i` keeps columns `i-bw ..= i`.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandedCholesky {
    pub fn factor(a: &Csr) -> Result<Self> {
        let n = a.n;
        let bw = a.bandwidth();
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            for p in a.ptr[i]..a.ptr[i + 1] {
                let j = a.idx[p] as usize;
                if j <= i {
                    l[i * w + (j + bw - i)] = a.val[p];
                }
            }
        }
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let k0 = j0.max(j.saturating_sub(bw));
                let mut s = l[i * w + (j + bw - i)];
                let ri = i * w + bw - i;
                let rj = j * w + bw - j;
                for k in k0..j {
                    s -= l[ri + k] * l[rj + k];
                }
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(Error::Numerical(format!(
                            "matrix not positive definite at row {i} (pivot {s:e})"
                        )));
                    }
                    l[i * w + bw] = s.sqrt();
                } else {
                    l[i * w + (j + bw - i)] = s / l[j * w + bw];
                }
            }
        }
        Ok(BandedCholesky { n, bw, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solve in place.
    pub fn solve(&self, b: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        for i in 0..n {
            let k0 = i.saturating_sub(bw);
            let ri = i * w + bw - i;
            let mut s = b[i];
            for k in k0..i {
                s -= self.l[ri + k] * b[k];
            }
            b[i] = s / self.l[i * w + bw];
        }
        for i in (0..n).rev() {
            let xi = b[i] / self.l[i * w + bw];
            b[i] = xi;
            let k0 = i.saturating_sub(bw);
            let ri = i * w + bw - i;
            for k in k0..i {
                b[k] -= self.l[ri + k] * xi;
            }
        }
    }
}

/// Jacobi preconditioned conjugate gradients. `x` holds the initial guess
/// on entry. Returns the iteration count.
pub fn pcg(a: &Csr, dinv: &[f64], b: &[f64], x: &mut [f64], rtol: f64, max_iter: usize) -> Result<usize> {
    let n = a.n;
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let mut r = vec![0.0; n];
    a.matvec(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(dinv).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for it in 0..max_iter {
        let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rn <= rtol * bnorm {
            return Ok(it);
        }
        a.matvec(&p, &mut q);
        let pq: f64 = p.iter().zip(&q).map(|(a, b)| a * b).sum();
        if pq <= 0.0 {
            return Err(Error::Numerical(format!("CG breakdown (pAp = {pq:e})")));
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        for i in 0..n {
            z[i] = r[i] * dinv[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Numerical(format!("CG did not reach rtol {rtol:e} in {max_iter} iterations")))
}

/// Relative residual used for iterative solves.
pub const SOLVER_RTOL: f64 = 1e-10;

/// Upper bound on stored band entries before switching to CG.
pub const BANDED_BUDGET: usize = 16_000_000;

/// A factored (or preconditioned) SPD system.
#[derive(Debug, Clone)]
pub enum SpdSolver {
    Banded(BandedCholesky),
    Cg { a: Csr, dinv: Vec<f64> },
}

impl SpdSolver {
    /// Chooses banded Cholesky when the band fits the memory budget.
    pub fn new(a: Csr) -> Result<Self> {
        let bw = a.bandwidth();
        if a.n.saturating_mul(bw + 1) <= BANDED_BUDGET {
            Ok(SpdSolver::Banded(BandedCholesky::factor(&a)?))
        } else {
            Self::cg(a)
        }
    }

    pub fn cg(a: Csr) -> Result<Self> {
        let dinv = a
            .diag()
            .iter()
            .map(|d| if *d > 0.0 { 1.0 / d } else { f64::NAN })
            .collect::<Vec<_>>();
        if dinv.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("nonpositive diagonal".into()));
        }
        Ok(SpdSolver::Cg { a, dinv })
    }

    /// Solves `A x = b`. `x` is an initial guess for CG and is overwritten.
    pub fn solve(&self, b: &[f64], x: &mut [f64]) -> Result<()> {
        match self {
            SpdSolver::Banded(f) => {
                x.copy_from_slice(b);
                f.solve(x);
                Ok(())
            }
            SpdSolver::Cg { a, dinv } => pcg(a, dinv, b, x, SOLVER_RTOL, 20 * a.n + 100).map(|_| ()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize, shift: f64) -> Csr {
        let rows: Vec<Vec<u32>> = (0..n)
            .map(|i| {
                let mut r = Vec::new();
                if i > 0 {
                    r.push(i as u32 - 1);
                }
                r.push(i as u32);
                if i + 1 < n {
                    r.push(i as u32 + 1);
                }
                r
            })
            .collect();
        let mut a = Csr::with_pattern(&rows);
        for i in 0..n {
            a.add_to(i, i, 2.0 + shift);
            if i > 0 {
                a.add_to(i, i - 1, -1.0);
            }
            if i + 1 < n {
                a.add_to(i, i + 1, -1.0);
            }
        }
        a
    }

    #[test]
    fn banded_and_cg_agree() {
        let a = laplace_1d(50, 0.1);
        let b: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let f = BandedCholesky::factor(&a).unwrap();
        let mut x1 = b.clone();
        f.solve(&mut x1);
        let mut r = vec![0.0; 50];
        a.matvec(&x1, &mut r);
        for i in 0..50 {
            assert!((r[i] - b[i]).abs() < 1e-12);
        }
        let s = SpdSolver::cg(a.clone()).unwrap();
        let mut x2 = vec![0.0; 50];
        s.solve(&b, &mut x2).unwrap();
        for i in 0..50 {
            assert!((x1[i] - x2[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn restrict_keeps_principal_block() {
        let a = laplace_1d(5, 0.0);
        let (r, map) = a.restrict(&[false, true, true, true, false]);
        assert_eq!(r.n, 3);
        assert_eq!(map[1], 0);
        assert_eq!(r.get(0, 0), 2.0);
        assert_eq!(r.get(0, 1), -1.0);
        assert_eq!(r.bandwidth(), 1);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut a = laplace_1d(3, 0.0);
        let p = a.find(1, 1).unwrap();
        a.val[p] = -1.0;
        assert!(BandedCholesky::factor(&a).is_err());
    }
}

//! Compressed-row sparse matrices and symmetric positive definite solvers.

use crate::error::{Result, WempError};

/// Relative residual target for SPD solves.
pub const SOLVE_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a CSR matrix summing duplicate `(row, col)` entries in input order.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        // stable sort keeps per-entry summation order equal to insertion order
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            debug_assert!(r < nrows && c < ncols);
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (r, yr) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yr = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `xᵀ A x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.mul_vec(x))
    }

    /// Principal submatrix on `keep` (sorted, unique indices).
    pub fn principal_submatrix(&self, keep: &[usize]) -> Self {
        let mut map = vec![usize::MAX; self.ncols];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let mut row_ptr = Vec::with_capacity(keep.len() + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for &r in keep {
            for (c, v) in self.row(r) {
                let nc = map[c];
                if nc != usize::MAX {
                    col_idx.push(nc);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows: keep.len(),
            ncols: keep.len(),
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Entrywise `max |A - Aᵀ|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                worst = worst.max((v - self.get(c, r)).abs());
            }
        }
        worst
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `a·self + b·other` for matrices with identical sparsity.
    pub fn linear_combination(&self, a: f64, other: &Self, b: f64) -> Self {
        assert_eq!(self.row_ptr, other.row_ptr, "sparsity patterns differ");
        assert_eq!(self.col_idx, other.col_idx, "sparsity patterns differ");
        let mut out = self.clone();
        for (v, w) in out.values.iter_mut().zip(&other.values) {
            *v = a * *v + b * w;
        }
        out
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows).map(|r| self.get(r, r)).collect()
    }
}

/// Symmetric operator applied to coefficient vectors (mass matrices in either space).
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
}

impl LinearOperator for SparseMatrix {
    fn dim(&self) -> usize {
        self.nrows
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.mul_vec(x)
    }
}

impl LinearOperator for nalgebra::DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let v = nalgebra::DVectorView::from_slice(x, x.len());
        (self * v).as_slice().to_vec()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Envelope (skyline) Cholesky factor `A = L Lᵀ` stored row by row.
#[derive(Debug, Clone)]
pub struct ProfileCholesky {
    n: usize,
    first: Vec<usize>,
    row_start: Vec<usize>,
    data: Vec<f64>,
}

impl ProfileCholesky {
    pub fn factor(a: &SparseMatrix) -> Result<Self> {
        if a.nrows != a.ncols {
            return Err(WempError::DimensionMismatch {
                expected: a.nrows,
                got: a.ncols,
                context: "square matrix for Cholesky",
            });
        }
        let n = a.nrows;
        let mut first = vec![0usize; n];
        for (r, f) in first.iter_mut().enumerate() {
            *f = a.row(r).map(|(c, _)| c).filter(|&c| c <= r).min().unwrap_or(r);
        }
        let mut row_start = Vec::with_capacity(n + 1);
        row_start.push(0);
        for r in 0..n {
            row_start.push(row_start[r] + (r - first[r] + 1));
        }
        let mut data = vec![0.0; row_start[n]];
        for r in 0..n {
            for (c, v) in a.row(r) {
                if c <= r {
                    data[row_start[r] + c - first[r]] = v;
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            let ri = row_start[i];
            for j in fi..i {
                let fj = first[j];
                let rj = row_start[j];
                let k0 = fi.max(fj);
                let mut s = data[ri + j - fi];
                for k in k0..j {
                    s -= data[ri + k - fi] * data[rj + k - fj];
                }
                data[ri + j - fi] = s / data[rj + j - fj];
            }
            let mut d = data[ri + i - fi];
            for k in fi..i {
                let l = data[ri + k - fi];
                d -= l * l;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(WempError::NotPositiveDefinite { row: i, pivot: d });
            }
            data[ri + i - fi] = d.sqrt();
        }
        Ok(Self {
            n,
            first,
            row_start,
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        for i in 0..self.n {
            let fi = self.first[i];
            let ri = self.row_start[i];
            let mut s = b[i];
            for k in fi..i {
                s -= self.data[ri + k - fi] * b[k];
            }
            b[i] = s / self.data[ri + i - fi];
        }
        for i in (0..self.n).rev() {
            let fi = self.first[i];
            let ri = self.row_start[i];
            b[i] /= self.data[ri + i - fi];
            let bi = b[i];
            for k in fi..i {
                b[k] -= self.data[ri + k - fi] * bi;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Outcome of a conjugate gradient run.
#[derive(Debug, Clone)]
pub struct CgReport {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients.
pub fn conjugate_gradient(
    a: &SparseMatrix,
    b: &[f64],
    rtol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, CgReport)> {
    let n = a.nrows;
    if b.len() != n {
        return Err(WempError::DimensionMismatch {
            expected: n,
            got: b.len(),
            context: "cg right-hand side",
        });
    }
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((
            x,
            CgReport {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(WempError::SolverBreakdown {
                iterations: it,
                residual: norm2(&r) / bnorm,
            });
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        let res = norm2(&r) / bnorm;
        if res <= rtol {
            return Ok((
                x,
                CgReport {
                    iterations: it,
                    relative_residual: res,
                },
            ));
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(WempError::SolverBreakdown {
        iterations: max_iter,
        residual: norm2(&r) / norm2(b),
    })
}

/// Solves `A x = b` for SPD `A` by profile Cholesky and checks the residual.
pub fn solve_spd(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.nrows {
        return Err(WempError::DimensionMismatch {
            expected: a.nrows,
            got: b.len(),
            context: "spd right-hand side",
        });
    }
    let chol = ProfileCholesky::factor(a)?;
    let x = chol.solve(b);
    let ax = a.mul_vec(&x);
    let res: f64 = ax
        .iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt();
    let bnorm = norm2(b);
    if res > SOLVE_RTOL * bnorm.max(f64::MIN_POSITIVE) && res > 0.0 {
        // one refinement sweep before giving up
        let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        let dx = chol.solve(&r);
        let x2: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
        let res2 = norm2(
            &a.mul_vec(&x2)
                .iter()
                .zip(b)
                .map(|(p, q)| p - q)
                .collect::<Vec<_>>(),
        );
        if res2 > SOLVE_RTOL * bnorm {
            return Err(WempError::SolverBreakdown {
                iterations: 1,
                residual: res2 / bnorm,
            });
        }
        return Ok(x2);
    }
    Ok(x)
}

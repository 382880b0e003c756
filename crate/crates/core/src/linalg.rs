//! Dense symmetric positive-definite algebra used by the exact GP and the
//! per-bin precomputation.
//!
//! Matrices are `nalgebra::DMatrix<f64>` (column-major, contiguous), which
//! lets the Cholesky factorization run on zero-copy `faer` views.

use faer::linalg::solvers::{DenseSolveCore, LltError, Solve};
use faer::{MatMut, MatRef, Side};
use nalgebra::{DMatrix, DVector};

use crate::error::{GpError, Result};

/// Cholesky factor of a symmetric positive-definite matrix.
pub struct SpdFactor {
    llt: faer::linalg::solvers::Llt<f64>,
    dim: usize,
}

impl std::fmt::Debug for SpdFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpdFactor").field("dim", &self.dim).finish()
    }
}

impl SpdFactor {
    /// Factorizes `a`. Only the lower triangle is read.
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(GpError::invalid(format!("cannot factorize a {}x{} matrix", a.nrows(), a.ncols())));
        }
        let dim = a.nrows();
        let view = MatRef::from_column_major_slice(a.as_slice(), dim, dim);
        let llt = view.llt(Side::Lower).map_err(|e| match e {
            LltError::NonPositivePivot { index } => GpError::NotPositiveDefinite { pivot: index, dim },
        })?;
        Ok(Self { llt, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Solves `A X = B` in place.
    pub fn solve_in_place(&self, b: &mut DMatrix<f64>) {
        assert_eq!(b.nrows(), self.dim, "right-hand side row count");
        let (rows, cols) = b.shape();
        let view = MatMut::from_column_major_slice_mut(b.as_mut_slice(), rows, cols);
        self.llt.solve_in_place(view);
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
        self.solve_in_place(&mut x);
        DVector::from_column_slice(x.as_slice())
    }

    /// Explicit inverse, symmetrized.
    pub fn inverse(&self) -> DMatrix<f64> {
        let inv = self.llt.inverse();
        let n = self.dim;
        let mut out = DMatrix::from_fn(n, n, |i, j| inv[(i, j)]);
        symmetrize(&mut out);
        out
    }

    /// Smallest diagonal entry of the Cholesky factor.
    pub fn min_pivot(&self) -> f64 {
        let l = self.llt.L();
        (0..self.dim).map(|i| l[(i, i)]).fold(f64::INFINITY, f64::min)
    }
}

/// Replaces `a` by `(a + aᵀ) / 2`.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// `kᵀ S k` for symmetric `S`, reading only the lower triangle.
pub fn sym_quad_form(s: &DMatrix<f64>, k: &[f64]) -> f64 {
    let n = s.nrows();
    debug_assert_eq!(n, k.len());
    let data = s.as_slice();
    let mut total = 0.0;
    for j in 0..n {
        let col = &data[j * n..(j + 1) * n];
        let kj = k[j];
        let tail = &col[j + 1..];
        let ktail = &k[j + 1..];
        let mut acc = [0.0f64; 4];
        let chunks = tail.len() / 4;
        for c in 0..chunks {
            let b = 4 * c;
            acc[0] += tail[b] * ktail[b];
            acc[1] += tail[b + 1] * ktail[b + 1];
            acc[2] += tail[b + 2] * ktail[b + 2];
            acc[3] += tail[b + 3] * ktail[b + 3];
        }
        let mut off = (acc[0] + acc[1]) + (acc[2] + acc[3]);
        for b in 4 * chunks..tail.len() {
            off += tail[b] * ktail[b];
        }
        total += kj * (col[j] * kj + 2.0 * off);
    }
    total
}

/// Stopping rule and iteration cap for [`conjugate_gradient`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgConfig {
    /// Relative residual `‖b − A x‖ / ‖b‖` required for every column.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 5000 }
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub solution: DMatrix<f64>,
    pub iterations: usize,
    /// Worst true relative residual over the columns.
    pub residual: f64,
}

/// Jacobi-preconditioned conjugate gradient for `A X = B` with symmetric
/// positive-definite `A`, run on all right-hand sides in lockstep so the
/// operator application is a single matrix product per iteration.
///
/// Convergence is judged on the true residual: once the recurrence reports
/// convergence the residual is recomputed and the iteration restarts from
/// the current iterate if it has drifted above tolerance.
pub fn conjugate_gradient(a: &DMatrix<f64>, b: &DMatrix<f64>, cfg: CgConfig) -> Result<CgOutcome> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n {
        return Err(GpError::invalid(format!(
            "cg shape mismatch: operator {}x{}, rhs {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let k = b.ncols();
    let mut x = DMatrix::<f64>::zeros(n, k);
    if n == 0 || k == 0 {
        return Ok(CgOutcome { solution: x, iterations: 0, residual: 0.0 });
    }
    let inv_diag: Vec<f64> = (0..n)
        .map(|i| {
            let d = a[(i, i)];
            if d > 0.0 {
                1.0 / d
            } else {
                1.0
            }
        })
        .collect();
    let b_norm: Vec<f64> = b.column_iter().map(|c| c.norm()).collect();

    let mut r = b.clone();
    let mut iterations = 0;
    loop {
        // one restart cycle from the current iterate
        let mut z = precondition(&r, &inv_diag);
        let mut p = z.clone();
        let mut rz: Vec<f64> = col_dots(&r, &z);
        let mut active: Vec<bool> = (0..k).map(|j| rel(r.column(j).norm(), b_norm[j]) > cfg.tol).collect();

        while active.iter().any(|&a| a) && iterations < cfg.max_iter {
            iterations += 1;
            let q = a * &p;
            for j in 0..k {
                if !active[j] {
                    continue;
                }
                let pq = p.column(j).dot(&q.column(j));
                if pq <= 0.0 || !pq.is_finite() {
                    active[j] = false;
                    continue;
                }
                let alpha = rz[j] / pq;
                x.column_mut(j).axpy(alpha, &p.column(j), 1.0);
                r.column_mut(j).axpy(-alpha, &q.column(j), 1.0);
                if rel(r.column(j).norm(), b_norm[j]) <= cfg.tol {
                    active[j] = false;
                }
            }
            z = precondition(&r, &inv_diag);
            for j in 0..k {
                if !active[j] {
                    continue;
                }
                let rz_new = r.column(j).dot(&z.column(j));
                let beta = rz_new / rz[j];
                rz[j] = rz_new;
                let zj = z.column(j).clone_owned();
                let mut pj = p.column_mut(j);
                pj *= beta;
                pj += zj;
            }
        }

        r = b - a * &x;
        let worst = (0..k).map(|j| rel(r.column(j).norm(), b_norm[j])).fold(0.0f64, f64::max);
        if worst <= cfg.tol {
            return Ok(CgOutcome { solution: x, iterations, residual: worst });
        }
        if iterations >= cfg.max_iter || !worst.is_finite() {
            return Err(GpError::SolverNotConverged { iterations, residual: worst, tolerance: cfg.tol });
        }
    }
}

fn rel(norm: f64, reference: f64) -> f64 {
    if reference > 0.0 {
        norm / reference
    } else {
        norm
    }
}

fn precondition(r: &DMatrix<f64>, inv_diag: &[f64]) -> DMatrix<f64> {
    let mut z = r.clone();
    for mut col in z.column_iter_mut() {
        for (v, d) in col.iter_mut().zip(inv_diag) {
            *v *= d;
        }
    }
    z
}

fn col_dots(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    a.column_iter().zip(b.column_iter()).map(|(x, y)| x.dot(&y)).collect()
}

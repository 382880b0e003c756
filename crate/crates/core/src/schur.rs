//! Schur-complement block inversion, the per-bin offline precomputation and
//! the online partitioned prediction.
//!
//! For a bin with near rows `n` and far rows `f` the stored inverse is
//! `S⁻¹ = (K̄_nn − K̄_nf K̄_ff⁻¹ K̄_fn)⁻¹`, the near-near block of `K̄_aa⁻¹`,
//! and the stored weights are `W = S⁻¹ Ȳ_n`. At query time only the near
//! rows are touched: `μ = K̄_qn W` and `var = σ − K̄_qn S⁻¹ K̄_qnᵀ`.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GpError, Result};
use crate::kernel::{cov_cross, cov_symmetric, entry, KernelParams, PointSet, RowId, RowLayout};
use crate::linalg::{conjugate_gradient, symmetrize, CgConfig, SpdFactor};
use crate::partition::BinSpec;

/// `A − B D⁻¹ C` for symmetric positive-definite `D`.
pub fn schur_of_block(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (p, q) = (a.nrows(), d.nrows());
    if a.ncols() != p || b.shape() != (p, q) || c.shape() != (q, p) || d.ncols() != q {
        return Err(GpError::invalid(format!(
            "incompatible blocks: A {:?}, B {:?}, C {:?}, D {:?}",
            a.shape(),
            b.shape(),
            c.shape(),
            d.shape()
        )));
    }
    if q == 0 {
        return Ok(a.clone());
    }
    let factor = SpdFactor::new(d)?;
    Ok(a - b * factor.solve(c))
}

/// Inverse of a symmetric positive-definite matrix assembled block-wise from
/// the Schur complement of its trailing `m.nrows() − split` block.
pub fn block_inverse(m: &DMatrix<f64>, split: usize) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if !m.is_square() || split > n {
        return Err(GpError::invalid(format!("cannot split a {:?} matrix at {split}", m.shape())));
    }
    let k = n - split;
    let a = m.view((0, 0), (split, split)).clone_owned();
    let b = m.view((0, split), (split, k)).clone_owned();
    let c = m.view((split, 0), (k, split)).clone_owned();
    let d = m.view((split, split), (k, k)).clone_owned();
    let d_fac = SpdFactor::new(&d)?;
    let d_inv_c = d_fac.solve(&c);
    let s = &a - &b * &d_inv_c;
    let s_inv = SpdFactor::new(&s)?.inverse();
    // top-right block −S⁻¹ B D⁻¹ is the transpose of −D⁻¹ C S⁻¹ by symmetry
    let lower_left = -(&d_inv_c * &s_inv);
    let lower_right = d_fac.inverse() - &lower_left * d_inv_c.transpose();
    let mut out = DMatrix::zeros(n, n);
    out.view_mut((0, 0), (split, split)).copy_from(&s_inv);
    out.view_mut((split, 0), (k, split)).copy_from(&lower_left);
    out.view_mut((0, split), (split, k)).copy_from(&lower_left.transpose());
    out.view_mut((split, split), (k, k)).copy_from(&lower_right);
    Ok(out)
}

/// Symmetric matrix stored as its packed lower triangle, column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedSym {
    n: usize,
    data: Vec<f64>,
}

impl PackedSym {
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        let mut data = Vec::with_capacity(n * (n + 1) / 2);
        for j in 0..n {
            data.extend_from_slice(&m.column(j).as_slice()[j..]);
        }
        Self { n, data }
    }

    pub fn from_packed(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * (n + 1) / 2 {
            return Err(GpError::Format(format!(
                "packed triangle of order {n} needs {} values, got {}",
                n * (n + 1) / 2,
                data.len()
            )));
        }
        Ok(Self { n, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn packed(&self) -> &[f64] {
        &self.data
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        let mut at = 0;
        for j in 0..self.n {
            for i in j..self.n {
                m[(i, j)] = self.data[at];
                m[(j, i)] = self.data[at];
                at += 1;
            }
        }
        m
    }

    /// `kᵀ S k`.
    pub fn quad_form(&self, k: &[f64]) -> f64 {
        assert_eq!(k.len(), self.n);
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
            // SAFETY: the required target features were detected above.
            return unsafe { quad_form_avx2(self.n, &self.data, k) };
        }
        packed_quad_form(self.n, &self.data, k)
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn quad_form_avx2(n: usize, data: &[f64], k: &[f64]) -> f64 {
    use std::arch::x86_64::*;
    let mut total = 0.0;
    let mut at = 0;
    for j in 0..n {
        let len = n - j;
        let col = &data[at..at + len];
        at += len;
        let (tail, ktail) = (&col[1..], &k[j + 1..]);
        let m = tail.len();
        let blocks = m / 16;
        let (pa, pb) = (tail.as_ptr(), ktail.as_ptr());
        let mut acc = [_mm256_setzero_pd(); 4];
        for c in 0..blocks {
            let o = 16 * c;
            for (l, a) in acc.iter_mut().enumerate() {
                // SAFETY: o + 4l + 3 < 16 * blocks <= m, in bounds of both slices.
                let (x, y) = unsafe { (_mm256_loadu_pd(pa.add(o + 4 * l)), _mm256_loadu_pd(pb.add(o + 4 * l))) };
                *a = _mm256_fmadd_pd(x, y, *a);
            }
        }
        let s = _mm256_add_pd(_mm256_add_pd(acc[0], acc[1]), _mm256_add_pd(acc[2], acc[3]));
        let mut lanes = [0.0f64; 4];
        // SAFETY: `lanes` holds four doubles.
        unsafe { _mm256_storeu_pd(lanes.as_mut_ptr(), s) };
        let mut off = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
        for (x, y) in tail[16 * blocks..].iter().zip(&ktail[16 * blocks..]) {
            off += x * y;
        }
        total += k[j] * (col[0] * k[j] + 2.0 * off);
    }
    total
}

// The query path is bound by streaming the packed triangle; sixteen
// independent lanes let the loop vectorize and keep up with memory.
#[inline(always)]
fn packed_quad_form(n: usize, data: &[f64], k: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut at = 0;
    for j in 0..n {
        let len = n - j;
        let col = &data[at..at + len];
        at += len;
        let (tail, ktail) = (&col[1..], &k[j + 1..]);
        let mut acc = [0.0f64; 16];
        let (t16, k16) = (tail.chunks_exact(16), ktail.chunks_exact(16));
        let (t_rest, k_rest) = (t16.remainder(), k16.remainder());
        for (a, b) in t16.zip(k16) {
            for l in 0..16 {
                acc[l] += a[l] * b[l];
            }
        }
        let mut off = 0.0;
        for pair in acc.chunks_exact(2) {
            off += pair[0] + pair[1];
        }
        for (a, b) in t_rest.iter().zip(k_rest) {
            off += a * b;
        }
        total += k[j] * (col[0] * k[j] + 2.0 * off);
    }
    total
}

/// Normalized training data in the shared-point stacked layout.
#[derive(Debug, Clone)]
pub struct TrainingSystem {
    pub points: PointSet,
    pub layout: RowLayout,
    /// `Ȳ_a`, one row per layout row.
    pub targets: DMatrix<f64>,
    pub params: KernelParams,
    rows: Vec<RowId>,
    noise: Vec<f64>,
}

impl TrainingSystem {
    /// `grads[k]` holds the derivative along `grad_dims[k]` at every point.
    pub fn new(
        x: &DMatrix<f64>,
        y: &DMatrix<f64>,
        grads: &[DMatrix<f64>],
        grad_dims: &[usize],
        params: KernelParams,
    ) -> Result<Self> {
        params.validate()?;
        let n = x.nrows();
        if y.nrows() != n || y.ncols() == 0 {
            return Err(GpError::invalid(format!("{} targets for {n} points", y.nrows())));
        }
        if grads.len() != grad_dims.len() || grads.iter().any(|g| g.shape() != y.shape()) {
            return Err(GpError::invalid("one gradient block of target shape per gradient dimension"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(GpError::invalid("non-finite training input"));
        }
        let noise = params.noise_table(x.ncols(), grad_dims)?;
        let n_g = if grad_dims.is_empty() { 0 } else { n };
        let layout = RowLayout::new(n, n_g, grad_dims.to_vec());
        let mut targets = DMatrix::zeros(layout.len(), y.ncols());
        targets.rows_mut(0, n).copy_from(y);
        for (k, g) in grads.iter().enumerate() {
            targets.rows_mut(layout.grad_row(k, 0), n).copy_from(g);
        }
        let rows = layout.rows(0, 0);
        Ok(Self { points: PointSet::from_matrix(x), layout, targets, params, rows, noise })
    }

    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.targets.ncols()
    }

    fn row_ids(&self, idx: &[usize]) -> Vec<RowId> {
        idx.iter().map(|&i| self.rows[i]).collect()
    }

    /// `K̄` restricted to the listed rows, noise on the diagonal.
    pub fn block_sym(&self, idx: &[usize]) -> DMatrix<f64> {
        cov_symmetric(&self.points, &self.row_ids(idx), &self.params, &self.noise)
    }

    /// Noise-free `K̄` between two disjoint row lists.
    pub fn block_cross(&self, a: &[usize], b: &[usize]) -> DMatrix<f64> {
        cov_cross(&self.points, &self.row_ids(a), &self.points, &self.row_ids(b), &self.params)
    }

    pub fn select_targets(&self, idx: &[usize]) -> DMatrix<f64> {
        self.targets.select_rows(idx)
    }
}

/// How `K̄_ff⁻¹ K̄_fn` is obtained during precomputation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FarSolver {
    /// Jacobi-preconditioned conjugate gradient over all right-hand sides.
    Cg,
    /// Dense Cholesky factorization of `K̄_ff`.
    Cholesky,
}

/// Targets multiplied into the corrected inverse to form `W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchurMean {
    /// `W = S⁻¹ Ȳ_n`: far targets dropped together with `K̄_qf`.
    #[default]
    Truncated,
    /// `W = S⁻¹ (Ȳ_n − K̄_nf K̄_ff⁻¹ Ȳ_f)`: the exact near block of the
    /// full solve, still ignoring `K̄_qf` at query time.
    Conditional,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecompOptions {
    pub far_solver: FarSolver,
    pub cg: CgConfig,
    /// Build the corrected inverse `S⁻¹`.
    pub schur: bool,
    /// Build the uncorrected local inverse `K̄_nn⁻¹`.
    pub local: bool,
    pub mean: SchurMean,
}

impl Default for PrecompOptions {
    fn default() -> Self {
        Self {
            far_solver: FarSolver::Cholesky,
            cg: CgConfig::default(),
            schur: true,
            local: false,
            mean: SchurMean::Truncated,
        }
    }
}

/// An inverse and its weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSystem {
    pub inv: PackedSym,
    /// `inv · Ȳ_n`, one row per near row.
    pub w: DMatrix<f64>,
}

/// Everything a bin needs at query time.
#[derive(Debug, Clone, PartialEq)]
pub struct BinPrecomp {
    pub bin_id: usize,
    /// Training-point indices of the near set.
    pub near_points: Vec<usize>,
    /// Coordinates of the near points, in `near_points` order.
    pub near_x: PointSet,
    pub grad_dims: Vec<usize>,
    pub schur: Option<LocalSystem>,
    pub local: Option<LocalSystem>,
    pub stats: PrecompStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PrecompStats {
    pub near_rows: usize,
    pub far_rows: usize,
    pub iterations: usize,
    pub residual: f64,
}

impl BinPrecomp {
    /// Number of rows in `K̄_qn`.
    pub fn near_dim(&self) -> usize {
        self.near_points.len() * (1 + self.grad_dims.len())
    }

    pub fn log_line(&self) -> String {
        format!(
            "bin={} near_points={} near_rows={} far_rows={} iterations={} residual={:.3e}",
            self.bin_id,
            self.near_points.len(),
            self.stats.near_rows,
            self.stats.far_rows,
            self.stats.iterations,
            self.stats.residual
        )
    }
}

impl fmt::Display for BinPrecomp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.log_line())
    }
}

fn local_system(m: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<LocalSystem> {
    let factor = SpdFactor::new(m)?;
    let inv = factor.inverse();
    let w = factor.solve(y);
    Ok(LocalSystem { inv: PackedSym::from_dense(&inv), w })
}

/// Offline precomputation of one bin.
pub fn precompute_bin(bin: &BinSpec, sys: &TrainingSystem, opts: &PrecompOptions) -> Result<BinPrecomp> {
    if !opts.schur && !opts.local {
        return Err(GpError::invalid("nothing to precompute: enable the corrected or the local system"));
    }
    let n = sys.n_points();
    if bin.near.iter().chain(&bin.far).any(|&i| i >= n) {
        return Err(GpError::invalid(format!("bin {} refers to points beyond {n}", bin.id)));
    }
    let near_rows = bin.near_rows(&sys.layout);
    let far_rows = bin.far_rows(&sys.layout);
    let k_nn = sys.block_sym(&near_rows);
    let y_n = sys.select_targets(&near_rows);
    let mut stats = PrecompStats { near_rows: near_rows.len(), far_rows: far_rows.len(), iterations: 0, residual: 0.0 };

    let local = if opts.local { Some(local_system(&k_nn, &y_n)?) } else { None };
    let schur = if opts.schur {
        let (s, y_s) = if far_rows.is_empty() {
            (k_nn, y_n.clone())
        } else {
            let k_ff = sys.block_sym(&far_rows);
            let k_fn = sys.block_cross(&far_rows, &near_rows);
            let solved = match opts.far_solver {
                FarSolver::Cholesky => {
                    let f = SpdFactor::new(&k_ff)?;
                    let x = f.solve(&k_fn);
                    let r = &k_ff * &x - &k_fn;
                    stats.residual = rel_residual(&r, &k_fn);
                    x
                }
                FarSolver::Cg => {
                    let out = conjugate_gradient(&k_ff, &k_fn, opts.cg)?;
                    stats.iterations = out.iterations;
                    stats.residual = out.residual;
                    out.solution
                }
            };
            let mut s = k_nn - k_fn.transpose() * &solved;
            symmetrize(&mut s);
            let y_s = match opts.mean {
                SchurMean::Truncated => y_n.clone(),
                SchurMean::Conditional => &y_n - solved.transpose() * sys.select_targets(&far_rows),
            };
            (s, y_s)
        };
        Some(local_system(&s, &y_s)?)
    } else {
        None
    };
    Ok(BinPrecomp {
        bin_id: bin.id,
        near_points: bin.near.clone(),
        near_x: sys.points.select(&bin.near),
        grad_dims: sys.layout.grad_dims.clone(),
        schur,
        local,
        stats,
    })
}

fn rel_residual(r: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (0..b.ncols())
        .map(|j| {
            let bn = b.column(j).norm();
            let rn = r.column(j).norm();
            if bn > 0.0 {
                rn / bn
            } else {
                rn
            }
        })
        .fold(0.0, f64::max)
}

/// Mean per output and the shared predictive variance.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedPrediction {
    pub mean: Vec<f64>,
    pub var: f64,
}

/// `K̄_qn` for one query against the near rows of a bin.
pub fn query_row(x_q: &[f64], pre: &BinPrecomp, p: &KernelParams, out: &mut Vec<f64>) {
    let m = pre.near_points.len();
    let d = pre.near_x.dim();
    let l2 = p.length_scale * p.length_scale;
    out.clear();
    out.resize(m * (1 + pre.grad_dims.len()), 0.0);
    let mut diff = [0.0f64; 16];
    let mut diff_vec;
    let diff: &mut [f64] = if d <= 16 {
        &mut diff[..d]
    } else {
        diff_vec = vec![0.0; d];
        &mut diff_vec
    };
    for j in 0..m {
        let xj = pre.near_x.point(j);
        let mut s = 0.0;
        for c in 0..d {
            diff[c] = x_q[c] - xj[c];
            s += diff[c] * diff[c];
        }
        let k = p.base(s);
        out[j] = k;
        for (pos, &dim) in pre.grad_dims.iter().enumerate() {
            out[m * (pos + 1) + j] = entry(0, dim, diff, k, l2);
        }
    }
}

/// Online prediction from one bin. `with_schur = false` uses `K̄_nn⁻¹`.
pub fn predict_partitioned(
    x_q: &[f64],
    pre: &BinPrecomp,
    p: &KernelParams,
    with_schur: bool,
) -> Result<PartitionedPrediction> {
    let mut row = Vec::new();
    predict_partitioned_with(x_q, pre, p, with_schur, &mut row)
}

/// As [`predict_partitioned`], reusing `row` as scratch for `K̄_qn`.
pub fn predict_partitioned_with(
    x_q: &[f64],
    pre: &BinPrecomp,
    p: &KernelParams,
    with_schur: bool,
    row: &mut Vec<f64>,
) -> Result<PartitionedPrediction> {
    if x_q.len() != pre.near_x.dim() {
        return Err(GpError::invalid(format!("query has {} coordinates, bin expects {}", x_q.len(), pre.near_x.dim())));
    }
    if x_q.iter().any(|v| !v.is_finite()) {
        return Err(GpError::invalid("non-finite query"));
    }
    let sys = if with_schur { pre.schur.as_ref() } else { pre.local.as_ref() };
    let sys = sys.ok_or_else(|| {
        GpError::invalid(format!("bin {} has no {} system", pre.bin_id, if with_schur { "corrected" } else { "local" }))
    })?;
    query_row(x_q, pre, p, row);
    let n_out = sys.w.ncols();
    let mut mean = vec![0.0; n_out];
    for (c, m) in mean.iter_mut().enumerate() {
        *m = sys.w.column(c).iter().zip(row.iter()).map(|(a, b)| a * b).sum();
    }
    let var = (p.sigma - sys.inv.quad_form(row)).max(0.0);
    Ok(PartitionedPrediction { mean, var })
}

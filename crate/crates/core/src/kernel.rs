//! Isotropic RBF kernel, its first and second derivative variants, and the
//! extended covariance blocks built from them.
//!
//! Rows of every covariance matrix are described by [`RowId`]s: a point
//! index plus a derivative index, where derivative `0` is the function
//! value and `m >= 1` is the partial derivative along input dimension `m`
//! (1-based). Stacked layouts list all value rows first, then the gradient
//! rows grouped direction-first (every point for dimension `g1`, then every
//! point for `g2`, ...).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GpError, Result};

/// Hyperparameters of the RBF kernel and the observation noise model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Signal variance σ.
    pub sigma: f64,
    /// Shared length scale `l`.
    pub length_scale: f64,
    /// Jitter ν² added to the value-block diagonal.
    pub jitter: f64,
    /// Gradient noise λ² per gradient dimension, in the order of the
    /// `grad_dims` list the parameters are used with.
    pub grad_noise: Vec<f64>,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self { sigma: 1.0, length_scale: 0.5, jitter: 1e-10, grad_noise: Vec::new() }
    }
}

/// Jitter range recommended for value observations.
pub const JITTER_RANGE: (f64, f64) = (1e-12, 1e-9);

impl KernelParams {
    pub fn new(sigma: f64, length_scale: f64, jitter: f64, grad_noise: Vec<f64>) -> Result<Self> {
        let p = Self { sigma, length_scale, jitter, grad_noise };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(GpError::invalid(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.length_scale.is_finite() && self.length_scale > 0.0) {
            return Err(GpError::invalid(format!("length_scale must be positive, got {}", self.length_scale)));
        }
        if !(self.jitter.is_finite() && self.jitter >= 0.0) {
            return Err(GpError::invalid(format!("jitter must be >= 0, got {}", self.jitter)));
        }
        if let Some((i, v)) = self.grad_noise.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(GpError::invalid(format!("grad_noise[{i}] must be >= 0, got {v}")));
        }
        Ok(())
    }

    /// Whether the jitter lies in [`JITTER_RANGE`].
    pub fn jitter_in_recommended_range(&self) -> bool {
        (JITTER_RANGE.0..=JITTER_RANGE.1).contains(&self.jitter)
    }

    /// Diagonal noise indexed by derivative index `0..=d`.
    pub fn noise_table(&self, d: usize, grad_dims: &[usize]) -> Result<Vec<f64>> {
        check_grad_dims(grad_dims, d)?;
        if !grad_dims.is_empty() && self.grad_noise.len() != grad_dims.len() {
            return Err(GpError::invalid(format!(
                "grad_noise has {} entries but {} gradient dimensions are observed",
                self.grad_noise.len(),
                grad_dims.len()
            )));
        }
        let mut table = vec![0.0; d + 1];
        table[0] = self.jitter;
        for (pos, &m) in grad_dims.iter().enumerate() {
            table[m] = self.grad_noise[pos];
        }
        Ok(table)
    }

    #[inline]
    pub(crate) fn base(&self, dist2: f64) -> f64 {
        self.sigma * (-dist2 / (2.0 * self.length_scale * self.length_scale)).exp()
    }
}

fn check_grad_dims(grad_dims: &[usize], d: usize) -> Result<()> {
    for (i, &m) in grad_dims.iter().enumerate() {
        if m == 0 || m > d {
            return Err(GpError::invalid(format!("gradient dimension {m} outside 1..={d}")));
        }
        if grad_dims[..i].contains(&m) {
            return Err(GpError::invalid(format!("gradient dimension {m} listed twice")));
        }
    }
    Ok(())
}

/// `σ·exp(−‖x−x2‖²/(2l²))`.
pub fn rbf_eval(x: &[f64], x2: &[f64], p: &KernelParams) -> Result<f64> {
    check_pair(x, x2)?;
    Ok(p.base(dist2(x, x2)))
}

/// Kernel between derivative `n` at `x` and derivative `m` at `x2`;
/// index `0` is the function value, `k >= 1` is `∂/∂[x]_k`.
pub fn deriv_kernel_eval(n: usize, m: usize, x: &[f64], x2: &[f64], p: &KernelParams) -> Result<f64> {
    check_pair(x, x2)?;
    let d = x.len();
    if n > d || m > d {
        return Err(GpError::invalid(format!("derivative indices ({n}, {m}) outside 0..={d}")));
    }
    let diff: Vec<f64> = x.iter().zip(x2).map(|(a, b)| a - b).collect();
    let k = p.base(diff.iter().map(|v| v * v).sum());
    Ok(entry(n, m, &diff, k, p.length_scale * p.length_scale))
}

fn check_pair(x: &[f64], x2: &[f64]) -> Result<()> {
    if x.len() != x2.len() {
        return Err(GpError::invalid(format!("input dimension mismatch: {} vs {}", x.len(), x2.len())));
    }
    if x.iter().chain(x2).any(|v| !v.is_finite()) {
        return Err(GpError::invalid("non-finite kernel input"));
    }
    Ok(())
}

#[inline]
fn dist2(x: &[f64], x2: &[f64]) -> f64 {
    x.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// One kernel-variant entry from a precomputed difference `x − x2` and base
/// value `k(x, x2)`.
#[inline]
pub(crate) fn entry(n: usize, m: usize, diff: &[f64], k: f64, l2: f64) -> f64 {
    match (n, m) {
        (0, 0) => k,
        (n, 0) => -diff[n - 1] / l2 * k,
        (0, m) => diff[m - 1] / l2 * k,
        (n, m) if n == m => (l2 - diff[n - 1] * diff[n - 1]) / (l2 * l2) * k,
        (n, m) => -(diff[n - 1] * diff[m - 1]) / (l2 * l2) * k,
    }
}

/// One row of a covariance matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RowId {
    /// Index into the point pool the rows refer to.
    pub point: usize,
    /// 0 for the value, `m >= 1` for `∂/∂[x]_m`.
    pub deriv: usize,
}

impl RowId {
    pub fn value(point: usize) -> Self {
        Self { point, deriv: 0 }
    }
}

/// The stacked ordering of value and gradient observations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowLayout {
    pub n_d: usize,
    pub n_g: usize,
    /// Observed gradient dimensions (1-based), in stacking order.
    pub grad_dims: Vec<usize>,
}

impl RowLayout {
    pub fn new(n_d: usize, n_g: usize, grad_dims: Vec<usize>) -> Self {
        Self { n_d, n_g, grad_dims }
    }

    pub fn len(&self) -> usize {
        self.n_d + self.grad_dims.len() * self.n_g
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value_row(&self, i: usize) -> usize {
        i
    }

    /// Row of the gradient along `grad_dims[dim_pos]` at gradient point `j`.
    pub fn grad_row(&self, dim_pos: usize, j: usize) -> usize {
        self.n_d + dim_pos * self.n_g + j
    }

    /// Row descriptors, with value points numbered from `value_offset` and
    /// gradient points from `grad_offset` in the shared pool.
    pub fn rows(&self, value_offset: usize, grad_offset: usize) -> Vec<RowId> {
        let mut rows = Vec::with_capacity(self.len());
        rows.extend((0..self.n_d).map(|i| RowId::value(value_offset + i)));
        for &m in &self.grad_dims {
            rows.extend((0..self.n_g).map(|j| RowId { point: grad_offset + j, deriv: m }));
        }
        rows
    }
}

/// The training covariance `K̄_{a,a}` with noise on its diagonal.
#[derive(Debug, Clone)]
pub struct CovBlocks {
    pub k_train: DMatrix<f64>,
    pub row_layout: RowLayout,
}

/// Points stored row-major for tight inner loops.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    data: Vec<f64>,
    dim: usize,
}

impl PointSet {
    pub fn from_matrix(x: &DMatrix<f64>) -> Self {
        let (n, d) = x.shape();
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            data.extend(x.row(i).iter());
        }
        Self { data, dim: d }
    }

    pub fn from_rows(data: Vec<f64>, dim: usize) -> Self {
        assert!(dim > 0 && data.len().is_multiple_of(dim), "row-major data length");
        Self { data, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.dim, &self.data)
    }

    /// New set holding the listed points, in order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(self.point(i));
        }
        Self { data, dim: self.dim }
    }
}

/// Rows grouped by point: `(point, [(position, deriv)])`.
pub(crate) fn group_rows(rows: &[RowId]) -> Vec<(usize, Vec<(usize, usize)>)> {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by_key(|&i| (rows[i].point, i));
    let mut groups: Vec<(usize, Vec<(usize, usize)>)> = Vec::new();
    for i in order {
        let r = rows[i];
        match groups.last_mut() {
            Some((p, g)) if *p == r.point => g.push((i, r.deriv)),
            _ => groups.push((r.point, vec![(i, r.deriv)])),
        }
    }
    groups
}

/// Noise-free cross covariance between two row sets.
pub fn cov_cross(xa: &PointSet, rows_a: &[RowId], xb: &PointSet, rows_b: &[RowId], p: &KernelParams) -> DMatrix<f64> {
    assert_eq!(xa.dim(), xb.dim(), "point dimension mismatch");
    let d = xa.dim();
    let l2 = p.length_scale * p.length_scale;
    let ga = group_rows(rows_a);
    let gb = group_rows(rows_b);
    let mut out = DMatrix::zeros(rows_a.len(), rows_b.len());
    let mut diff = vec![0.0; d];
    for (pa, ra) in &ga {
        let a = xa.point(*pa);
        for (pb, rb) in &gb {
            let b = xb.point(*pb);
            let mut s = 0.0;
            for c in 0..d {
                diff[c] = a[c] - b[c];
                s += diff[c] * diff[c];
            }
            let k = p.base(s);
            for &(ia, n) in ra {
                for &(ib, m) in rb {
                    out[(ia, ib)] = entry(n, m, &diff, k, l2);
                }
            }
        }
    }
    out
}

/// Symmetric covariance of a row set with itself, plus `noise[deriv]` on
/// the diagonal.
pub fn cov_symmetric(x: &PointSet, rows: &[RowId], p: &KernelParams, noise: &[f64]) -> DMatrix<f64> {
    let d = x.dim();
    let l2 = p.length_scale * p.length_scale;
    let groups = group_rows(rows);
    let n = rows.len();
    let mut out = DMatrix::zeros(n, n);
    let mut diff = vec![0.0; d];
    for (gi, (pa, ra)) in groups.iter().enumerate() {
        let a = x.point(*pa);
        for (pb, rb) in &groups[gi..] {
            let b = x.point(*pb);
            let mut s = 0.0;
            for c in 0..d {
                diff[c] = a[c] - b[c];
                s += diff[c] * diff[c];
            }
            let k = p.base(s);
            for &(ia, nd) in ra {
                for &(ib, md) in rb {
                    let v = entry(nd, md, &diff, k, l2);
                    out[(ia, ib)] = v;
                    out[(ib, ia)] = v;
                }
            }
        }
    }
    for (i, r) in rows.iter().enumerate() {
        out[(i, i)] += noise[r.deriv];
    }
    out
}

fn check_inputs(mats: &[&DMatrix<f64>]) -> Result<usize> {
    let d =
        mats.iter().find(|m| m.nrows() > 0).map(|m| m.ncols()).unwrap_or_else(|| mats.first().map_or(0, |m| m.ncols()));
    for m in mats {
        if m.nrows() > 0 && m.ncols() != d {
            return Err(GpError::invalid(format!("input dimension mismatch: {} vs {}", m.ncols(), d)));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GpError::invalid("non-finite input point"));
        }
    }
    Ok(d)
}

/// Stacks `X_d` and `X_g` into one pool; value rows refer to the first
/// `n_d` points and gradient rows to the following `n_g`.
pub(crate) fn pool(x_d: &DMatrix<f64>, x_g: &DMatrix<f64>, d: usize) -> PointSet {
    let mut data = Vec::with_capacity((x_d.nrows() + x_g.nrows()) * d);
    for m in [x_d, x_g] {
        for i in 0..m.nrows() {
            data.extend(m.row(i).iter());
        }
    }
    PointSet::from_rows(data, d.max(1))
}

/// Assembles `K̄_{a,a}`: `ν²` on the value diagonal, `λ²_i` on each gradient
/// block diagonal, rows for dimensions outside `grad_dims` omitted.
pub fn assemble_training_cov(
    x_d: &DMatrix<f64>,
    x_g: &DMatrix<f64>,
    grad_dims: &[usize],
    p: &KernelParams,
) -> Result<CovBlocks> {
    p.validate()?;
    let d = check_inputs(&[x_d, x_g])?;
    let noise = p.noise_table(d, grad_dims)?;
    let layout = RowLayout::new(x_d.nrows(), x_g.nrows(), grad_dims.to_vec());
    let points = pool(x_d, x_g, d);
    let rows = layout.rows(0, x_d.nrows());
    let k_train = cov_symmetric(&points, &rows, p, &noise);
    Ok(CovBlocks { k_train, row_layout: layout })
}

/// Assembles `K̄_{q,a}`: `k_00` against value columns and `k_0m` against
/// gradient columns, in the layout of [`assemble_training_cov`].
pub fn assemble_query_cross(
    x_q: &DMatrix<f64>,
    x_d: &DMatrix<f64>,
    x_g: &DMatrix<f64>,
    grad_dims: &[usize],
    p: &KernelParams,
) -> Result<DMatrix<f64>> {
    p.validate()?;
    let d = check_inputs(&[x_q, x_d, x_g])?;
    check_grad_dims(grad_dims, d)?;
    let layout = RowLayout::new(x_d.nrows(), x_g.nrows(), grad_dims.to_vec());
    let points = pool(x_d, x_g, d);
    let queries = pool(x_q, &DMatrix::zeros(0, d), d);
    let q_rows: Vec<RowId> = (0..x_q.nrows()).map(RowId::value).collect();
    Ok(cov_cross(&queries, &q_rows, &points, &layout.rows(0, x_d.nrows()), p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit() -> KernelParams {
        KernelParams::new(1.0, 1.0, 0.0, vec![]).unwrap()
    }

    #[test]
    fn rbf_at_zero_distance_is_sigma() {
        let p = KernelParams::new(2.5, 0.3, 0.0, vec![]).unwrap();
        assert_eq!(rbf_eval(&[0.1, 0.2], &[0.1, 0.2], &p).unwrap(), 2.5);
    }

    #[test]
    fn rbf_unit_distance() {
        let v = rbf_eval(&[1.0, 0.0], &[0.0, 0.0], &unit()).unwrap();
        assert_relative_eq!(v, (-0.5f64).exp(), max_relative = 1e-15);
    }

    #[test]
    fn rbf_decays_monotonically() {
        let p = unit();
        let mut last = f64::INFINITY;
        for i in 0..60 {
            let v = rbf_eval(&[i as f64 * 0.5], &[0.0], &p).unwrap();
            assert!(v <= last);
            last = v;
        }
        assert!(last < 1e-100);
    }

    #[test]
    fn rbf_rejects_non_finite() {
        assert!(rbf_eval(&[f64::NAN], &[0.0], &unit()).is_err());
        assert!(rbf_eval(&[f64::INFINITY], &[0.0], &unit()).is_err());
    }

    #[test]
    fn second_derivative_on_diagonal_at_zero_offset() {
        let p = KernelParams::new(3.0, 0.5, 0.0, vec![]).unwrap();
        let x = [0.2, -0.4, 0.9];
        for n in 1..=3 {
            let v = deriv_kernel_eval(n, n, &x, &x, &p).unwrap();
            assert_relative_eq!(v, 3.0 / 0.25, max_relative = 1e-14);
            assert_eq!(deriv_kernel_eval(n, 0, &x, &x, &p).unwrap(), 0.0);
        }
    }

    #[test]
    fn mixed_second_derivative_hand_value() {
        let x = [1.0, 1.0, 0.0];
        let x2 = [0.0, 0.0, 0.0];
        let v = deriv_kernel_eval(1, 2, &x, &x2, &unit()).unwrap();
        assert_relative_eq!(v, -(-1.0f64).exp(), max_relative = 1e-14);
    }

    #[test]
    fn derivative_index_out_of_range() {
        assert!(deriv_kernel_eval(3, 0, &[0.0, 0.0], &[0.0, 0.0], &unit()).is_err());
        assert!(deriv_kernel_eval(0, 3, &[0.0, 0.0], &[0.0, 0.0], &unit()).is_err());
    }

    #[test]
    fn training_cov_without_gradients_is_plain_kernel() {
        let p = KernelParams::new(1.3, 0.7, 1e-6, vec![]).unwrap();
        let x = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.5, 0.1, -0.3, 0.8]);
        let cov = assemble_training_cov(&x, &DMatrix::zeros(0, 2), &[], &p).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let xi: Vec<f64> = x.row(i).iter().copied().collect();
                let xj: Vec<f64> = x.row(j).iter().copied().collect();
                let expected = rbf_eval(&xi, &xj, &p).unwrap() + if i == j { 1e-6 } else { 0.0 };
                assert_relative_eq!(cov.k_train[(i, j)], expected, max_relative = 1e-15);
            }
        }
    }

    #[test]
    fn training_cov_one_point_with_gradient() {
        let (sigma, l, nu2, lam2) = (1.7, 0.6, 1e-9, 0.05);
        let p = KernelParams::new(sigma, l, nu2, vec![lam2]).unwrap();
        let x = DMatrix::from_row_slice(1, 1, &[0.3]);
        let cov = assemble_training_cov(&x, &x, &[1], &p).unwrap();
        assert_eq!(cov.k_train.shape(), (2, 2));
        assert_relative_eq!(cov.k_train[(0, 0)], sigma + nu2, max_relative = 1e-15);
        assert_eq!(cov.k_train[(0, 1)], 0.0);
        assert_eq!(cov.k_train[(1, 0)], 0.0);
        assert_relative_eq!(cov.k_train[(1, 1)], sigma / (l * l) + lam2, max_relative = 1e-15);
    }

    #[test]
    fn training_cov_omits_missing_gradient_dims() {
        let p = KernelParams::new(1.0, 0.5, 1e-10, vec![0.1, 0.2]).unwrap();
        let x = DMatrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64 * 0.1);
        let cov = assemble_training_cov(&x, &x, &[1, 3], &p).unwrap();
        assert_eq!(cov.k_train.nrows(), 4 + 2 * 4);
        // row of ∂/∂x_3 at point 2 against value at point 0
        let r = cov.row_layout.grad_row(1, 2);
        let xi: Vec<f64> = x.row(2).iter().copied().collect();
        let xj: Vec<f64> = x.row(0).iter().copied().collect();
        assert_relative_eq!(cov.k_train[(r, 0)], deriv_kernel_eval(3, 0, &xi, &xj, &p).unwrap(), max_relative = 1e-14);
    }

    #[test]
    fn grad_noise_length_must_match() {
        let p = KernelParams::new(1.0, 0.5, 1e-10, vec![0.1]).unwrap();
        let x = DMatrix::from_element(2, 2, 0.0);
        assert!(assemble_training_cov(&x, &x, &[1, 2], &p).is_err());
        assert!(assemble_training_cov(&x, &x, &[3], &p).is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let p = KernelParams::default();
        let a = DMatrix::from_element(2, 2, 0.0);
        let b = DMatrix::from_element(2, 3, 0.0);
        assert!(assemble_training_cov(&a, &b, &[], &p).is_err());
        assert!(assemble_query_cross(&b, &a, &a, &[], &p).is_err());
    }

    #[test]
    fn query_cross_matches_training_row() {
        let p = KernelParams::new(1.0, 0.8, 0.0, vec![]).unwrap();
        let x = DMatrix::from_fn(5, 2, |i, j| ((i + 1) * (j + 2)) as f64 * 0.1);
        let cov = assemble_training_cov(&x, &DMatrix::zeros(0, 2), &[], &p).unwrap();
        let q = x.rows(2, 1).clone_owned();
        let cross = assemble_query_cross(&q, &x, &DMatrix::zeros(0, 2), &[], &p).unwrap();
        for j in 0..5 {
            assert_eq!(cross[(0, j)], cov.k_train[(2, j)]);
        }
    }

    #[test]
    fn query_cross_shape_and_decay() {
        let p = KernelParams::new(1.0, 0.5, 0.0, vec![0.1, 0.1]).unwrap();
        let x = DMatrix::from_fn(3, 2, |i, j| (i + j) as f64 * 0.1);
        let q = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 100.0, 100.0]);
        let cross = assemble_query_cross(&q, &x, &x, &[1, 2], &p).unwrap();
        assert_eq!(cross.shape(), (2, 9));
        assert!(cross.row(1).iter().all(|v| v.abs() < 1e-300));
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn training_cov_is_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x = random_points(&mut rng, 20, 3);
            let p = KernelParams::new(1.0, rng.random_range(0.2..1.5), 1e-10, vec![1e-6; 3]).unwrap();
            let cov = assemble_training_cov(&x, &x, &[1, 2, 3], &p).unwrap();
            let k = &cov.k_train;
            assert_eq!(k, &k.transpose());
            for i in 0..20 {
                assert!(k[(i, i)] >= p.sigma);
            }
            let eig = k.clone().symmetric_eigenvalues();
            assert!(eig.min() >= -1e-10, "min eigenvalue {}", eig.min());
        }
    }

    #[test]
    fn derivative_variants_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let h = 1e-5;
        for _ in 0..50 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x2: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = KernelParams::new(rng.random_range(0.5..2.0), rng.random_range(0.3..1.5), 0.0, vec![]).unwrap();
            let shift = |v: &[f64], i: usize, s: f64| {
                let mut w = v.to_vec();
                w[i] += s;
                w
            };
            for n in 1..=4 {
                let fd = (rbf_eval(&shift(&x, n - 1, h), &x2, &p).unwrap()
                    - rbf_eval(&shift(&x, n - 1, -h), &x2, &p).unwrap())
                    / (2.0 * h);
                let an = deriv_kernel_eval(n, 0, &x, &x2, &p).unwrap();
                assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3));
                let fd = (rbf_eval(&x, &shift(&x2, n - 1, h), &p).unwrap()
                    - rbf_eval(&x, &shift(&x2, n - 1, -h), &p).unwrap())
                    / (2.0 * h);
                let an = deriv_kernel_eval(0, n, &x, &x2, &p).unwrap();
                assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3));
                for m in 1..=4 {
                    let fd = (deriv_kernel_eval(n, 0, &x, &shift(&x2, m - 1, h), &p).unwrap()
                        - deriv_kernel_eval(n, 0, &x, &shift(&x2, m - 1, -h), &p).unwrap())
                        / (2.0 * h);
                    let an = deriv_kernel_eval(n, m, &x, &x2, &p).unwrap();
                    assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-3), "({n},{m}) fd {fd} analytic {an}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn rbf_is_symmetric(
            a in proptest::collection::vec(-5.0f64..5.0, 4),
            b in proptest::collection::vec(-5.0f64..5.0, 4),
            l in 0.1f64..3.0,
        ) {
            let p = KernelParams::new(1.0, l, 0.0, vec![]).unwrap();
            prop_assert_eq!(rbf_eval(&a, &b, &p).unwrap(), rbf_eval(&b, &a, &p).unwrap());
        }

        #[test]
        fn derivative_kernels_are_cross_symmetric(
            a in proptest::collection::vec(-2.0f64..2.0, 3),
            b in proptest::collection::vec(-2.0f64..2.0, 3),
            n in 0usize..=3,
            m in 0usize..=3,
        ) {
            let p = KernelParams::new(1.2, 0.7, 0.0, vec![]).unwrap();
            let lhs = deriv_kernel_eval(n, m, &a, &b, &p).unwrap();
            let rhs = deriv_kernel_eval(m, n, &b, &a, &p).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-14 * lhs.abs().max(1.0));
        }
    }
}

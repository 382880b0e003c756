//! Exact dense GP inference with optional gradient observations.
//!
//! These models are the reference against which the partitioned predictor
//! is verified, and they provide the GP / GP-G baselines.

use nalgebra::{DMatrix, DVector};

use crate::error::{GpError, Result};
use crate::kernel::{cov_cross, cov_symmetric, pool, KernelParams, PointSet, RowId, RowLayout};
use crate::linalg::SpdFactor;

/// A fitted exact GP sharing one covariance across all output columns.
#[derive(Debug)]
pub struct DenseGpModel {
    points: PointSet,
    rows: Vec<RowId>,
    layout: RowLayout,
    targets: DMatrix<f64>,
    params: KernelParams,
    factor: SpdFactor,
    /// `K̄_{a,a}⁻¹ Y_a`.
    alpha: DMatrix<f64>,
}

/// Posterior mean per query and output, and the marginal variance per query.
#[derive(Debug, Clone, PartialEq)]
pub struct GpPrediction {
    pub mean: DMatrix<f64>,
    pub var: DVector<f64>,
}

/// Fits `K̄_{a,a}⁻¹` for values `Y_d` at `X_d` and gradients at `X_g`.
///
/// `grads[k]` holds `∂Y/∂[x]_{grad_dims[k]}` at every `X_g` point, one row
/// per point and one column per output.
pub fn fit_dense(
    x_d: &DMatrix<f64>,
    y_d: &DMatrix<f64>,
    x_g: &DMatrix<f64>,
    grads: &[DMatrix<f64>],
    grad_dims: &[usize],
    p: &KernelParams,
) -> Result<DenseGpModel> {
    p.validate()?;
    let d = if x_d.nrows() > 0 { x_d.ncols() } else { x_g.ncols() };
    if x_g.nrows() > 0 && x_g.ncols() != d {
        return Err(GpError::invalid(format!("X_d has {} columns but X_g has {}", x_d.ncols(), x_g.ncols())));
    }
    if y_d.nrows() != x_d.nrows() {
        return Err(GpError::invalid(format!("{} value targets for {} value points", y_d.nrows(), x_d.nrows())));
    }
    if grads.len() != grad_dims.len() {
        return Err(GpError::invalid(format!(
            "{} gradient blocks for {} gradient dimensions",
            grads.len(),
            grad_dims.len()
        )));
    }
    let n_out = y_d.ncols();
    if n_out == 0 {
        return Err(GpError::invalid("at least one output column is required"));
    }
    for (k, g) in grads.iter().enumerate() {
        if g.nrows() != x_g.nrows() || g.ncols() != n_out {
            return Err(GpError::invalid(format!(
                "gradient block {k} is {}x{}, expected {}x{}",
                g.nrows(),
                g.ncols(),
                x_g.nrows(),
                n_out
            )));
        }
    }
    if x_d.iter().chain(x_g.iter()).any(|v| !v.is_finite()) {
        return Err(GpError::invalid("non-finite training input"));
    }
    let n_g = if grad_dims.is_empty() { 0 } else { x_g.nrows() };
    let layout = RowLayout::new(x_d.nrows(), n_g, grad_dims.to_vec());
    let points = pool(x_d, x_g, d);
    let rows = layout.rows(0, x_d.nrows());

    let mut targets = DMatrix::zeros(layout.len(), n_out);
    targets.rows_mut(0, x_d.nrows()).copy_from(y_d);
    for (k, g) in grads.iter().enumerate() {
        if n_g > 0 {
            targets.rows_mut(layout.grad_row(k, 0), n_g).copy_from(g);
        }
    }
    fit_rows(points, rows, layout, targets, p.clone())
}

/// Fits a model whose value and gradient observations share the points `x`.
pub fn fit_shared(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    grads: &[DMatrix<f64>],
    grad_dims: &[usize],
    p: &KernelParams,
) -> Result<DenseGpModel> {
    p.validate()?;
    if grad_dims.is_empty() {
        return fit_dense(x, y, &DMatrix::zeros(0, x.ncols()), &[], &[], p);
    }
    if grads.len() != grad_dims.len() {
        return Err(GpError::invalid(format!(
            "{} gradient blocks for {} gradient dimensions",
            grads.len(),
            grad_dims.len()
        )));
    }
    let n = x.nrows();
    if y.nrows() != n || y.ncols() == 0 || grads.iter().any(|g| g.shape() != y.shape()) {
        return Err(GpError::invalid("values and gradients must share the point set and output count"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(GpError::invalid("non-finite training input"));
    }
    let layout = RowLayout::new(n, n, grad_dims.to_vec());
    let mut targets = DMatrix::zeros(layout.len(), y.ncols());
    targets.rows_mut(0, n).copy_from(y);
    for (k, g) in grads.iter().enumerate() {
        targets.rows_mut(layout.grad_row(k, 0), n).copy_from(g);
    }
    let rows = layout.rows(0, 0);
    fit_rows(PointSet::from_matrix(x), rows, layout, targets, p.clone())
}

fn fit_rows(
    points: PointSet,
    rows: Vec<RowId>,
    layout: RowLayout,
    targets: DMatrix<f64>,
    params: KernelParams,
) -> Result<DenseGpModel> {
    let noise = params.noise_table(points.dim(), &layout.grad_dims)?;
    let k = cov_symmetric(&points, &rows, &params, &noise);
    let factor = SpdFactor::new(&k)?;
    let alpha = factor.solve(&targets);
    Ok(DenseGpModel { points, rows, layout, targets, params, factor, alpha })
}

impl DenseGpModel {
    pub fn layout(&self) -> &RowLayout {
        &self.layout
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    /// Stacked targets `Y_a`.
    pub fn targets(&self) -> &DMatrix<f64> {
        &self.targets
    }

    pub fn n_outputs(&self) -> usize {
        self.targets.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.points.dim()
    }

    /// Applies `K̄_{a,a}⁻¹` to `b`.
    pub fn apply_inverse(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.factor.solve(b)
    }

    /// The GP posterior without gradient rows; rejects models that carry them.
    pub fn predict_standard(&self, x_q: &DMatrix<f64>) -> Result<GpPrediction> {
        if self.layout.len() > self.layout.n_d {
            return Err(GpError::invalid("predict_standard needs a model without gradient observations"));
        }
        self.predict_with_gradients(x_q)
    }

    /// `μ = K̄_{q,a} K̄_{a,a}⁻¹ Y_a` and the diagonal of
    /// `K_{q,q} − K̄_{q,a} K̄_{a,a}⁻¹ K̄_{q,a}ᵀ`.
    pub fn predict_with_gradients(&self, x_q: &DMatrix<f64>) -> Result<GpPrediction> {
        let cross = self.query_cross(x_q)?;
        let mean = &cross * &self.alpha;
        let v = self.factor.solve(&cross.transpose());
        let var = DVector::from_fn(x_q.nrows(), |i, _| {
            let reduction = cross.row(i).transpose().dot(&v.column(i));
            let raw = self.params.sigma - reduction;
            debug_assert!(raw >= -1e-10 * self.params.sigma.max(1.0), "variance {raw}");
            raw.max(0.0)
        });
        Ok(GpPrediction { mean, var })
    }

    /// Full posterior covariance `K_{q|a}` over the queries.
    pub fn posterior_covariance(&self, x_q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let cross = self.query_cross(x_q)?;
        let q = PointSet::from_matrix(x_q);
        let q_rows: Vec<RowId> = (0..x_q.nrows()).map(RowId::value).collect();
        let prior = cov_cross(&q, &q_rows, &q, &q_rows, &self.params);
        Ok(prior - &cross * self.factor.solve(&cross.transpose()))
    }

    fn query_cross(&self, x_q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x_q.ncols() != self.points.dim() {
            return Err(GpError::invalid(format!(
                "query has {} columns, model input dimension is {}",
                x_q.ncols(),
                self.points.dim()
            )));
        }
        if x_q.iter().any(|v| !v.is_finite()) {
            return Err(GpError::invalid("non-finite query"));
        }
        let q = PointSet::from_matrix(x_q);
        let q_rows: Vec<RowId> = (0..x_q.nrows()).map(RowId::value).collect();
        Ok(cov_cross(&q, &q_rows, &self.points, &self.rows, &self.params))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    fn no_grad(d: usize) -> DMatrix<f64> {
        DMatrix::zeros(0, d)
    }

    #[test]
    fn single_point_system() {
        let p = KernelParams::new(2.0, 1.0, 1e-9, vec![]).unwrap();
        let m = fit_dense(&col(&[0.0]), &col(&[3.0]), &no_grad(1), &[], &[], &p).unwrap();
        let inv = m.apply_inverse(&DMatrix::from_element(1, 1, 1.0));
        assert_relative_eq!(inv[(0, 0)], 1.0 / (2.0 + 1e-9), max_relative = 1e-14);
    }

    #[test]
    fn random_multi_output_fit_has_small_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = DMatrix::from_fn(30, 3, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(30, 2, |_, _| rng.random_range(-1.0..1.0));
        let p = KernelParams::new(1.0, 0.5, 1e-10, vec![]).unwrap();
        let m = fit_dense(&x, &y, &no_grad(3), &[], &[], &p).unwrap();
        let noise = p.noise_table(3, &[]).unwrap();
        let rows: Vec<RowId> = (0..30).map(RowId::value).collect();
        let k = cov_symmetric(&PointSet::from_matrix(&x), &rows, &p, &noise);
        let probe = DMatrix::from_fn(30, 4, |i, j| ((i * 5 + j) as f64).sin());
        let back = &k * m.apply_inverse(&probe);
        assert!((back - probe).amax() < 1e-8);
    }

    #[test]
    fn duplicate_points_factorize_with_jitter() {
        let x = col(&[0.1, 0.1, 0.5]);
        let y = col(&[1.0, 1.0, 0.0]);
        let p = KernelParams::new(1.0, 0.5, 1e-10, vec![]).unwrap();
        assert!(fit_dense(&x, &y, &no_grad(1), &[], &[], &p).is_ok());
    }

    #[test]
    fn interpolates_training_points_in_low_jitter_limit() {
        let x = col(&[-1.0, 0.0, 0.7]);
        let y = col(&[0.3, -0.2, 0.9]);
        let p = KernelParams::new(1.0, 0.5, 1e-12, vec![]).unwrap();
        let m = fit_dense(&x, &y, &no_grad(1), &[], &[], &p).unwrap();
        let pred = m.predict_standard(&x).unwrap();
        for i in 0..3 {
            assert!((pred.mean[(i, 0)] - y[(i, 0)]).abs() < 1e-8);
            assert!(pred.var[i] < 1e-8);
        }
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let x = col(&[0.0, 0.3]);
        let y = col(&[1.0, 2.0]);
        let p = KernelParams::new(1.5, 0.5, 1e-10, vec![]).unwrap();
        let m = fit_dense(&x, &y, &no_grad(1), &[], &[], &p).unwrap();
        let pred = m.predict_standard(&col(&[50.0])).unwrap();
        assert!(pred.mean[(0, 0)].abs() < 1e-12);
        assert_relative_eq!(pred.var[0], 1.5, max_relative = 1e-12);
    }

    #[test]
    fn matches_independent_dense_inverse_formula() {
        let xs = [-0.9, -0.4, 0.05, 0.5, 0.95];
        let ys = [0.2, -0.5, 0.1, 0.8, -0.3];
        let p = KernelParams::new(1.0, 0.4, 1e-10, vec![]).unwrap();
        let m = fit_dense(&col(&xs), &col(&ys), &no_grad(1), &[], &[], &p).unwrap();
        // oracle: explicit inverse by Gauss-Jordan via nalgebra's LU
        let k = DMatrix::from_fn(5, 5, |i, j| {
            (-(xs[i] - xs[j]).powi(2) / (2.0 * 0.16)).exp() + if i == j { 1e-10 } else { 0.0 }
        });
        let kinv = k.clone().try_inverse().unwrap();
        let qs = [-0.6, 0.0, 0.33, 0.8];
        let pred = m.predict_standard(&col(&qs)).unwrap();
        for (i, q) in qs.iter().enumerate() {
            let kq = DVector::from_fn(5, |j, _| (-(q - xs[j]).powi(2) / 0.32).exp());
            let mean = kq.dot(&(&kinv * DVector::from_column_slice(&ys)));
            let var = 1.0 - kq.dot(&(&kinv * &kq));
            assert!((pred.mean[(i, 0)] - mean).abs() < 1e-10);
            assert!((pred.var[i] - var).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_free_model_matches_standard_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DMatrix::from_fn(12, 2, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(12, 3, |_, _| rng.random_range(-1.0..1.0));
        let q = DMatrix::from_fn(7, 2, |_, _| rng.random_range(-1.0..1.0));
        let p = KernelParams::new(1.0, 0.6, 1e-10, vec![]).unwrap();
        let m = fit_dense(&x, &y, &no_grad(2), &[], &[], &p).unwrap();
        assert_eq!(m.predict_standard(&q).unwrap(), m.predict_with_gradients(&q).unwrap());
    }

    #[test]
    fn predict_standard_rejects_gradient_models() {
        let p = KernelParams::new(1.0, 1.0, 1e-10, vec![0.1]).unwrap();
        let m = fit_dense(&col(&[0.0]), &col(&[0.0]), &col(&[0.0]), &[col(&[1.0])], &[1], &p).unwrap();
        assert!(m.predict_standard(&col(&[0.1])).is_err());
    }

    #[test]
    fn value_and_slope_at_origin() {
        // f(x) = x observed as f(0) = 0 and f'(0) = 1
        let p = KernelParams::new(1.0, 1.0, 1e-10, vec![1e-10]).unwrap();
        let m = fit_dense(&col(&[0.0]), &col(&[0.0]), &col(&[0.0]), &[col(&[1.0])], &[1], &p).unwrap();
        let h = 0.05;
        let pred = m.predict_with_gradients(&col(&[h])).unwrap();
        // oracle: 2x2 system [[σ+ν², 0], [0, σ/l²+λ²]] against k(h) = [e, h e]
        let e = (-h * h / 2.0f64).exp();
        let mean = 0.0 / (1.0 + 1e-10) * e + 1.0 / (1.0 + 1e-10) * h * e;
        assert_relative_eq!(pred.mean[(0, 0)], mean, max_relative = 1e-12);
        assert!(pred.mean[(0, 0)] > 0.0);
        let below = m.predict_with_gradients(&col(&[-h])).unwrap();
        assert!(below.mean[(0, 0)] < 0.0);
    }

    #[test]
    fn huge_gradient_noise_recovers_value_only_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = DMatrix::from_fn(8, 2, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(8, 1, |_, _| rng.random_range(-1.0..1.0));
        let g1 = DMatrix::from_fn(8, 1, |_, _| rng.random_range(-1.0..1.0));
        let g2 = DMatrix::from_fn(8, 1, |_, _| rng.random_range(-1.0..1.0));
        let q = DMatrix::from_fn(10, 2, |_, _| rng.random_range(-1.0..1.0));
        let base = KernelParams::new(1.0, 0.5, 1e-10, vec![]).unwrap();
        let noisy = KernelParams::new(1.0, 0.5, 1e-10, vec![1e12, 1e12]).unwrap();
        let plain = fit_dense(&x, &y, &no_grad(2), &[], &[], &base).unwrap();
        let grad = fit_shared(&x, &y, &[g1, g2], &[1, 2], &noisy).unwrap();
        let a = plain.predict_standard(&q).unwrap();
        let b = grad.predict_with_gradients(&q).unwrap();
        assert!((a.mean - b.mean).amax() < 1e-6);
        assert!((a.var - b.var).amax() < 1e-6);
    }

    #[test]
    fn posterior_variance_bounded_by_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(15, 2, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(15, 1, |_, _| rng.random_range(-1.0..1.0));
        let g = DMatrix::from_fn(15, 1, |_, _| rng.random_range(-1.0..1.0));
        let p = KernelParams::new(0.8, 0.5, 1e-10, vec![0.01]).unwrap();
        let m = fit_shared(&x, &y, &[g], &[2], &p).unwrap();
        let q = DMatrix::from_fn(200, 2, |_, _| rng.random_range(-2.0..2.0));
        let pred = m.predict_with_gradients(&q).unwrap();
        assert!(pred.var.iter().all(|&v| (0.0..=0.8 + 1e-10).contains(&v)));
    }

    #[test]
    fn gradient_observation_never_increases_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let x = DMatrix::from_fn(6, 1, |_, _| rng.random_range(-1.0..1.0));
            let y = DMatrix::from_fn(6, 1, |_, _| rng.random_range(-1.0..1.0));
            let g = DMatrix::from_fn(6, 1, |_, _| rng.random_range(-1.0..1.0));
            let q = DMatrix::from_fn(50, 1, |_, _| rng.random_range(-1.5..1.5));
            let p0 = KernelParams::new(1.0, 0.4, 1e-10, vec![]).unwrap();
            let p1 = KernelParams::new(1.0, 0.4, 1e-10, vec![0.05]).unwrap();
            let a = fit_dense(&x, &y, &no_grad(1), &[], &[], &p0).unwrap().predict_standard(&q).unwrap();
            let b = fit_shared(&x, &y, &[g], &[1], &p1).unwrap().predict_with_gradients(&q).unwrap();
            for i in 0..50 {
                assert!(b.var[i] <= a.var[i] + 1e-10);
            }
        }
    }

    #[test]
    fn outputs_are_separable() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = DMatrix::from_fn(10, 2, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(10, 3, |_, _| rng.random_range(-1.0..1.0));
        let g = DMatrix::from_fn(10, 3, |_, _| rng.random_range(-1.0..1.0));
        let q = DMatrix::from_fn(5, 2, |_, _| rng.random_range(-1.0..1.0));
        let p = KernelParams::new(1.0, 0.5, 1e-10, vec![0.1]).unwrap();
        let joint = fit_shared(&x, &y, std::slice::from_ref(&g), &[1], &p).unwrap().predict_with_gradients(&q).unwrap();
        for c in 0..3 {
            let single = fit_shared(&x, &y.columns(c, 1).clone_owned(), &[g.columns(c, 1).clone_owned()], &[1], &p)
                .unwrap()
                .predict_with_gradients(&q)
                .unwrap();
            assert!((joint.mean.column(c) - single.mean.column(0)).amax() < 1e-12);
        }
    }

    #[test]
    fn full_covariance_diagonal_matches_variance() {
        let x = col(&[-0.5, 0.2, 0.9]);
        let y = col(&[0.1, 0.4, -0.2]);
        let p = KernelParams::new(1.0, 0.5, 1e-10, vec![]).unwrap();
        let m = fit_dense(&x, &y, &no_grad(1), &[], &[], &p).unwrap();
        let q = col(&[-0.2, 0.5]);
        let cov = m.posterior_covariance(&q).unwrap();
        let pred = m.predict_standard(&q).unwrap();
        for i in 0..2 {
            assert!((cov[(i, i)] - pred.var[i]).abs() < 1e-12);
        }
        assert!((cov[(0, 1)] - cov[(1, 0)]).abs() < 1e-12);
    }
}

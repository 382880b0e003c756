//! Real-time query path: align the frame with the airspeed, extract Euler
//! angles, predict in the aligned frame and recompose in the world frame.

use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::data::denormalize_prediction;
use crate::error::{GpError, Result};
use crate::model::TrainedModel;
use crate::partition::locate_bin;
use crate::quad_model::{eval_model, rotation_zyx};
use crate::schur::predict_partitioned_with;

const DEGENERATE: f64 = 1e-9;
const GIMBAL: f64 = 1e-8;
const ORTHO_TOL: f64 = 1e-6;

/// `I − 2uuᵀ` with `u = (v̂ − e_x)/‖v̂ − e_x‖`, mapping `v̂` onto `e_x`.
/// Identity for `‖v‖ < 1e-9` or when `v` already points along +x.
pub fn householder_align(v: &Vector3<f64>) -> Matrix3<f64> {
    let n = v.norm();
    if n < DEGENERATE {
        return Matrix3::identity();
    }
    let d = v / n - Vector3::x();
    let dn = d.norm();
    if dn < DEGENERATE {
        return Matrix3::identity();
    }
    let u = d / dn;
    Matrix3::identity() - 2.0 * u * u.transpose()
}

/// ZYX angles `(ψ, θ, φ)` with `rotation_zyx(ψ, θ, φ) = r` for proper rotations.
/// At gimbal lock `φ = 0` and the remaining rotation goes into `ψ`.
pub fn euler_zyx_from_matrix(r: &Matrix3<f64>) -> Result<(f64, f64, f64)> {
    if r.iter().any(|v| !v.is_finite()) {
        return Err(GpError::invalid("rotation matrix has non-finite entries"));
    }
    let dev = (r.transpose() * r - Matrix3::identity()).amax();
    if dev > ORTHO_TOL {
        return Err(GpError::invalid(format!("matrix is not orthogonal (max |RᵀR − I| = {dev:.3e})")));
    }
    let theta = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    if theta.cos().abs() < GIMBAL {
        let psi = (-r[(0, 1)]).atan2(r[(1, 1)]);
        return Ok((psi, theta, 0.0));
    }
    let psi = r[(1, 0)].atan2(r[(0, 0)]);
    let phi = r[(2, 1)].atan2(r[(2, 2)]);
    Ok((psi, theta, phi))
}

/// How the airspeed-aligned frame is constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignMode {
    /// Proper rotation `R_z(α) R_y(β)` taking +x onto the airspeed direction,
    /// `α = atan2(v_y, v_x)`, `β = asin(−v̂_z)`.
    #[default]
    Heading,
    /// The Householder reflector itself (determinant −1).
    Reflector,
}

/// `R_WH`: columns are the aligned-frame axes in world coordinates.
pub fn aligned_frame(v: &Vector3<f64>, mode: AlignMode) -> Matrix3<f64> {
    match mode {
        AlignMode::Reflector => householder_align(v),
        AlignMode::Heading => {
            let n = v.norm();
            if n < DEGENERATE {
                return Matrix3::identity();
            }
            let u = v / n;
            let alpha = if u.x.hypot(u.y) < DEGENERATE { 0.0 } else { u.y.atan2(u.x) };
            let beta = (-u.z).clamp(-1.0, 1.0).asin();
            rotation_zyx(alpha, beta, 0.0)
        }
    }
}

/// A query in world coordinates. Angles are radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldQuery {
    pub r: [f64; 4],
    pub psi: f64,
    pub theta: f64,
    pub phi: f64,
    pub v: [f64; 3],
}

impl WorldQuery {
    pub fn validate(&self) -> Result<()> {
        let all = self.r.iter().chain(&self.v).chain([&self.psi, &self.theta, &self.phi]);
        if all.clone().any(|x| !x.is_finite()) {
            return Err(GpError::invalid("query has non-finite fields"));
        }
        if let Some(i) = self.r.iter().position(|x| *x < 0.0) {
            return Err(GpError::invalid(format!("rotor {} speed is negative", i + 1)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// `(F_w, τ_w, L)`.
    pub mean: [f64; 9],
    pub std: [f64; 9],
    pub bin_id: usize,
    pub latency_ns: u64,
    /// The aligned state lies outside the sampling bounds.
    pub extrapolated: bool,
    /// Determinant of the aligned attitude matrix.
    pub det_hb: f64,
}

/// Prediction for an aligned-frame state, in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePrediction {
    /// Learned residual of the wrench followed by the sound levels.
    pub residual_mean: [f64; 9],
    pub var: [f64; 9],
    pub bin_id: usize,
}

impl TrainedModel {
    /// Partitioned prediction at an aligned-frame state `(r1..r4, ψ, θ, φ, v)`.
    pub fn predict_state(&self, x: &[f64; 8], scratch: &mut Vec<f64>) -> Result<StatePrediction> {
        let xt = self.stats.normalize_x(x);
        let bin_id = locate_bin(&xt, &self.partition, &self.points);
        let pre = &self.bins[bin_id];
        let p = predict_partitioned_with(&xt, pre, &self.params, self.use_schur, scratch)?;
        let mean_t: [f64; 9] = std::array::from_fn(|o| p.mean[o]);
        let (residual_mean, var) = denormalize_prediction(&mean_t, &[p.var; 9], &self.stats);
        Ok(StatePrediction { residual_mean, var, bin_id })
    }

    /// Aligned-frame prediction of the full wrench and sound levels.
    pub fn predict_state_total(&self, x: &[f64; 8], scratch: &mut Vec<f64>) -> Result<([f64; 9], [f64; 9])> {
        let sp = self.predict_state(x, scratch)?;
        let w = eval_model(&std::array::from_fn(|i| x[i]), &self.quad)?.wrench();
        let mean = std::array::from_fn(|o| sp.residual_mean[o] + if o < 6 { w[o] } else { 0.0 });
        Ok((mean, sp.var))
    }

    pub fn query(&self, wq: &WorldQuery) -> Result<Prediction> {
        let mut scratch = Vec::new();
        self.query_with(wq, &mut scratch)
    }

    /// As [`TrainedModel::query`], reusing `scratch` across calls.
    pub fn query_with(&self, wq: &WorldQuery, scratch: &mut Vec<f64>) -> Result<Prediction> {
        let start = Instant::now();
        wq.validate()?;
        let v = Vector3::from(wq.v);
        let r_wh = aligned_frame(&v, self.align);
        let r_wb = rotation_zyx(wq.psi, wq.theta, wq.phi);
        let r_hb = r_wh.transpose() * r_wb;
        let (psi_h, theta_h, phi_h) = euler_zyx_from_matrix(&r_hb)?;
        let x = [wq.r[0], wq.r[1], wq.r[2], wq.r[3], psi_h, theta_h, phi_h, v.norm()];
        let sp = self.predict_state(&x, scratch)?;

        let model = eval_model(&[wq.r[0], wq.r[1], wq.r[2], wq.r[3], wq.psi, wq.theta, wq.phi], &self.quad)?;
        let m = &sp.residual_mean;
        let f = r_wh * Vector3::new(m[0], m[1], m[2]) + model.f_w;
        let t = r_wh * Vector3::new(m[3], m[4], m[5]) + model.tau_w;
        let rotated_std = |off: usize| -> [f64; 3] {
            std::array::from_fn(|i| (0..3).map(|j| r_wh[(i, j)].powi(2) * sp.var[off + j]).sum::<f64>().sqrt())
        };
        let (sf, st) = (rotated_std(0), rotated_std(3));
        let mean = [f.x, f.y, f.z, t.x, t.y, t.z, m[6], m[7], m[8]];
        let std = [sf[0], sf[1], sf[2], st[0], st[1], st[2], sp.var[6].sqrt(), sp.var[7].sqrt(), sp.var[8].sqrt()];
        Ok(Prediction {
            mean,
            std,
            bin_id: sp.bin_id,
            latency_ns: start.elapsed().as_nanos() as u64,
            extrapolated: !self.bounds.contains(&x),
            det_hb: r_hb.determinant(),
        })
    }
}

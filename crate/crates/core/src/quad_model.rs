//! The simple analytic quadrotor model: body-frame thrust and torques from
//! rotor speeds, ZYX rotation into the world frame, and the 6×7 Jacobian.
//!
//! The world frame has +z pointing down, so the thrust coefficient is
//! negative and hover thrust points along −z.

use nalgebra::{Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{GpError, Result};

/// Sign pattern of the x torque (and the yaw torque) over the four rotors.
pub(crate) const SIGN_X: [f64; 4] = [-1.0, 1.0, 1.0, -1.0];
pub(crate) const SIGN_Y: [f64; 4] = [-1.0, -1.0, 1.0, 1.0];
pub(crate) const SIGN_Z: [f64; 4] = [-1.0, 1.0, 1.0, -1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadParams {
    /// Thrust coefficient, N/rpm².
    pub p_f: f64,
    /// Yaw-torque coefficient, N·m/rpm².
    pub t_z: f64,
    pub l_x: f64,
    pub l_y: f64,
    pub mass: f64,
    pub g: f64,
    pub hover_rpm: f64,
}

impl Default for QuadParams {
    fn default() -> Self {
        Self::calibrated(2.6, 9.81, 3500.0, 0.2, 0.2, 0.01).expect("default parameters are valid")
    }
}

impl QuadParams {
    /// Builds parameters with `p_f` fixed by the hover condition
    /// `4·p_f·hover² = −mass·g` and `t_z = t_z_ratio·|p_f|`.
    pub fn calibrated(mass: f64, g: f64, hover_rpm: f64, l_x: f64, l_y: f64, t_z_ratio: f64) -> Result<Self> {
        for (name, v) in [("mass", mass), ("g", g), ("hover_rpm", hover_rpm)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(GpError::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("l_x", l_x), ("l_y", l_y), ("t_z_ratio", t_z_ratio)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(GpError::invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        let p_f = -mass * g / (4.0 * hover_rpm * hover_rpm);
        Ok(Self { p_f, t_z: t_z_ratio * p_f.abs(), l_x, l_y, mass, g, hover_rpm })
    }

    /// Checks the hover calibration to 1e-9 relative.
    pub fn validate(&self) -> Result<()> {
        let fields = [self.p_f, self.t_z, self.l_x, self.l_y, self.mass, self.g, self.hover_rpm];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(GpError::invalid("non-finite quadrotor parameter"));
        }
        let weight = self.mass * self.g;
        let hover = (4.0 * self.p_f * self.hover_rpm * self.hover_rpm).abs();
        if (hover - weight).abs() > 1e-9 * weight.max(1.0) {
            return Err(GpError::invalid(format!(
                "thrust coefficient does not balance the weight at hover: {hover} vs {weight}"
            )));
        }
        Ok(())
    }
}

/// World wrench and its Jacobian with respect to `(r1..r4, ψ, θ, φ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelEval {
    pub f_w: Vector3<f64>,
    pub tau_w: Vector3<f64>,
    pub jac: SMatrix<f64, 6, 7>,
}

impl ModelEval {
    /// `(F_w, τ_w)` stacked.
    pub fn wrench(&self) -> [f64; 6] {
        [self.f_w.x, self.f_w.y, self.f_w.z, self.tau_w.x, self.tau_w.y, self.tau_w.z]
    }
}

fn check_rpm(r: &[f64; 4]) -> Result<()> {
    if let Some((i, v)) = r.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
        return Err(GpError::invalid(format!("rotor {} speed must be >= 0, got {v}", i + 1)));
    }
    Ok(())
}

pub fn body_wrench(r: &[f64; 4], q: &QuadParams) -> Result<(Vector3<f64>, Vector3<f64>)> {
    check_rpm(r)?;
    let sq = r.map(|v| v * v);
    let comb = |s: &[f64; 4]| s.iter().zip(&sq).map(|(a, b)| a * b).sum::<f64>();
    let f = Vector3::new(0.0, 0.0, q.p_f * sq.iter().sum::<f64>());
    let tau = Vector3::new(q.l_x * q.p_f * comb(&SIGN_X), q.l_y * q.p_f * comb(&SIGN_Y), q.t_z * comb(&SIGN_Z));
    Ok((f, tau))
}

fn rz(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn ry(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rx(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn drz(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

fn dry(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn drx(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

/// `R_z(ψ) R_y(θ) R_x(φ)`, body to world.
pub fn rotation_zyx(psi: f64, theta: f64, phi: f64) -> Matrix3<f64> {
    rz(psi) * ry(theta) * rx(phi)
}

/// Partial derivatives of [`rotation_zyx`] with respect to ψ, θ and φ.
pub fn rotation_zyx_partials(psi: f64, theta: f64, phi: f64) -> [Matrix3<f64>; 3] {
    let (z, y, x) = (rz(psi), ry(theta), rx(phi));
    [drz(psi) * y * x, z * dry(theta) * x, z * y * drx(phi)]
}

/// Evaluates the model at `x_m = (r1, r2, r3, r4, ψ, θ, φ)`.
pub fn eval_model(x_m: &[f64; 7], q: &QuadParams) -> Result<ModelEval> {
    let r = [x_m[0], x_m[1], x_m[2], x_m[3]];
    if x_m[4..].iter().any(|a| !a.is_finite()) {
        return Err(GpError::invalid("non-finite attitude"));
    }
    let (f_b, tau_b) = body_wrench(&r, q)?;
    let rot = rotation_zyx(x_m[4], x_m[5], x_m[6]);
    let mut jac = SMatrix::<f64, 6, 7>::zeros();
    for n in 0..4 {
        let df = Vector3::new(0.0, 0.0, 2.0 * q.p_f * r[n]);
        let dt = Vector3::new(
            2.0 * q.l_x * q.p_f * SIGN_X[n] * r[n],
            2.0 * q.l_y * q.p_f * SIGN_Y[n] * r[n],
            2.0 * q.t_z * SIGN_Z[n] * r[n],
        );
        jac.fixed_view_mut::<3, 1>(0, n).copy_from(&(rot * df));
        jac.fixed_view_mut::<3, 1>(3, n).copy_from(&(rot * dt));
    }
    for (k, d) in rotation_zyx_partials(x_m[4], x_m[5], x_m[6]).iter().enumerate() {
        jac.fixed_view_mut::<3, 1>(0, 4 + k).copy_from(&(d * f_b));
        jac.fixed_view_mut::<3, 1>(3, 4 + k).copy_from(&(d * tau_b));
    }
    Ok(ModelEval { f_w: rot * f_b, tau_w: rot * tau_b, jac })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn zero_rotors_zero_wrench() {
        let (f, t) = body_wrench(&[0.0; 4], &QuadParams::default()).unwrap();
        assert_eq!(f, Vector3::zeros());
        assert_eq!(t, Vector3::zeros());
    }

    #[test]
    fn equal_rotors_cancel_torque() {
        let (_, t) = body_wrench(&[4100.0; 4], &QuadParams::default()).unwrap();
        assert_eq!(t, Vector3::zeros());
    }

    #[test]
    fn hover_thrust_balances_weight() {
        let q = QuadParams::default();
        q.validate().unwrap();
        let (f, _) = body_wrench(&[q.hover_rpm; 4], &q).unwrap();
        assert!((f.z.abs() - q.mass * q.g).abs() < 1e-9);
        assert!(f.z < 0.0, "hover thrust points up, i.e. along -z");
    }

    #[test]
    fn negative_rpm_rejected() {
        assert!(body_wrench(&[1.0, -1.0, 0.0, 0.0], &QuadParams::default()).is_err());
    }

    #[test]
    fn swapping_rotor_pairs_flips_roll_and_yaw_torque() {
        let q = QuadParams::default();
        let r = [3000.0, 3300.0, 3700.0, 4100.0];
        let (_, a) = body_wrench(&r, &q).unwrap();
        let (_, b) = body_wrench(&[r[1], r[0], r[3], r[2]], &q).unwrap();
        assert_eq!(b.x, -a.x);
        assert_eq!(b.z, -a.z);
        assert_eq!(b.y.abs(), a.y.abs());
    }

    #[test]
    fn rotation_examples() {
        assert_eq!(rotation_zyx(0.0, 0.0, 0.0), Matrix3::identity());
        let m = rotation_zyx(FRAC_PI_2, 0.0, 0.0) * Vector3::x();
        assert!((m - Vector3::y()).amax() < 1e-15);
    }

    #[test]
    fn random_rotations_are_proper() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let r = rotation_zyx(rng.random_range(-PI..PI), rng.random_range(-PI..PI), rng.random_range(-PI..PI));
            assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn level_attitude_keeps_body_wrench() {
        let q = QuadParams::default();
        let r = [3100.0, 3500.0, 3600.0, 3900.0];
        let e = eval_model(&[r[0], r[1], r[2], r[3], 0.0, 0.0, 0.0], &q).unwrap();
        let (f, t) = body_wrench(&r, &q).unwrap();
        assert_eq!(e.f_w, f);
        assert_eq!(e.tau_w, t);
    }

    #[test]
    fn pitched_up_hover_thrust_points_along_world_x() {
        let q = QuadParams::default();
        let h = q.hover_rpm;
        let e = eval_model(&[h, h, h, h, 0.0, FRAC_PI_2, 0.0], &q).unwrap();
        let w = q.mass * q.g;
        assert!((e.f_w.x + w).abs() < 1e-9);
        assert!(e.f_w.y.abs() < 1e-12 && e.f_w.z.abs() < 1e-9);
    }

    fn fd_jacobian(x: &[f64; 7], q: &QuadParams) -> SMatrix<f64, 6, 7> {
        let mut jac = SMatrix::<f64, 6, 7>::zeros();
        for j in 0..7 {
            let h = if j < 4 { 1e-3 } else { 1e-6 };
            let (mut xp, mut xm) = (*x, *x);
            xp[j] += h;
            xm[j] -= h;
            let a = eval_model(&xp, q).unwrap().wrench();
            let b = eval_model(&xm, q).unwrap().wrench();
            for i in 0..6 {
                jac[(i, j)] = (a[i] - b[i]) / (2.0 * h);
            }
        }
        jac
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let q = QuadParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let mut x = [0.0; 7];
            for v in x.iter_mut().take(4) {
                *v = rng.random_range(100.0..7000.0);
            }
            for v in x.iter_mut().skip(4) {
                *v = rng.random_range(-FRAC_PI_2..FRAC_PI_2);
            }
            let an = eval_model(&x, &q).unwrap().jac;
            let fd = fd_jacobian(&x, &q);
            let scale = an.amax();
            assert!((an - fd).amax() / scale < 1e-5);
        }
    }

    proptest! {
        #[test]
        fn full_turn_leaves_wrench_unchanged(
            r in proptest::array::uniform4(0.0f64..7000.0),
            a in proptest::array::uniform3(-3.0f64..3.0),
            k in 0usize..3,
        ) {
            let q = QuadParams::default();
            let x = [r[0], r[1], r[2], r[3], a[0], a[1], a[2]];
            let mut y = x;
            y[4 + k] += 2.0 * PI;
            let e1 = eval_model(&x, &q).unwrap().wrench();
            let e2 = eval_model(&y, &q).unwrap().wrench();
            for i in 0..6 {
                prop_assert!((e1[i] - e2[i]).abs() <= 1e-9 * e1[i].abs().max(1.0));
            }
        }
    }
}

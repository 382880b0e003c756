//! Frozen synthetic aerodynamic and acoustic oracle, version `synthetic-aero-v1`.
//!
//! It stands in for a mid-fidelity rotor code. The state is
//! `x = (r1..r4, ψ, θ, φ, v)` in the airspeed-aligned frame, where the
//! vehicle moves along +x at speed `v`. With `s_n = r_n / hover_rpm`,
//! `R = R_z(ψ)R_y(θ)R_x(φ)` and body relative wind `w = −v·Rᵀe_x`:
//!
//! ```text
//! μ     = w_z / V_REF
//! γ     = 1 + K_MU·μ + K_V·(v/V_REF)²
//! F_b   = (C_H·Σs·w_x, C_H·Σs·w_y, γ·T)                   T = p_f·Σr²
//! τ_b   = γ·τ_M + C_M·Σs·(w_y, −w_x, 0) + A·(sin π(s1−s3), sin π(s2−s4), sin(π(s1+s2−s3−s4)/2))
//! F_w   = R·F_b + (−C_D·v², 0, 0)
//! τ_w   = R·τ_b
//! L_k   = L0 + 10·log10(1 + K_P·P·g_k)                    P = Σs³·(1 + K_PV·v)
//! g_k   = 1 + 0.2·sinθ·cosβ_k + 0.2·sinφ·sinβ_k + 0.1·sinψ·cosβ_k,   β = (0°, 45°, 90°)
//! ```
//!
//! `τ_M` is the simple-model body torque. The constants below are part of
//! the version and must not change without bumping [`ORACLE_VERSION`].

use nalgebra::{SMatrix, Vector3};

use crate::error::{GpError, Result};
use crate::quad_model::{body_wrench, rotation_zyx, rotation_zyx_partials, QuadParams, SIGN_X, SIGN_Y, SIGN_Z};

pub const ORACLE_VERSION: &str = "synthetic-aero-v1";

const V_REF: f64 = 10.0;
const K_MU: f64 = 0.08;
const K_V: f64 = 0.05;
const C_H: f64 = 0.05;
const C_M: f64 = 0.01;
const C_D: f64 = 0.02;
const A: f64 = 0.05;
const L0: f64 = 40.0;
const K_P: f64 = 10.0;
const K_PV: f64 = 0.02;
const MIC_DEG: [f64; 3] = [0.0, 45.0, 90.0];

/// Sound level with all rotors stopped.
pub const NOISE_FLOOR_DB: f64 = L0;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutput {
    pub y_aero: [f64; 6],
    pub y_noise: [f64; 3],
    /// Rows: six wrench components then three sound levels; columns: `(r1..r4, ψ, θ, φ)`.
    pub jac: SMatrix<f64, 9, 7>,
}

impl OracleOutput {
    pub fn outputs(&self) -> [f64; 9] {
        let mut y = [0.0; 9];
        y[..6].copy_from_slice(&self.y_aero);
        y[6..].copy_from_slice(&self.y_noise);
        y
    }
}

pub fn synthetic_oracle(x: &[f64; 8], q: &QuadParams) -> Result<OracleOutput> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(GpError::invalid("oracle state must be finite"));
    }
    if x[7] < 0.0 {
        return Err(GpError::invalid(format!("airspeed magnitude must be >= 0, got {}", x[7])));
    }
    let r = [x[0], x[1], x[2], x[3]];
    let (psi, theta, phi, v) = (x[4], x[5], x[6], x[7]);
    let (f_m, tau_m) = body_wrench(&r, q)?;
    let thrust = f_m.z;

    let rot = rotation_zyx(psi, theta, phi);
    let partials = rotation_zyx_partials(psi, theta, phi);
    let row0 = |m: &nalgebra::Matrix3<f64>| Vector3::new(m[(0, 0)], m[(0, 1)], m[(0, 2)]);
    let w = -v * row0(&rot);
    let dw: [Vector3<f64>; 3] = partials.map(|d| -v * row0(&d));

    let h = q.hover_rpm;
    let s = r.map(|v| v / h);
    let sum_s: f64 = s.iter().sum();
    let mu = w.z / V_REF;
    let gamma = 1.0 + K_MU * mu + K_V * (v / V_REF).powi(2);
    let dgamma: [f64; 3] = dw.map(|d| K_MU * d.z / V_REF);

    let a1 = std::f64::consts::PI * (s[0] - s[2]);
    let a2 = std::f64::consts::PI * (s[1] - s[3]);
    let a3 = std::f64::consts::FRAC_PI_2 * (s[0] + s[1] - s[2] - s[3]);
    let pert = Vector3::new(A * a1.sin(), A * a2.sin(), A * a3.sin());

    let f_b = Vector3::new(C_H * sum_s * w.x, C_H * sum_s * w.y, gamma * thrust);
    let tau_b = gamma * tau_m + C_M * sum_s * Vector3::new(w.y, -w.x, 0.0) + pert;
    let f_w = rot * f_b + Vector3::new(-C_D * v * v, 0.0, 0.0);
    let tau_w = rot * tau_b;

    let power = s.iter().map(|v| v.powi(3)).sum::<f64>() * (1.0 + K_PV * v);
    let mic = MIC_DEG.map(f64::to_radians);
    let gain = |b: f64| 1.0 + 0.2 * theta.sin() * b.cos() + 0.2 * phi.sin() * b.sin() + 0.1 * psi.sin() * b.cos();
    let g = mic.map(gain);
    let y_noise = g.map(|gk| L0 + 10.0 * (1.0 + K_P * power * gk).log10());

    let mut jac = SMatrix::<f64, 9, 7>::zeros();
    let sign3 = [1.0, 1.0, -1.0, -1.0];
    for n in 0..4 {
        let dthrust = 2.0 * q.p_f * r[n];
        let dtau_m = Vector3::new(
            2.0 * q.l_x * q.p_f * SIGN_X[n] * r[n],
            2.0 * q.l_y * q.p_f * SIGN_Y[n] * r[n],
            2.0 * q.t_z * SIGN_Z[n] * r[n],
        );
        let ds = 1.0 / h;
        let df_b = Vector3::new(C_H * ds * w.x, C_H * ds * w.y, gamma * dthrust);
        let d1 = if n == 0 {
            1.0
        } else if n == 2 {
            -1.0
        } else {
            0.0
        };
        let d2 = if n == 1 {
            1.0
        } else if n == 3 {
            -1.0
        } else {
            0.0
        };
        let dpert = Vector3::new(
            A * a1.cos() * std::f64::consts::PI * d1 * ds,
            A * a2.cos() * std::f64::consts::PI * d2 * ds,
            A * a3.cos() * std::f64::consts::FRAC_PI_2 * sign3[n] * ds,
        );
        let dtau_b = gamma * dtau_m + C_M * ds * Vector3::new(w.y, -w.x, 0.0) + dpert;
        jac.fixed_view_mut::<3, 1>(0, n).copy_from(&(rot * df_b));
        jac.fixed_view_mut::<3, 1>(3, n).copy_from(&(rot * dtau_b));
        let dpower = 3.0 * s[n] * s[n] * ds * (1.0 + K_PV * v);
        for k in 0..3 {
            jac[(6 + k, n)] = noise_slope(power, g[k]) * dpower * g[k];
        }
    }
    let dg = |k: usize, b: f64| match k {
        0 => 0.1 * psi.cos() * b.cos(),
        1 => 0.2 * theta.cos() * b.cos(),
        _ => 0.2 * phi.cos() * b.sin(),
    };
    for k in 0..3 {
        let df_b = Vector3::new(C_H * sum_s * dw[k].x, C_H * sum_s * dw[k].y, dgamma[k] * thrust);
        let dtau_b = dgamma[k] * tau_m + C_M * sum_s * Vector3::new(dw[k].y, -dw[k].x, 0.0);
        jac.fixed_view_mut::<3, 1>(0, 4 + k).copy_from(&(partials[k] * f_b + rot * df_b));
        jac.fixed_view_mut::<3, 1>(3, 4 + k).copy_from(&(partials[k] * tau_b + rot * dtau_b));
        for (m, b) in mic.iter().enumerate() {
            jac[(6 + m, 4 + k)] = noise_slope(power, g[m]) * power * dg(k, *b);
        }
    }

    Ok(OracleOutput { y_aero: [f_w.x, f_w.y, f_w.z, tau_w.x, tau_w.y, tau_w.z], y_noise, jac })
}

/// d L / d(P·g).
fn noise_slope(power: f64, g: f64) -> f64 {
    10.0 / std::f64::consts::LN_10 * K_P / (1.0 + K_P * power * g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad_model::eval_model;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(rng: &mut ChaCha8Rng) -> [f64; 8] {
        [
            rng.random_range(500.0..7000.0),
            rng.random_range(500.0..7000.0),
            rng.random_range(500.0..7000.0),
            rng.random_range(500.0..7000.0),
            rng.random_range(-1.5..1.5),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.5..1.5),
            rng.random_range(0.0..20.0),
        ]
    }

    #[test]
    fn hover_matches_simple_model() {
        let q = QuadParams::default();
        let x = [q.hover_rpm, q.hover_rpm, q.hover_rpm, q.hover_rpm, 0.0, 0.0, 0.0, 0.0];
        let out = synthetic_oracle(&x, &q).unwrap();
        let m = eval_model(&[x[0], x[1], x[2], x[3], 0.0, 0.0, 0.0], &q).unwrap().wrench();
        // At hover every perturbation term vanishes.
        for i in 0..6 {
            assert!((out.y_aero[i] - m[i]).abs() < 1e-12, "{i}: {} vs {}", out.y_aero[i], m[i]);
        }
        assert!((out.y_aero[2] + q.mass * q.g).abs() < 1e-9);
        // P = 4, g = 1 for every microphone.
        let expected = L0 + 10.0 * (1.0 + K_P * 4.0).log10();
        for l in out.y_noise {
            assert!((l - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn stopped_rotors_drag_only() {
        let q = QuadParams::default();
        let x = [0.0, 0.0, 0.0, 0.0, 0.3, -0.2, 0.4, 12.0];
        let out = synthetic_oracle(&x, &q).unwrap();
        assert!((out.y_aero[0] + C_D * 144.0).abs() < 1e-12);
        for v in &out.y_aero[1..] {
            assert!(v.abs() < 1e-12);
        }
        assert_eq!(out.y_noise, [NOISE_FLOOR_DB; 3]);
    }

    #[test]
    fn analytic_jacobian_matches_central_differences() {
        let q = QuadParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let x = random_state(&mut rng);
            let jac = synthetic_oracle(&x, &q).unwrap().jac;
            for j in 0..7 {
                let h = if j < 4 { 1e-3 } else { 1e-6 };
                let (mut xp, mut xm) = (x, x);
                xp[j] += h;
                xm[j] -= h;
                let yp = synthetic_oracle(&xp, &q).unwrap().outputs();
                let ym = synthetic_oracle(&xm, &q).unwrap().outputs();
                for o in 0..9 {
                    let fd = (yp[o] - ym[o]) / (2.0 * h);
                    let scale = jac.column(j).amax().max(1e-3);
                    let err = (fd - jac[(o, j)]).abs() / scale;
                    assert!(err < 1e-6, "out {o} dim {j}: fd {fd} analytic {}", jac[(o, j)]);
                }
            }
        }
    }

    #[test]
    fn rejects_non_finite_and_negative_speed() {
        let q = QuadParams::default();
        assert!(synthetic_oracle(&[f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], &q).is_err());
        assert!(synthetic_oracle(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.0], &q).is_err());
    }
}

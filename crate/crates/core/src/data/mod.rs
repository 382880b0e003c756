//! Training data: sampling, the synthetic oracle, finite-difference
//! gradients, residual learning targets and normalization.

mod dataset;
mod lhc;
mod normalize;
mod oracle;

pub use dataset::{read_dataset, write_dataset, DatasetHeader, SCHEMA_VERSION};
pub use lhc::{lhc_sample, SamplingBounds};
pub use normalize::{denormalize_prediction, normalize_dataset, NormStats, TrainingSet, GRAD_NOISE_SCALE};
pub use oracle::{synthetic_oracle, OracleOutput, NOISE_FLOOR_DB, ORACLE_VERSION};

use nalgebra::SMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GpError, Result};
use crate::quad_model::{eval_model, QuadParams};

/// Derivative dimensions of the 8-d state that carry gradient observations
/// (1-based, as in the kernel): the four rotors and three angles.
pub const GRAD_DIMS: [usize; 7] = [1, 2, 3, 4, 5, 6, 7];

/// One sampled case. Angles are radians; `x[7]` is the airspeed magnitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawCase {
    pub x: [f64; 8],
    pub y_aero: [f64; 6],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j_aero: Option<[[f64; 7]; 6]>,
    pub y_noise: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j_noise: Option<[[f64; 7]; 3]>,
}

impl RawCase {
    pub fn has_gradients(&self) -> bool {
        self.j_aero.is_some() && self.j_noise.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self
            .x
            .iter()
            .chain(&self.y_aero)
            .chain(&self.y_noise)
            .chain(self.j_aero.iter().flatten().flatten())
            .chain(self.j_noise.iter().flatten().flatten())
            .all(|v| v.is_finite());
        if !finite {
            return Err(GpError::invalid("case contains non-finite values"));
        }
        if self.j_aero.is_some() != self.j_noise.is_some() {
            return Err(GpError::invalid("case has only one of j_aero and j_noise"));
        }
        Ok(())
    }

    /// Stacked 9×7 Jacobian, if present.
    pub fn jacobian(&self) -> Option<SMatrix<f64, 9, 7>> {
        let (a, n) = (self.j_aero.as_ref()?, self.j_noise.as_ref()?);
        Some(SMatrix::from_fn(|i, j| if i < 6 { a[i][j] } else { n[i - 6][j] }))
    }
}

/// One-sided perturbation step of state column `j`: +10% of each rotor
/// speed with a 1 rpm floor, one degree for each angle.
pub fn fd_step(x: &[f64; 8], j: usize) -> f64 {
    if j < 4 {
        (0.1 * x[j]).max(1.0)
    } else {
        1f64.to_radians()
    }
}

/// One-sided finite-difference Jacobian of `f` over the first seven state columns.
pub fn finite_diff_gradients<F>(x: &[f64; 8], mut f: F) -> Result<SMatrix<f64, 9, 7>>
where
    F: FnMut(&[f64; 8]) -> Result<[f64; 9]>,
{
    let y0 = f(x)?;
    let mut jac = SMatrix::<f64, 9, 7>::zeros();
    for j in 0..7 {
        let h = fd_step(x, j);
        let mut xp = *x;
        xp[j] += h;
        let yp = f(&xp)?;
        for o in 0..9 {
            jac[(o, j)] = (yp[o] - y0[o]) / h;
        }
    }
    Ok(jac)
}

/// Evaluates the oracle at `x`, with finite-difference gradients when asked.
pub fn generate_case(x: &[f64; 8], q: &QuadParams, with_gradients: bool) -> Result<RawCase> {
    let out = synthetic_oracle(x, q)?;
    let (j_aero, j_noise) = if with_gradients {
        let jac = finite_diff_gradients(x, |xp| Ok(synthetic_oracle(xp, q)?.outputs()))?;
        (
            Some(std::array::from_fn(|i| std::array::from_fn(|j| jac[(i, j)]))),
            Some(std::array::from_fn(|i| std::array::from_fn(|j| jac[(6 + i, j)]))),
        )
    } else {
        (None, None)
    };
    Ok(RawCase { x: *x, y_aero: out.y_aero, j_aero, y_noise: out.y_noise, j_noise })
}

/// Learning target of one case: aero minus the simple model, noise unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualCase {
    pub x: [f64; 8],
    pub y: [f64; 9],
    pub j: Option<SMatrix<f64, 9, 7>>,
}

pub fn residualize(case: &RawCase, q: &QuadParams) -> Result<ResidualCase> {
    case.validate()?;
    let xm: [f64; 7] = std::array::from_fn(|i| case.x[i]);
    let m = eval_model(&xm, q)?;
    let w = m.wrench();
    let mut y = [0.0; 9];
    for i in 0..6 {
        y[i] = case.y_aero[i] - w[i];
    }
    y[6..].copy_from_slice(&case.y_noise);
    let j = case.jacobian().map(|mut j| {
        for r in 0..6 {
            for c in 0..7 {
                j[(r, c)] -= m.jac[(r, c)];
            }
        }
        j
    });
    Ok(ResidualCase { x: case.x, y, j })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model_case(x: [f64; 8], q: &QuadParams) -> RawCase {
        let xm: [f64; 7] = std::array::from_fn(|i| x[i]);
        let m = eval_model(&xm, q).unwrap();
        RawCase {
            x,
            y_aero: m.wrench(),
            j_aero: Some(std::array::from_fn(|i| std::array::from_fn(|j| m.jac[(i, j)]))),
            y_noise: [50.0, 51.0, 52.5],
            j_noise: Some([[0.25; 7]; 3]),
        }
    }

    #[test]
    fn affine_oracle_differences_are_exact() {
        let coef: [[f64; 8]; 9] =
            std::array::from_fn(|o| std::array::from_fn(|j| (o as f64 + 1.0) * 0.5 - j as f64 * 0.25));
        let f = |x: &[f64; 8]| -> Result<[f64; 9]> {
            Ok(std::array::from_fn(|o| 3.0 + coef[o].iter().zip(x).map(|(c, v)| c * v).sum::<f64>()))
        };
        let x = [1200.0, 0.0, 3300.0, 6900.0, 0.4, -0.7, 1.1, 8.0];
        let jac = finite_diff_gradients(&x, f).unwrap();
        for o in 0..9 {
            for j in 0..7 {
                assert!((jac[(o, j)] - coef[o][j]).abs() < 1e-9 * coef[o][j].abs().max(1.0));
            }
        }
    }

    #[test]
    fn steps_follow_the_perturbation_rule() {
        let x = [2000.0, 0.0, 5.0, 7000.0, 0.1, 0.2, 0.3, 4.0];
        assert_eq!(fd_step(&x, 0), 200.0);
        assert_eq!(fd_step(&x, 1), 1.0);
        assert_eq!(fd_step(&x, 2), 1.0);
        assert_eq!(fd_step(&x, 3), 700.0);
        assert_eq!(fd_step(&x, 5), std::f64::consts::PI / 180.0);
    }

    #[test]
    fn oracle_differences_track_the_closed_form() {
        let q = QuadParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x: [f64; 8] = [
                rng.random_range(1000.0..7000.0),
                rng.random_range(1000.0..7000.0),
                rng.random_range(1000.0..7000.0),
                rng.random_range(1000.0..7000.0),
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.5..1.5),
                rng.random_range(0.0..20.0),
            ];
            let exact = synthetic_oracle(&x, &q).unwrap().jac;
            let fd = generate_case(&x, &q, true).unwrap().jacobian().unwrap();
            // One-sided differences with 10% and one-degree steps are first-order accurate.
            let err = (fd - exact).norm() / exact.norm();
            assert!(err < 5e-2, "relative error {err}");
        }
    }

    #[test]
    fn stopped_rotor_uses_unit_step() {
        let q = QuadParams::default();
        let x = [0.0, 3500.0, 3500.0, 3500.0, 0.0, 0.1, 0.0, 5.0];
        let c = generate_case(&x, &q, true).unwrap();
        assert!(c.jacobian().unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn exact_model_leaves_zero_residual() {
        let q = QuadParams::default();
        let c = model_case([3000.0, 4000.0, 3500.0, 2500.0, 0.3, -0.2, 0.5, 7.0], &q);
        let r = residualize(&c, &q).unwrap();
        assert!(r.y[..6].iter().all(|v| *v == 0.0));
        let j = r.j.unwrap();
        assert!(j.rows(0, 6).iter().all(|v| *v == 0.0));
        assert_eq!(&r.y[6..], &c.y_noise);
        assert_eq!(j[(7, 3)], 0.25);
    }

    #[test]
    fn residual_plus_model_restores_case() {
        let q = QuadParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let states = lhc_sample(30, rng.random(), &SamplingBounds::default()).unwrap();
        for x in states {
            let c = generate_case(&x, &q, true).unwrap();
            let r = residualize(&c, &q).unwrap();
            let xm: [f64; 7] = std::array::from_fn(|i| x[i]);
            let m = eval_model(&xm, &q).unwrap();
            let w = m.wrench();
            for i in 0..6 {
                assert!((r.y[i] + w[i] - c.y_aero[i]).abs() <= 1e-12 * c.y_aero[i].abs().max(1.0));
            }
            for i in 0..3 {
                assert_eq!(r.y[6 + i].to_bits(), c.y_noise[i].to_bits());
            }
            let (jr, jc) = (r.j.unwrap(), c.jacobian().unwrap());
            for i in 0..6 {
                for k in 0..7 {
                    assert!((jr[(i, k)] + m.jac[(i, k)] - jc[(i, k)]).abs() <= 1e-12 * jc[(i, k)].abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn value_only_case_has_no_jacobian() {
        let q = QuadParams::default();
        let c = generate_case(&[3500.0, 3500.0, 3500.0, 3500.0, 0.0, 0.0, 0.0, 5.0], &q, false).unwrap();
        assert!(!c.has_gradients());
        assert!(residualize(&c, &q).unwrap().j.is_none());
    }
}

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::ResidualCase;
use crate::error::{GpError, Result};

/// Gradient-noise variance as a fraction of the normalized gradient variance.
pub const GRAD_NOISE_SCALE: f64 = 0.3;

const INPUT_NAMES: [&str; 8] = ["r1", "r2", "r3", "r4", "psi", "theta", "phi", "v"];
const OUTPUT_NAMES: [&str; 9] = ["f_x", "f_y", "f_z", "tau_x", "tau_y", "tau_z", "l_1", "l_2", "l_3"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub x_min: [f64; 8],
    pub x_max: [f64; 8],
    pub y_mean: [f64; 9],
    pub y_var: [f64; 9],
    pub half_range: [f64; 8],
}

impl NormStats {
    pub fn validate(&self) -> Result<()> {
        for j in 0..8 {
            if !(self.x_max[j] > self.x_min[j]) {
                return Err(GpError::invalid(format!("input column {} has zero range", INPUT_NAMES[j])));
            }
        }
        for o in 0..9 {
            if !(self.y_var[o] > 0.0) || !self.y_mean[o].is_finite() {
                return Err(GpError::invalid(format!("output {} has zero variance", OUTPUT_NAMES[o])));
            }
        }
        Ok(())
    }

    /// Maps `x` onto `[−1, 1]` per column (outside for out-of-range inputs).
    pub fn normalize_x(&self, x: &[f64; 8]) -> [f64; 8] {
        std::array::from_fn(|j| (x[j] - self.x_min[j]) / self.half_range[j] - 1.0)
    }

    pub fn normalize_y(&self, y: &[f64; 9]) -> [f64; 9] {
        std::array::from_fn(|o| (y[o] - self.y_mean[o]) / self.y_var[o].sqrt())
    }

    /// Factor turning a physical derivative `∂y_o/∂x_j` into a normalized one.
    pub fn gradient_scale(&self, o: usize, j: usize) -> f64 {
        self.half_range[j] / self.y_var[o].sqrt()
    }
}

/// Normalized inputs, outputs and gradients ready for the GP.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub x_tilde: DMatrix<f64>,
    pub y_tilde: DMatrix<f64>,
    /// `g_tilde[k]` holds `∂Ỹ/∂x̃_{k+1}`, one row per case; empty for value-only data.
    pub g_tilde: Vec<DMatrix<f64>>,
    pub stats: NormStats,
    /// Gradient-noise variances, one per gradient dimension; empty for value-only data.
    pub lambda2: Vec<f64>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.x_tilde.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn has_gradients(&self) -> bool {
        !self.g_tilde.is_empty()
    }
}

fn population_mean_var<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

pub fn normalize_dataset(cases: &[ResidualCase]) -> Result<TrainingSet> {
    let n = cases.len();
    if n < 2 {
        return Err(GpError::invalid(format!("normalization needs at least 2 cases, got {n}")));
    }
    let with_grads = cases[0].j.is_some();
    if cases.iter().any(|c| c.j.is_some() != with_grads) {
        return Err(GpError::invalid("cases mix gradient and value-only records"));
    }
    if cases.iter().any(|c| c.x.iter().chain(&c.y).any(|v| !v.is_finite())) {
        return Err(GpError::invalid("cases contain non-finite values"));
    }

    let mut x_min = [f64::INFINITY; 8];
    let mut x_max = [f64::NEG_INFINITY; 8];
    for c in cases {
        for j in 0..8 {
            x_min[j] = x_min[j].min(c.x[j]);
            x_max[j] = x_max[j].max(c.x[j]);
        }
    }
    let mut y_mean = [0.0; 9];
    let mut y_var = [0.0; 9];
    for o in 0..9 {
        let col: Vec<f64> = cases.iter().map(|c| c.y[o]).collect();
        (y_mean[o], y_var[o]) = population_mean_var(col.iter());
    }
    let half_range = std::array::from_fn(|j| (x_max[j] - x_min[j]) / 2.0);
    let stats = NormStats { x_min, x_max, y_mean, y_var, half_range };
    stats.validate()?;

    let x_tilde = DMatrix::from_fn(n, 8, |i, j| stats.normalize_x(&cases[i].x)[j]);
    let y_tilde = DMatrix::from_fn(n, 9, |i, o| (cases[i].y[o] - y_mean[o]) / y_var[o].sqrt());
    let (g_tilde, lambda2) = if with_grads {
        let g: Vec<DMatrix<f64>> = (0..7)
            .map(|j| {
                DMatrix::from_fn(n, 9, |i, o| {
                    let jac = cases[i].j.as_ref().expect("checked above");
                    jac[(o, j)] * stats.gradient_scale(o, j)
                })
            })
            .collect();
        let l = g.iter().map(|m| GRAD_NOISE_SCALE * population_mean_var(m.iter()).1).collect();
        (g, l)
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(TrainingSet { x_tilde, y_tilde, g_tilde, stats, lambda2 })
}

/// Maps a normalized mean and variance back to physical units.
pub fn denormalize_prediction(mean_tilde: &[f64; 9], var_tilde: &[f64; 9], stats: &NormStats) -> ([f64; 9], [f64; 9]) {
    let mean = std::array::from_fn(|o| mean_tilde[o] * stats.y_var[o].sqrt() + stats.y_mean[o]);
    let var = std::array::from_fn(|o| var_tilde[o] * stats.y_var[o]);
    (mean, var)
}

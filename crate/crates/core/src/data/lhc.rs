//! Latin-hypercube sampling of the eight-dimensional case state.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GpError, Result};

/// Sampling ranges of the case state. Angles are in degrees here, as they
/// are in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingBounds {
    pub airspeed: [f64; 2],
    pub rpm: [f64; 2],
    pub yaw_deg: [f64; 2],
    pub pitch_deg: [f64; 2],
    pub roll_deg: [f64; 2],
}

impl Default for SamplingBounds {
    fn default() -> Self {
        Self {
            airspeed: [0.0, 20.0],
            rpm: [0.0, 7000.0],
            yaw_deg: [-90.0, 90.0],
            pitch_deg: [-60.0, 60.0],
            roll_deg: [-90.0, 90.0],
        }
    }
}

impl SamplingBounds {
    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in self.named() {
            if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
                return Err(GpError::invalid(format!("bounds.{name}: min {lo} must be below max {hi}")));
            }
        }
        if self.rpm[0] < 0.0 || self.airspeed[0] < 0.0 {
            return Err(GpError::invalid("rpm and airspeed bounds must be non-negative"));
        }
        Ok(())
    }

    fn named(&self) -> [(&'static str, [f64; 2]); 5] {
        [
            ("airspeed", self.airspeed),
            ("rpm", self.rpm),
            ("yaw_deg", self.yaw_deg),
            ("pitch_deg", self.pitch_deg),
            ("roll_deg", self.roll_deg),
        ]
    }

    /// Per-column `[lo, hi]` of the state `(r1..r4, ψ, θ, φ, v)`, angles in radians.
    pub fn state_ranges(&self) -> [[f64; 2]; 8] {
        let rad = |r: [f64; 2]| [r[0].to_radians(), r[1].to_radians()];
        [
            self.rpm,
            self.rpm,
            self.rpm,
            self.rpm,
            rad(self.yaw_deg),
            rad(self.pitch_deg),
            rad(self.roll_deg),
            self.airspeed,
        ]
    }

    pub fn contains(&self, x: &[f64; 8]) -> bool {
        const TOL: f64 = 1e-9;
        self.state_ranges()
            .iter()
            .zip(x)
            .all(|([lo, hi], v)| *v >= lo - TOL * lo.abs().max(1.0) && *v <= hi + TOL * hi.abs().max(1.0))
    }
}

/// `n` states, one stratum per sample in every coordinate.
pub fn lhc_sample(n: usize, seed: u64, bounds: &SamplingBounds) -> Result<Vec<[f64; 8]>> {
    if n == 0 {
        return Err(GpError::invalid("sample count must be at least 1"));
    }
    bounds.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ranges = bounds.state_ranges();
    let mut out = vec![[0.0; 8]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for (c, [lo, hi]) in ranges.iter().enumerate() {
        strata.shuffle(&mut rng);
        for (row, &s) in out.iter_mut().zip(&strata) {
            let u: f64 = rng.random();
            row[c] = lo + (hi - lo) * (s as f64 + u) / n as f64;
        }
    }
    Ok(out)
}

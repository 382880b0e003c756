//! Run configuration, loaded from TOML. Every key has a default and unknown
//! keys are rejected.

use std::path::{Path, PathBuf};

use quadgp::data::{SamplingBounds, ORACLE_VERSION};
use quadgp::linalg::CgConfig;
use quadgp::model::{KernelSettings, TrainConfig};
use quadgp::partition::PartitionConfig;
use quadgp::quad_model::QuadParams;
use quadgp::runtime::AlignMode;
use quadgp::schur::{FarSolver, SchurMean};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub kernel: KernelSettings,
    pub partition: PartitionSection,
    pub dataset: DatasetSection,
    pub quad: QuadSection,
    pub solver: SolverSection,
    pub paths: PathsSection,
    pub bench: BenchSection,
    pub compare: CompareSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionSection {
    pub n_bins: usize,
    pub eps: f64,
    pub seed: u64,
    /// Intended near-set size, reported next to the achieved sizes.
    pub target_near_size: Option<usize>,
}

impl Default for PartitionSection {
    fn default() -> Self {
        Self { n_bins: 10, eps: 0.02, seed: 0, target_near_size: Some(1000) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub n_samples: usize,
    pub seed: u64,
    pub oracle_version: String,
    /// Size of the value-only set as a multiple of `n_samples`.
    pub value_only_factor: usize,
    pub n_test: usize,
    pub bounds: SamplingBounds,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            n_samples: 5000,
            seed: 0,
            oracle_version: ORACLE_VERSION.to_string(),
            value_only_factor: 8,
            n_test: 1000,
            bounds: SamplingBounds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadSection {
    pub mass: f64,
    pub g: f64,
    pub hover_rpm: f64,
    pub l_x: f64,
    pub l_y: f64,
    pub t_z_ratio: f64,
}

impl Default for QuadSection {
    fn default() -> Self {
        Self { mass: 2.6, g: 9.81, hover_rpm: 3500.0, l_x: 0.2, l_y: 0.2, t_z_ratio: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub far: FarSolver,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    pub align: AlignMode,
    /// Targets used for the corrected weights.
    pub schur_mean: SchurMean,
    /// Peak memory allowed for one dense block computation.
    pub memory_budget_mb: u64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let cg = CgConfig::default();
        Self {
            far: FarSolver::Cholesky,
            cg_tol: cg.tol,
            cg_max_iter: cg.max_iter,
            align: AlignMode::Heading,
            schur_mean: SchurMean::Truncated,
            memory_budget_mb: 3072,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub dataset: PathBuf,
    pub value_only: PathBuf,
    pub test: PathBuf,
    pub artifact: PathBuf,
    pub report: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            dataset: "data/train.jsonl".into(),
            value_only: "data/train_value_only.jsonl".into(),
            test: "data/test.jsonl".into(),
            artifact: "model.ggps".into(),
            report: "compare.csv".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub n_queries: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self { n_queries: 1000, warmup: 20, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    pub bootstrap: usize,
    pub seed: u64,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self { bootstrap: 1000, seed: 0 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Runtime(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.dataset.bounds.validate()?;
        self.quad_params()?;
        self.partition_config().validate()?;
        quadgp::kernel::KernelParams::new(self.kernel.sigma, self.kernel.length_scale, self.kernel.jitter, vec![])?;
        if !(self.kernel.grad_noise_scale > 0.0) {
            return Err(CliError::Validation("kernel.grad_noise_scale must be positive".into()));
        }
        if self.dataset.oracle_version != ORACLE_VERSION {
            return Err(CliError::Validation(format!(
                "dataset.oracle_version: only {ORACLE_VERSION:?} is available, got {:?}",
                self.dataset.oracle_version
            )));
        }
        if self.dataset.n_samples == 0 {
            return Err(CliError::Validation("dataset.n_samples must be at least 1".into()));
        }
        if !(self.solver.cg_tol > 0.0) || self.solver.cg_max_iter == 0 {
            return Err(CliError::Validation("solver.cg_tol and solver.cg_max_iter must be positive".into()));
        }
        Ok(())
    }

    pub fn quad_params(&self) -> Result<QuadParams, CliError> {
        let q = &self.quad;
        Ok(QuadParams::calibrated(q.mass, q.g, q.hover_rpm, q.l_x, q.l_y, q.t_z_ratio)?)
    }

    pub fn partition_config(&self) -> PartitionConfig {
        PartitionConfig {
            n_bins: self.partition.n_bins,
            eps: self.partition.eps,
            target_near_size: self.partition.target_near_size,
            seed: self.partition.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            kernel: self.kernel.clone(),
            partition: self.partition_config(),
            use_gradients: true,
            far_solver: self.solver.far,
            cg: CgConfig { tol: self.solver.cg_tol, max_iter: self.solver.cg_max_iter },
            keep_local: false,
            use_schur: true,
            schur_mean: self.solver.schur_mean,
            align: self.solver.align,
            memory_budget: Some(self.memory_budget()),
        }
    }

    pub fn memory_budget(&self) -> u64 {
        self.solver.memory_budget_mb << 20
    }
}

/// Seed of an auxiliary dataset derived from the main one.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    seed.wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

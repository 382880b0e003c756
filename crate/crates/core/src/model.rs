//! Offline training: residualize, normalize, partition, precompute.

use serde::{Deserialize, Serialize};

use crate::data::{normalize_dataset, residualize, NormStats, RawCase, SamplingBounds, TrainingSet, GRAD_DIMS};
use crate::error::{GpError, Result};
use crate::kernel::{KernelParams, PointSet};
use crate::linalg::CgConfig;
use crate::partition::{build_bins, classify_all, Partition, PartitionConfig};
use crate::quad_model::QuadParams;
use crate::runtime::AlignMode;
use crate::schur::{precompute_bin, BinPrecomp, FarSolver, PrecompOptions, SchurMean, TrainingSystem};

/// Kernel hyperparameters in normalized space. Gradient-noise variances are
/// derived from the data as `grad_noise_scale · Var(∂Ỹ/∂x̃_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSettings {
    pub sigma: f64,
    pub length_scale: f64,
    pub jitter: f64,
    pub grad_noise_scale: f64,
}

impl Default for KernelSettings {
    fn default() -> Self {
        Self { sigma: 1.0, length_scale: 0.5, jitter: 1e-10, grad_noise_scale: crate::data::GRAD_NOISE_SCALE }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub kernel: KernelSettings,
    pub partition: PartitionConfig,
    /// Condition on gradient observations when the dataset has them.
    pub use_gradients: bool,
    pub far_solver: FarSolver,
    pub cg: CgConfig,
    /// Also keep the uncorrected local inverse of every bin.
    pub keep_local: bool,
    /// Answer queries from the corrected inverse.
    pub use_schur: bool,
    pub schur_mean: SchurMean,
    pub align: AlignMode,
    /// Refuse to precompute a bin whose dense blocks would exceed this many bytes.
    pub memory_budget: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            kernel: KernelSettings::default(),
            partition: PartitionConfig::default(),
            use_gradients: true,
            far_solver: FarSolver::Cholesky,
            cg: CgConfig::default(),
            keep_local: false,
            use_schur: true,
            schur_mean: SchurMean::default(),
            align: AlignMode::default(),
            memory_budget: None,
        }
    }
}

/// A trained partitioned model, everything the query path needs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub stats: NormStats,
    pub params: KernelParams,
    pub quad: QuadParams,
    pub bounds: SamplingBounds,
    pub partition: Partition,
    /// Normalized training inputs, for the out-of-box bin lookup.
    pub points: PointSet,
    pub bins: Vec<BinPrecomp>,
    pub use_schur: bool,
    pub align: AlignMode,
}

impl TrainedModel {
    pub fn has_gradients(&self) -> bool {
        !self.params.grad_noise.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.stats.validate()?;
        self.params.validate()?;
        self.quad.validate()?;
        if self.bins.len() != self.partition.n_bins() {
            return Err(GpError::Format(format!(
                "{} bin precomputations for {} regions",
                self.bins.len(),
                self.partition.n_bins()
            )));
        }
        if self.points.dim() != 8 || self.partition.assignment.len() != self.points.len() {
            return Err(GpError::Format("training points disagree with the partition".into()));
        }
        for (b, pre) in self.bins.iter().enumerate() {
            let sys = if self.use_schur { pre.schur.as_ref() } else { pre.local.as_ref() };
            let Some(sys) = sys else {
                return Err(GpError::Format(format!("bin {b} lacks the system used for queries")));
            };
            if pre.bin_id != b
                || sys.inv.dim() != pre.near_dim()
                || sys.w.nrows() != pre.near_dim()
                || sys.w.ncols() != 9
            {
                return Err(GpError::Format(format!("bin {b} has inconsistent dimensions")));
            }
        }
        Ok(())
    }
}

/// What training did, for logs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub n_cases: usize,
    pub gradients: bool,
    pub lambda2: Vec<f64>,
    pub bin_lines: Vec<String>,
}

/// Residualized and normalized training data plus the kernel it implies.
pub fn prepare(
    cases: &[RawCase],
    quad: &QuadParams,
    kernel: &KernelSettings,
    use_gradients: bool,
) -> Result<(TrainingSet, KernelParams)> {
    quad.validate()?;
    let residuals = cases.iter().map(|c| residualize(c, quad)).collect::<Result<Vec<_>>>()?;
    let mut ts = normalize_dataset(&residuals)?;
    if !use_gradients {
        ts.g_tilde.clear();
        ts.lambda2.clear();
    }
    let grad_noise = ts.lambda2.iter().map(|l| l / crate::data::GRAD_NOISE_SCALE * kernel.grad_noise_scale).collect();
    ts.lambda2 = grad_noise;
    let params = KernelParams::new(kernel.sigma, kernel.length_scale, kernel.jitter, ts.lambda2.clone())?;
    Ok((ts, params))
}

pub fn training_system(ts: &TrainingSet, params: &KernelParams) -> Result<TrainingSystem> {
    let dims: &[usize] = if ts.has_gradients() { &GRAD_DIMS } else { &[] };
    TrainingSystem::new(&ts.x_tilde, &ts.y_tilde, &ts.g_tilde, dims, params.clone())
}

pub fn train_model(
    cases: &[RawCase],
    quad: &QuadParams,
    bounds: &SamplingBounds,
    cfg: &TrainConfig,
) -> Result<(TrainedModel, TrainReport)> {
    cfg.partition.validate()?;
    if !cfg.use_schur && !cfg.keep_local {
        return Err(GpError::invalid("queries without the correction need keep_local"));
    }
    let (ts, params) = prepare(cases, quad, &cfg.kernel, cfg.use_gradients)?;
    let sys = training_system(&ts, &params)?;
    let partition = build_bins(&sys.points, &cfg.partition)?;
    let specs = classify_all(&partition, &sys.points, &params, cfg.partition.eps)?;
    if let Some(budget) = cfg.memory_budget {
        let per_point = 1 + sys.layout.grad_dims.len();
        for spec in &specs {
            let needed = precompute_bytes(spec.near.len() * per_point, spec.far.len() * per_point);
            check_budget(&format!("bin {}", spec.id), needed, budget)?;
        }
    }
    let opts = PrecompOptions {
        far_solver: cfg.far_solver,
        cg: cfg.cg,
        schur: cfg.use_schur,
        local: cfg.keep_local,
        mean: cfg.schur_mean,
    };
    let bins = specs
        .iter()
        .map(|spec| precompute_bin(spec, &sys, &opts).map_err(|e| GpError::Bin { bin: spec.id, source: Box::new(e) }))
        .collect::<Result<Vec<_>>>()?;
    let report = TrainReport {
        n_cases: cases.len(),
        gradients: ts.has_gradients(),
        lambda2: ts.lambda2.clone(),
        bin_lines: bins.iter().map(BinPrecomp::log_line).collect(),
    };
    let model = TrainedModel {
        stats: ts.stats,
        params,
        quad: quad.clone(),
        bounds: bounds.clone(),
        partition,
        points: sys.points,
        bins,
        use_schur: cfg.use_schur,
        align: cfg.align,
    };
    Ok((model, report))
}

/// Rough peak bytes of one bin's precomputation: the far block and its
/// factor, the coupling block and its solve, and three near-sized matrices.
pub fn precompute_bytes(near_rows: usize, far_rows: usize) -> u64 {
    let (n, f) = (near_rows as u64, far_rows as u64);
    8 * (2 * f * f + 2 * f * n + 3 * n * n)
}

/// Rough peak bytes of a dense fit over `rows` rows: the matrix and its factor.
pub fn dense_fit_bytes(rows: usize) -> u64 {
    16 * (rows as u64) * (rows as u64)
}

pub fn check_budget(what: &str, needed: u64, budget: u64) -> Result<()> {
    if needed > budget {
        return Err(GpError::ResourceLimit {
            what: what.to_string(),
            needed_mb: needed.div_ceil(1 << 20),
            budget_mb: budget >> 20,
        });
    }
    Ok(())
}

//! Variant matrix: dense and partitioned models, with and without gradient
//! observations and the far-set correction, scored on a held-out set.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::DMatrix;
use quadgp::data::{denormalize_prediction, NormStats, RawCase, SamplingBounds, GRAD_DIMS};
use quadgp::gp::{fit_shared, DenseGpModel};
use quadgp::model::{check_budget, dense_fit_bytes, prepare, train_model, TrainConfig, TrainedModel};
use quadgp::quad_model::{eval_model, QuadParams};
use quadgp::GpError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::commands::quantile_sorted;
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Dense, values only, on the enlarged value-only set when available.
    Gp,
    /// Dense with gradients.
    GpG,
    /// Partitioned, values only, same number of points as the gradient set.
    GpS1x,
    /// Partitioned, values only, enlarged value-only set.
    GpS8x,
    /// Partitioned with gradients and the far-set correction.
    GpGSSchur,
    /// Partitioned with gradients, local inverse only.
    GpGSNoneSchur,
}

impl Variant {
    pub const ALL: [Variant; 6] =
        [Variant::Gp, Variant::GpG, Variant::GpS1x, Variant::GpS8x, Variant::GpGSSchur, Variant::GpGSNoneSchur];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Gp => "GP",
            Variant::GpG => "GP-G",
            Variant::GpS1x => "GP-S-1X",
            Variant::GpS8x => "GP-S-8X",
            Variant::GpGSSchur => "GP-G-S-Schur",
            Variant::GpGSNoneSchur => "GP-G-S-NoneSchur",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name().eq_ignore_ascii_case(name))
    }
}

/// Held-out evaluation cases: aligned-frame states and true outputs.
#[derive(Debug, Clone)]
pub struct TestSet {
    pub x: Vec<[f64; 8]>,
    pub y: Vec<[f64; 9]>,
}

impl TestSet {
    pub fn from_cases(cases: &[RawCase]) -> Self {
        Self {
            x: cases.iter().map(|c| c.x).collect(),
            y: cases
                .iter()
                .map(|c| std::array::from_fn(|o| if o < 6 { c.y_aero[o] } else { c.y_noise[o - 6] }))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Scored {
    /// `abs_err[i][o]` for test case `i` and output `o`.
    pub abs_err: Vec<[f64; 9]>,
    pub train_s: f64,
    pub predict_ms: Vec<f64>,
}

impl Scored {
    pub fn median_err(&self, o: usize) -> f64 {
        let mut v: Vec<f64> = self.abs_err.iter().map(|e| e[o]).collect();
        v.sort_by(f64::total_cmp);
        quantile_sorted(&v, 0.5)
    }

    pub fn p95_err(&self, o: usize) -> f64 {
        let mut v: Vec<f64> = self.abs_err.iter().map(|e| e[o]).collect();
        v.sort_by(f64::total_cmp);
        quantile_sorted(&v, 0.95)
    }

    pub fn predict_ms_median(&self) -> f64 {
        let mut v = self.predict_ms.clone();
        v.sort_by(f64::total_cmp);
        quantile_sorted(&v, 0.5)
    }
}

#[derive(Debug, Clone)]
pub enum Outcome {
    Scored(Scored),
    Skipped(String),
}

#[derive(Debug, Clone)]
pub struct VariantResult {
    pub variant: Variant,
    pub outcome: Outcome,
}

impl VariantResult {
    pub fn scored(&self) -> Option<&Scored> {
        match &self.outcome {
            Outcome::Scored(s) => Some(s),
            Outcome::Skipped(_) => None,
        }
    }
}

/// Inputs of one comparison run.
pub struct CompareInputs<'a> {
    pub gradient_cases: &'a [RawCase],
    pub value_only_cases: Option<&'a [RawCase]>,
    pub test: &'a TestSet,
    pub quad: &'a QuadParams,
    pub bounds: &'a SamplingBounds,
    pub train: &'a TrainConfig,
    pub memory_budget: u64,
}

fn add_model(x: &[f64; 8], mean: &mut [f64; 9], quad: &QuadParams) -> Result<(), GpError> {
    let w = eval_model(&std::array::from_fn(|i| x[i]), quad)?.wrench();
    for o in 0..6 {
        mean[o] += w[o];
    }
    Ok(())
}

fn abs_err(pred: &[f64; 9], truth: &[f64; 9]) -> [f64; 9] {
    std::array::from_fn(|o| (pred[o] - truth[o]).abs())
}

fn score_dense(
    model: &DenseGpModel,
    stats: &NormStats,
    inputs: &CompareInputs,
    train_s: f64,
) -> Result<Scored, GpError> {
    let grads = !model.layout().grad_dims.is_empty();
    let mut errs = Vec::with_capacity(inputs.test.len());
    let mut ms = Vec::with_capacity(inputs.test.len());
    for (x, y) in inputs.test.x.iter().zip(&inputs.test.y) {
        let start = Instant::now();
        let xt = DMatrix::from_row_slice(1, 8, &stats.normalize_x(x));
        let p = if grads { model.predict_with_gradients(&xt)? } else { model.predict_standard(&xt)? };
        let mt: [f64; 9] = std::array::from_fn(|o| p.mean[(0, o)]);
        let (mut mean, _) = denormalize_prediction(&mt, &[p.var[0]; 9], stats);
        add_model(x, &mut mean, inputs.quad)?;
        ms.push(start.elapsed().as_secs_f64() * 1e3);
        errs.push(abs_err(&mean, y));
    }
    Ok(Scored { abs_err: errs, train_s, predict_ms: ms })
}

fn score_partitioned(model: &TrainedModel, inputs: &CompareInputs, train_s: f64) -> Result<Scored, GpError> {
    let mut scratch = Vec::new();
    let mut errs = Vec::with_capacity(inputs.test.len());
    let mut ms = Vec::with_capacity(inputs.test.len());
    for (x, y) in inputs.test.x.iter().zip(&inputs.test.y) {
        let start = Instant::now();
        let (mean, _) = model.predict_state_total(x, &mut scratch)?;
        ms.push(start.elapsed().as_secs_f64() * 1e3);
        errs.push(abs_err(&mean, y));
    }
    Ok(Scored { abs_err: errs, train_s, predict_ms: ms })
}

fn run_dense(cases: &[RawCase], grads: bool, inputs: &CompareInputs) -> Result<Scored, GpError> {
    let start = Instant::now();
    let (ts, params) = prepare(cases, inputs.quad, &inputs.train.kernel, grads)?;
    let rows = ts.len() * if ts.has_gradients() { 1 + GRAD_DIMS.len() } else { 1 };
    check_budget("dense covariance", dense_fit_bytes(rows), inputs.memory_budget)?;
    let dims: &[usize] = if ts.has_gradients() { &GRAD_DIMS } else { &[] };
    let model = fit_shared(&ts.x_tilde, &ts.y_tilde, &ts.g_tilde, dims, &params)?;
    let train_s = start.elapsed().as_secs_f64();
    score_dense(&model, &ts.stats, inputs, train_s)
}

fn partitioned_config(inputs: &CompareInputs, grads: bool, keep_local: bool) -> TrainConfig {
    TrainConfig {
        use_gradients: grads,
        keep_local,
        use_schur: true,
        memory_budget: Some(inputs.memory_budget),
        ..inputs.train.clone()
    }
}

fn skipped_or<T>(r: Result<T, GpError>, f: impl FnOnce(T) -> Outcome) -> Result<Outcome, CliError> {
    match r {
        Ok(v) => Ok(f(v)),
        Err(e @ GpError::ResourceLimit { .. }) => Ok(Outcome::Skipped(e.to_string())),
        Err(e) if e.is_numerical() => Ok(Outcome::Skipped(e.to_string())),
        Err(e) => Err(e.into()),
    }
}

/// Trains and scores the requested variants. Variants that do not fit the
/// memory budget or lack data are skipped, never fatal.
pub fn run_variants(inputs: &CompareInputs, which: &[Variant]) -> Result<Vec<VariantResult>, CliError> {
    if inputs.test.is_empty() {
        return Err(CliError::Validation("test set is empty".into()));
    }
    let mut out = Vec::new();
    let wants = |v: Variant| which.contains(&v);
    let values_8x = inputs.value_only_cases;

    if wants(Variant::Gp) {
        let cases = values_8x.unwrap_or(inputs.gradient_cases);
        let r = run_dense(cases, false, inputs);
        out.push(VariantResult { variant: Variant::Gp, outcome: skipped_or(r, Outcome::Scored)? });
    }
    if wants(Variant::GpG) {
        let outcome = if inputs.gradient_cases.first().is_some_and(RawCase::has_gradients) {
            skipped_or(run_dense(inputs.gradient_cases, true, inputs), Outcome::Scored)?
        } else {
            Outcome::Skipped("dataset has no gradients".into())
        };
        out.push(VariantResult { variant: Variant::GpG, outcome });
    }
    let partitioned = |cases: &[RawCase], grads: bool| -> Result<Outcome, CliError> {
        let start = Instant::now();
        let r = train_model(cases, inputs.quad, inputs.bounds, &partitioned_config(inputs, grads, false))
            .and_then(|(m, _)| score_partitioned(&m, inputs, start.elapsed().as_secs_f64()));
        skipped_or(r, Outcome::Scored)
    };
    if wants(Variant::GpS1x) {
        out.push(VariantResult { variant: Variant::GpS1x, outcome: partitioned(inputs.gradient_cases, false)? });
    }
    if wants(Variant::GpS8x) {
        let outcome = match values_8x {
            Some(c) => partitioned(c, false)?,
            None => Outcome::Skipped("no value-only dataset".into()),
        };
        out.push(VariantResult { variant: Variant::GpS8x, outcome });
    }
    if wants(Variant::GpGSSchur) || wants(Variant::GpGSNoneSchur) {
        let start = Instant::now();
        let trained =
            train_model(inputs.gradient_cases, inputs.quad, inputs.bounds, &partitioned_config(inputs, true, true));
        let train_s = start.elapsed().as_secs_f64();
        match trained {
            Ok((mut model, _)) => {
                for (v, schur) in [(Variant::GpGSSchur, true), (Variant::GpGSNoneSchur, false)] {
                    if wants(v) {
                        model.use_schur = schur;
                        let outcome = skipped_or(score_partitioned(&model, inputs, train_s), Outcome::Scored)?;
                        out.push(VariantResult { variant: v, outcome });
                    }
                }
            }
            Err(e) => {
                let outcome = skipped_or::<()>(Err(e), |_| unreachable!())?;
                for v in [Variant::GpGSSchur, Variant::GpGSNoneSchur] {
                    if wants(v) {
                        out.push(VariantResult { variant: v, outcome: outcome.clone() });
                    }
                }
            }
        }
    }
    Ok(out)
}

pub const OUTPUT_NAMES: [&str; 9] = ["f_x", "f_y", "f_z", "tau_x", "tau_y", "tau_z", "l_1", "l_2", "l_3"];

/// CSV with one row per variant and output.
pub fn report_csv(results: &[VariantResult]) -> String {
    let mut s = String::from("variant,output_dim,median_abs_err,p95_abs_err,train_s,predict_ms_median\n");
    for r in results {
        match &r.outcome {
            Outcome::Scored(sc) => {
                for (o, name) in OUTPUT_NAMES.iter().enumerate() {
                    let _ = writeln!(
                        s,
                        "{},{},{:.6e},{:.6e},{:.3},{:.4}",
                        r.variant.name(),
                        name,
                        sc.median_err(o),
                        sc.p95_err(o),
                        sc.train_s,
                        sc.predict_ms_median()
                    );
                }
            }
            Outcome::Skipped(_) => {
                let _ = writeln!(s, "{},all,skipped,skipped,,", r.variant.name());
            }
        }
    }
    s
}

/// Paired bootstrap of `median(a) − median(b)` per output. Returns the
/// 2.5% and 97.5% quantiles of the resampled differences.
pub fn bootstrap_median_diff(a: &Scored, b: &Scored, resamples: usize, seed: u64) -> [(f64, f64); 9] {
    let n = a.abs_err.len();
    assert_eq!(n, b.abs_err.len(), "paired bootstrap needs equal test sets");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut diffs: Vec<Vec<f64>> = (0..9).map(|_| Vec::with_capacity(resamples)).collect();
    let mut idx = vec![0usize; n];
    let mut col_a = vec![0.0; n];
    let mut col_b = vec![0.0; n];
    for _ in 0..resamples {
        for i in idx.iter_mut() {
            *i = rng.random_range(0..n);
        }
        for (o, d) in diffs.iter_mut().enumerate() {
            for (k, &i) in idx.iter().enumerate() {
                col_a[k] = a.abs_err[i][o];
                col_b[k] = b.abs_err[i][o];
            }
            col_a.sort_by(f64::total_cmp);
            col_b.sort_by(f64::total_cmp);
            d.push(quantile_sorted(&col_a, 0.5) - quantile_sorted(&col_b, 0.5));
        }
    }
    std::array::from_fn(|o| {
        let d = &mut diffs[o];
        d.sort_by(f64::total_cmp);
        (quantile_sorted(d, 0.025), quantile_sorted(d, 0.975))
    })
}

/// Largest normalized mean difference between the dense gradient model and
/// a single-bin partitioned model with an empty far set, over the test set.
pub fn equivalence_gap(inputs: &CompareInputs) -> Result<Option<f64>, CliError> {
    let cases = inputs.gradient_cases;
    let (ts, params) = prepare(cases, inputs.quad, &inputs.train.kernel, true)?;
    if !ts.has_gradients() {
        return Ok(None);
    }
    if check_budget("dense", dense_fit_bytes(ts.len() * 8), inputs.memory_budget).is_err() {
        return Ok(None);
    }
    let dense = fit_shared(&ts.x_tilde, &ts.y_tilde, &ts.g_tilde, &GRAD_DIMS, &params)?;
    let mut cfg = partitioned_config(inputs, true, false);
    cfg.partition.n_bins = 1;
    cfg.partition.eps = f64::MIN_POSITIVE;
    let (model, _) = train_model(cases, inputs.quad, inputs.bounds, &cfg)?;
    if model.bins[0].stats.far_rows != 0 {
        return Ok(None);
    }
    let mut scratch = Vec::new();
    let mut gap = 0.0f64;
    for x in &inputs.test.x {
        let xt = ts.stats.normalize_x(x);
        let d = dense.predict_with_gradients(&DMatrix::from_row_slice(1, 8, &xt))?;
        let p = model.predict_state(x, &mut scratch)?;
        for o in 0..9 {
            let pm = (p.residual_mean[o] - ts.stats.y_mean[o]) / ts.stats.y_var[o].sqrt();
            gap = gap.max((pm - d.mean[(0, o)]).abs());
        }
    }
    Ok(Some(gap))
}

/// Console table; prediction time is also given relative to dense GP-G.
pub fn print_summary(results: &[VariantResult]) {
    let reference = results
        .iter()
        .find(|r| r.variant == Variant::GpG)
        .and_then(VariantResult::scored)
        .map(Scored::predict_ms_median);
    for r in results {
        match &r.outcome {
            Outcome::Scored(s) => {
                let med: Vec<String> = (0..9).map(|o| format!("{:.3e}", s.median_err(o))).collect();
                let relative = match reference {
                    Some(t) if t > 0.0 => format!("{:>6.1}%", 100.0 * s.predict_ms_median() / t),
                    _ => "      -".to_string(),
                };
                println!(
                    "{:<18} train {:>9.2} s  predict {:>9.3} ms {relative}  median |err| [{}]",
                    r.variant.name(),
                    s.train_s,
                    s.predict_ms_median(),
                    med.join(", ")
                );
            }
            Outcome::Skipped(why) => println!("{:<18} skipped: {why}", r.variant.name()),
        }
    }
}

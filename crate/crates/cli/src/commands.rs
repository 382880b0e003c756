//! generate, train, predict and bench.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use quadgp::artifact;
use quadgp::data::{generate_case, lhc_sample, read_dataset, write_dataset, DatasetHeader, RawCase};
use quadgp::model::{train_model, TrainReport, TrainedModel};
use quadgp::quad_model::QuadParams;
use quadgp::runtime::{Prediction, WorldQuery};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, RunConfig};
use crate::error::CliError;

/// Which dataset `generate` writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    /// `n_samples` cases with finite-difference gradients.
    Gradient,
    /// `value_only_factor · n_samples` cases without gradients.
    ValueOnly,
    /// `n_test` value-only cases for evaluation.
    Test,
}

impl DatasetKind {
    pub fn size_and_seed(self, cfg: &RunConfig) -> (usize, u64) {
        let d = &cfg.dataset;
        match self {
            DatasetKind::Gradient => (d.n_samples, d.seed),
            DatasetKind::ValueOnly => (d.n_samples * d.value_only_factor, derive_seed(d.seed, 1)),
            DatasetKind::Test => (d.n_test, derive_seed(d.seed, 2)),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DatasetKind::Gradient => "gradient",
            DatasetKind::ValueOnly => "value-only",
            DatasetKind::Test => "test",
        }
    }
}

pub fn generate_dataset(cfg: &RunConfig, kind: DatasetKind) -> Result<(DatasetHeader, Vec<RawCase>), CliError> {
    let (n, seed) = kind.size_and_seed(cfg);
    if n == 0 {
        return Err(CliError::Validation(format!("{kind:?} dataset would be empty")));
    }
    let q = cfg.quad_params()?;
    let bounds = &cfg.dataset.bounds;
    let states = lhc_sample(n, seed, bounds)?;
    let grads = kind == DatasetKind::Gradient;
    let cases = states.par_iter().map(|x| generate_case(x, &q, grads)).collect::<Result<Vec<_>, _>>()?;
    let header = DatasetHeader::new(seed, bounds.clone(), &cfg.dataset.oracle_version, n, grads);
    Ok((header, cases))
}

pub fn cmd_generate(cfg: &RunConfig, kind: DatasetKind, out: &Path) -> Result<(), CliError> {
    let start = Instant::now();
    let (header, cases) = generate_dataset(cfg, kind)?;
    let file = create(out)?;
    write_dataset(BufWriter::new(file), &header, &cases)?;
    let b = &header.bounds;
    println!(
        "generated {} {} cases (seed {}) in {:.2} s -> {}",
        cases.len(),
        kind.label(),
        header.seed,
        start.elapsed().as_secs_f64(),
        out.display()
    );
    println!(
        "bounds: airspeed {:?} m/s, rpm {:?}, yaw {:?} deg, pitch {:?} deg, roll {:?} deg",
        b.airspeed, b.rpm, b.yaw_deg, b.pitch_deg, b.roll_deg
    );
    Ok(())
}

fn create(path: &Path) -> Result<File, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    File::create(path).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::Runtime(format!("cannot open {}: {e}", path.display())))
}

pub fn load_dataset(path: &Path) -> Result<(DatasetHeader, Vec<RawCase>), CliError> {
    read_dataset(BufReader::new(open(path)?)).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn load_model(path: &Path) -> Result<TrainedModel, CliError> {
    artifact::load(BufReader::new(open(path)?)).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn train(
    cfg: &RunConfig,
    cases: &[RawCase],
    header: &DatasetHeader,
) -> Result<(TrainedModel, TrainReport), CliError> {
    if header.oracle_version != cfg.dataset.oracle_version {
        return Err(CliError::Validation(format!(
            "dataset oracle {:?} differs from configured {:?}",
            header.oracle_version, cfg.dataset.oracle_version
        )));
    }
    let q: QuadParams = cfg.quad_params()?;
    Ok(train_model(cases, &q, &header.bounds, &cfg.train_config())?)
}

pub fn cmd_train(cfg: &RunConfig, dataset: &Path, out: &Path) -> Result<(), CliError> {
    let start = Instant::now();
    let (header, cases) = load_dataset(dataset)?;
    let (model, report) = train(cfg, &cases, &header)?;
    let bytes = artifact::encode(&model)?;
    let mut f = create(out)?;
    f.write_all(&bytes)?;
    println!(
        "trained on {} cases ({}), {} bins, in {:.2} s",
        report.n_cases,
        if report.gradients { "values and gradients" } else { "values only" },
        model.bins.len(),
        start.elapsed().as_secs_f64()
    );
    for line in &report.bin_lines {
        println!("  {line}");
    }
    println!("artifact: {} bytes -> {}", bytes.len(), out.display());
    Ok(())
}

/// One line of a query file. Angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRecord {
    pub r: [f64; 4],
    pub psi: f64,
    pub theta: f64,
    pub phi: f64,
    pub v: [f64; 3],
}

impl QueryRecord {
    pub fn to_world(&self) -> WorldQuery {
        WorldQuery {
            r: self.r,
            psi: self.psi.to_radians(),
            theta: self.theta.to_radians(),
            phi: self.phi.to_radians(),
            v: self.v,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LatencySummary {
    pub count: usize,
    pub min_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl LatencySummary {
    pub fn from_ns(ns: &[u64]) -> Self {
        if ns.is_empty() {
            return Self::default();
        }
        let mut v: Vec<f64> = ns.iter().map(|n| *n as f64 / 1e6).collect();
        v.sort_by(f64::total_cmp);
        Self {
            count: v.len(),
            min_ms: v[0],
            median_ms: quantile_sorted(&v, 0.5),
            p95_ms: quantile_sorted(&v, 0.95),
            max_ms: v[v.len() - 1],
        }
    }
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictSummary {
    pub written: usize,
    pub skipped: usize,
    pub latency: LatencySummary,
}

pub fn run_predict<R: BufRead, W: Write>(
    model: &TrainedModel,
    input: R,
    mut out: W,
) -> Result<PredictSummary, CliError> {
    let mut scratch = Vec::new();
    let mut lat = Vec::new();
    let mut skipped = 0;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pred = serde_json::from_str::<QueryRecord>(&line)
            .map_err(|e| e.to_string())
            .and_then(|q| model.query_with(&q.to_world(), &mut scratch).map_err(|e| e.to_string()));
        match pred {
            Ok(p) => {
                lat.push(p.latency_ns);
                let s = serde_json::to_string(&p).map_err(|e| CliError::Runtime(e.to_string()))?;
                writeln!(out, "{s}")?;
            }
            Err(e) => {
                skipped += 1;
                eprintln!("warning: query line {}: {e}", i + 1);
            }
        }
    }
    out.flush()?;
    Ok(PredictSummary { written: lat.len(), skipped, latency: LatencySummary::from_ns(&lat) })
}

pub fn cmd_predict(artifact_path: &Path, queries: &Path, out: &Path) -> Result<(), CliError> {
    let model = load_model(artifact_path)?;
    let input = BufReader::new(open(queries)?);
    let writer = BufWriter::new(create(out)?);
    let s = run_predict(&model, input, writer)?;
    eprintln!(
        "{} predictions, {} skipped; latency median {:.3} ms, p95 {:.3} ms",
        s.written, s.skipped, s.latency.median_ms, s.latency.p95_ms
    );
    if s.written == 0 && s.skipped > 0 {
        return Err(CliError::Runtime(format!("all {} query lines failed", s.skipped)));
    }
    Ok(())
}

/// Random in-bounds world queries, level airspeed in a random heading.
pub fn random_queries(model: &TrainedModel, n: usize, seed: u64) -> Vec<WorldQuery> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ranges = model.bounds.state_ranges();
    let mut draw = |j: usize| {
        let [lo, hi] = ranges[j];
        lo + (hi - lo) * rng.random::<f64>()
    };
    (0..n)
        .map(|_| {
            let x: [f64; 8] = std::array::from_fn(&mut draw);
            let heading = draw(4) * 2.0;
            WorldQuery {
                r: [x[0], x[1], x[2], x[3]],
                psi: x[4] + heading,
                theta: x[5],
                phi: x[6],
                v: [x[7] * heading.cos(), x[7] * heading.sin(), 0.0],
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub latency: LatencySummary,
    pub artifact_bytes: usize,
    pub peak_rss_kb: Option<u64>,
    pub max_near_rows: usize,
}

/// Peak resident set size of this process, where the platform reports it.
pub fn peak_rss_kb() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

pub fn run_bench(
    model: &TrainedModel,
    n_queries: usize,
    warmup: usize,
    seed: u64,
) -> Result<Vec<Prediction>, CliError> {
    let queries = random_queries(model, n_queries + warmup, seed);
    let mut scratch = Vec::new();
    let mut out = Vec::with_capacity(n_queries);
    for (i, q) in queries.iter().enumerate() {
        let p = model.query_with(q, &mut scratch)?;
        if i >= warmup {
            out.push(p);
        }
    }
    Ok(out)
}

pub fn cmd_bench(artifact_path: &Path, n_queries: usize, warmup: usize, seed: u64) -> Result<BenchReport, CliError> {
    let bytes = std::fs::metadata(artifact_path).map(|m| m.len() as usize).unwrap_or(0);
    let model = load_model(artifact_path)?;
    let preds = run_bench(&model, n_queries, warmup, seed)?;
    let ns: Vec<u64> = preds.iter().map(|p| p.latency_ns).collect();
    let report = BenchReport {
        latency: LatencySummary::from_ns(&ns),
        artifact_bytes: bytes,
        peak_rss_kb: peak_rss_kb(),
        max_near_rows: model.bins.iter().map(|b| b.near_dim()).max().unwrap_or(0),
    };
    let l = &report.latency;
    println!("queries: {} (after {warmup} warm-up), seed {seed}", l.count);
    println!("latency ms: min {:.3} median {:.3} p95 {:.3} max {:.3}", l.min_ms, l.median_ms, l.p95_ms, l.max_ms);
    println!("largest near system: {} rows; artifact {} bytes", report.max_near_rows, report.artifact_bytes);
    match report.peak_rss_kb {
        Some(kb) => println!("peak resident memory: {:.1} MB", kb as f64 / 1024.0),
        None => println!("peak resident memory: unavailable"),
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 5.0);
        assert!((quantile_sorted(&v, 0.95) - 4.8).abs() < 1e-12);
        assert!(quantile_sorted(&[], 0.5).is_nan());
    }

    #[test]
    fn latency_summary_in_ms() {
        let s = LatencySummary::from_ns(&[3_000_000, 1_000_000, 2_000_000]);
        assert_eq!((s.count, s.min_ms, s.median_ms, s.max_ms), (3, 1.0, 2.0, 3.0));
    }

    #[test]
    fn query_record_converts_degrees() {
        let q = QueryRecord { r: [1.0; 4], psi: 180.0, theta: 90.0, phi: -45.0, v: [1.0, 2.0, 3.0] };
        let w = q.to_world();
        assert!((w.psi - std::f64::consts::PI).abs() < 1e-15);
        assert!((w.phi + std::f64::consts::FRAC_PI_4).abs() < 1e-15);
    }
}

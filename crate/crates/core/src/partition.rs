//! Input-space bins and near/far classification of the training points.
//!
//! Bins are the cells of a power diagram: point `x` belongs to the bin `b`
//! minimizing `‖x − c_b‖² − w_b`. Centres come from seeded k-means and the
//! weights are then adjusted until every bin holds between half and twice
//! as many points as any other. Queries outside the bounding box of the
//! training inputs fall back to the bin owning the nearest training point.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GpError, Result};
use crate::kernel::{KernelParams, PointSet, RowLayout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub n_bins: usize,
    /// Normalized correlation threshold separating near from far points.
    pub eps: f64,
    /// Intended near-set size; only reported, never enforced.
    pub target_near_size: Option<usize>,
    pub seed: u64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self { n_bins: 1, eps: 1e-3, target_near_size: None, seed: 0 }
    }
}

impl PartitionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_bins == 0 {
            return Err(GpError::invalid("n_bins must be at least 1"));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(GpError::invalid(format!("eps must lie in (0, 1), got {}", self.eps)));
        }
        Ok(())
    }
}

/// One power-diagram cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRegion {
    pub id: usize,
    pub center: Vec<f64>,
    pub weight: f64,
}

impl BinRegion {
    #[inline]
    fn score(&self, x: &[f64]) -> f64 {
        sq_dist(&self.center, x) - self.weight
    }
}

/// The bin regions plus what `locate_bin` needs for its fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub regions: Vec<BinRegion>,
    /// Bounding box of the training inputs.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Bin of every training point.
    pub assignment: Vec<usize>,
}

impl Partition {
    pub fn n_bins(&self) -> usize {
        self.regions.len()
    }

    /// Training points owned by bin `b`, ascending.
    pub fn anchors(&self, b: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == b).collect()
    }

    pub fn populations(&self) -> Vec<usize> {
        let mut counts = vec![0; self.regions.len()];
        for &b in &self.assignment {
            counts[b] += 1;
        }
        counts
    }

    pub fn in_box(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn power_cell(regions: &[BinRegion], x: &[f64]) -> usize {
    let mut best = 0;
    let mut best_score = f64::INFINITY;
    for (b, r) in regions.iter().enumerate() {
        let s = r.score(x);
        if s < best_score {
            best = b;
            best_score = s;
        }
    }
    best
}

/// Bin containing `x_q`; outside the training bounding box the bin of the
/// nearest training point. Ties go to the lowest bin id.
pub fn locate_bin(x_q: &[f64], partition: &Partition, points: &PointSet) -> usize {
    if partition.in_box(x_q) || points.is_empty() {
        return power_cell(&partition.regions, x_q);
    }
    let mut best = usize::MAX;
    let mut best_d = f64::INFINITY;
    for i in 0..points.len() {
        let d = sq_dist(points.point(i), x_q);
        let b = partition.assignment[i];
        if d < best_d || (d == best_d && b < best) {
            best = b;
            best_d = d;
        }
    }
    best
}

const LLOYD_ITERS: usize = 50;
const BALANCE_ITERS: usize = 2000;

/// Partitions `x` into `cfg.n_bins` balanced power-diagram cells.
pub fn build_bins(x: &PointSet, cfg: &PartitionConfig) -> Result<Partition> {
    cfg.validate()?;
    let n = x.len();
    let k = cfg.n_bins;
    if n < k {
        return Err(GpError::invalid(format!("{n} points cannot fill {k} bins")));
    }
    let d = x.dim();
    let mut lower = vec![f64::INFINITY; d];
    let mut upper = vec![f64::NEG_INFINITY; d];
    for i in 0..n {
        for (c, v) in x.point(i).iter().enumerate() {
            if !v.is_finite() {
                return Err(GpError::invalid(format!("non-finite coordinate at point {i}")));
            }
            lower[c] = lower[c].min(*v);
            upper[c] = upper[c].max(*v);
        }
    }

    let centers = kmeans(x, k, cfg.seed);
    let mut regions: Vec<BinRegion> =
        centers.into_iter().enumerate().map(|(id, center)| BinRegion { id, center, weight: 0.0 }).collect();
    let assignment = balance(x, &mut regions)?;
    Ok(Partition { regions, lower, upper, assignment })
}

fn kmeans(x: &PointSet, k: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = x.len();
    let d = x.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // k-means++ seeding
    let mut centers: Vec<Vec<f64>> = vec![x.point(rng.random_range(0..n)).to_vec()];
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(x.point(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, w) in nearest.iter().enumerate() {
                if t < *w {
                    chosen = i;
                    break;
                }
                t -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = x.point(pick).to_vec();
        for (i, v) in nearest.iter_mut().enumerate() {
            *v = v.min(sq_dist(x.point(i), &c));
        }
        centers.push(c);
    }

    let mut labels = vec![usize::MAX; n];
    for _ in 0..LLOYD_ITERS {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let p = x.point(i);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (b, c) in centers.iter().enumerate() {
                let dd = sq_dist(p, c);
                if dd < best_d {
                    best = b;
                    best_d = dd;
                }
            }
            if *label != best {
                *label = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, &b) in labels.iter().enumerate() {
            counts[b] += 1;
            for (s, v) in sums[b].iter_mut().zip(x.point(i)) {
                *s += v;
            }
        }
        for b in 0..k {
            if counts[b] > 0 {
                centers[b] = sums[b].iter().map(|s| s / counts[b] as f64).collect();
            }
        }
    }
    centers
}

fn assign(x: &PointSet, regions: &[BinRegion]) -> Vec<usize> {
    (0..x.len()).map(|i| power_cell(regions, x.point(i))).collect()
}

fn is_balanced(counts: &[usize]) -> bool {
    let max = *counts.iter().max().unwrap_or(&0);
    let min = *counts.iter().min().unwrap_or(&0);
    min > 0 && max <= 2 * min
}

/// Adjusts power weights one bin at a time: the fullest bin gives away its
/// most marginal points, or the emptiest bin claims the cheapest outsiders,
/// until the population ratio is at most two.
fn balance(x: &PointSet, regions: &mut [BinRegion]) -> Result<Vec<usize>> {
    let n = x.len();
    let k = regions.len();
    let target = n / k;
    let mut labels = assign(x, regions);
    for _ in 0..BALANCE_ITERS {
        let mut counts = vec![0usize; k];
        for &b in &labels {
            counts[b] += 1;
        }
        if is_balanced(&counts) {
            return Ok(labels);
        }
        let (small, &min) = counts.iter().enumerate().min_by_key(|(b, c)| (**c, *b)).unwrap();
        let (big, &max) = counts.iter().enumerate().max_by_key(|(b, c)| (**c, usize::MAX - *b)).unwrap();
        if max.saturating_sub(target) >= target.saturating_sub(min) {
            // gap between the point's own score and its best alternative
            let mut gaps: Vec<f64> = (0..n)
                .filter(|&i| labels[i] == big)
                .map(|i| {
                    let p = x.point(i);
                    let own = regions[big].score(p);
                    let alt = regions
                        .iter()
                        .enumerate()
                        .filter(|(b, _)| *b != big)
                        .map(|(_, r)| r.score(p))
                        .fold(f64::INFINITY, f64::min);
                    alt - own
                })
                .collect();
            gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let shed = (max - target).max(1).min(gaps.len() - 1);
            let step = gaps[shed - 1];
            regions[big].weight -= step + step.abs().max(1e-12) * 1e-9 + 1e-15;
        } else {
            let mut gaps: Vec<f64> = (0..n)
                .filter(|&i| labels[i] != small)
                .map(|i| {
                    let p = x.point(i);
                    regions[small].score(p) - regions[labels[i]].score(p)
                })
                .collect();
            gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let take = (target - min).max(1).min(gaps.len());
            let step = gaps[take - 1];
            regions[small].weight += step + step.abs().max(1e-12) * 1e-9 + 1e-15;
        }
        labels = assign(x, regions);
    }
    let mut counts = vec![0usize; k];
    for &b in &labels {
        counts[b] += 1;
    }
    if is_balanced(&counts) {
        Ok(labels)
    } else {
        Err(GpError::invalid(format!("could not balance {k} bins over {n} points (populations {counts:?})")))
    }
}

/// Point-level near/far split of one bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub id: usize,
    pub anchors: Vec<usize>,
    pub near: Vec<usize>,
    pub far: Vec<usize>,
}

impl BinSpec {
    /// Row indices of the near points in a layout where value and gradient
    /// observations share the same points.
    pub fn near_rows(&self, layout: &RowLayout) -> Vec<usize> {
        expand_rows(&self.near, layout)
    }

    pub fn far_rows(&self, layout: &RowLayout) -> Vec<usize> {
        expand_rows(&self.far, layout)
    }
}

/// Every row belonging to the listed points: their value rows first, then
/// one block per gradient dimension.
pub fn expand_rows(points: &[usize], layout: &RowLayout) -> Vec<usize> {
    debug_assert!(layout.grad_dims.is_empty() || layout.n_d == layout.n_g);
    let mut rows: Vec<usize> = points.iter().map(|&i| layout.value_row(i)).collect();
    if layout.n_g > 0 {
        for k in 0..layout.grad_dims.len() {
            rows.extend(points.iter().map(|&i| layout.grad_row(k, i)));
        }
    }
    rows
}

/// Splits `x_all` into points whose normalized correlation `k(x, a)/σ` to
/// some anchor is at least `eps` (near) and the rest (far).
pub fn classify_near_far(
    anchors: &PointSet,
    x_all: &PointSet,
    p: &KernelParams,
    eps: f64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    p.validate()?;
    if anchors.is_empty() {
        return Err(GpError::invalid("bin has no anchor points"));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(GpError::invalid(format!("eps must lie in (0, 1), got {eps}")));
    }
    if anchors.dim() != x_all.dim() {
        return Err(GpError::invalid("anchor and data dimensions differ"));
    }
    let mut near = Vec::new();
    let mut far = Vec::new();
    for i in 0..x_all.len() {
        if max_correlation(x_all.point(i), anchors, p) >= eps {
            near.push(i);
        } else {
            far.push(i);
        }
    }
    Ok((near, far))
}

/// `max_a k(x, a) / σ`.
pub fn max_correlation(x: &[f64], set: &PointSet, p: &KernelParams) -> f64 {
    let mut best = f64::INFINITY;
    for j in 0..set.len() {
        best = best.min(sq_dist(x, set.point(j)));
    }
    p.base(best) / p.sigma
}

/// Builds every bin's near/far split.
pub fn classify_all(partition: &Partition, x: &PointSet, p: &KernelParams, eps: f64) -> Result<Vec<BinSpec>> {
    (0..partition.n_bins())
        .map(|b| {
            let anchors = partition.anchors(b);
            let (near, far) = classify_near_far(&x.select(&anchors), x, p, eps)?;
            Ok(BinSpec { id: b, anchors, near, far })
        })
        .collect()
}

/// Sizes and measured slack of a classified partition.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionReport {
    pub eps: f64,
    pub target_near_size: Option<usize>,
    /// `(bin, anchors, near, far, max far correlation seen from anchors,
    /// max far correlation seen from sampled queries)`.
    pub bins: Vec<BinStats>,
    /// Largest excess of query-to-far correlation over `eps`, or 0.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinStats {
    pub id: usize,
    pub anchors: usize,
    pub near: usize,
    pub far: usize,
    pub anchor_far_corr: f64,
    pub query_far_corr: f64,
}

/// Measures the far-set bound from the anchors and from `samples_per_bin`
/// random queries inside each bin's region.
pub fn partition_report(
    partition: &Partition,
    specs: &[BinSpec],
    x: &PointSet,
    p: &KernelParams,
    eps: f64,
    target_near_size: Option<usize>,
    samples_per_bin: usize,
    seed: u64,
) -> PartitionReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = x.dim();
    let mut bins = Vec::with_capacity(specs.len());
    let mut delta: f64 = 0.0;
    for spec in specs {
        let far = x.select(&spec.far);
        let anchor_far_corr = if far.is_empty() {
            0.0
        } else {
            spec.anchors.iter().map(|&a| max_correlation(x.point(a), &far, p)).fold(0.0, f64::max)
        };
        let mut query_far_corr: f64 = 0.0;
        if !far.is_empty() {
            let mut found = 0;
            let mut tries = 0;
            while found < samples_per_bin && tries < samples_per_bin * 200 {
                tries += 1;
                // perturb a random anchor and keep the sample if it stays in the cell
                let a = x.point(spec.anchors[rng.random_range(0..spec.anchors.len())]);
                let q: Vec<f64> = (0..d)
                    .map(|c| {
                        let span = partition.upper[c] - partition.lower[c];
                        (a[c] + rng.random_range(-0.05..0.05) * span).clamp(partition.lower[c], partition.upper[c])
                    })
                    .collect();
                if power_cell(&partition.regions, &q) != spec.id {
                    continue;
                }
                found += 1;
                query_far_corr = query_far_corr.max(max_correlation(&q, &far, p));
            }
        }
        delta = delta.max(query_far_corr - eps);
        bins.push(BinStats {
            id: spec.id,
            anchors: spec.anchors.len(),
            near: spec.near.len(),
            far: spec.far.len(),
            anchor_far_corr,
            query_far_corr,
        });
    }
    PartitionReport { eps, target_near_size, bins, delta: delta.max(0.0) }
}

impl PartitionReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "eps {:.3e}  query slack delta {:.3e}", self.eps, self.delta);
        if let Some(t) = self.target_near_size {
            let _ = writeln!(s, "target near size {t}");
        }
        let _ = writeln!(s, "bin  anchors  near  far  anchor_far_corr  query_far_corr");
        for b in &self.bins {
            let _ = writeln!(
                s,
                "{:>3}  {:>7}  {:>4}  {:>3}  {:.3e}  {:.3e}",
                b.id, b.anchors, b.near, b.far, b.anchor_far_corr, b.query_far_corr
            );
        }
        s
    }
}

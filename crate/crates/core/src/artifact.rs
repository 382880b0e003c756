//! Binary model artifact.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "GGPS" u32:version
//! section*   = [u8;4]:tag u64:len payload[len]
//! ```
//!
//! Sections appear in a fixed order: `META` (JSON: stats, kernel, quad
//! parameters, bounds, query options), `PART` (regions, bounding box,
//! assignment), `PNTS` (normalized training inputs), then one `BIN_` per bin.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{NormStats, SamplingBounds};
use crate::error::{GpError, Result};
use crate::kernel::{KernelParams, PointSet};
use crate::model::TrainedModel;
use crate::partition::{BinRegion, Partition};
use crate::quad_model::QuadParams;
use crate::runtime::AlignMode;
use crate::schur::{BinPrecomp, LocalSystem, PackedSym, PrecompStats};

pub const MAGIC: &[u8; 4] = b"GGPS";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    stats: NormStats,
    params: KernelParams,
    quad: QuadParams,
    bounds: SamplingBounds,
    use_schur: bool,
    align: AlignMode,
}

#[derive(Default)]
struct Enc(Vec<u8>);

impl Enc {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.usize(v.len());
        for x in v {
            self.f64(*x);
        }
    }
    fn usizes(&mut self, v: &[usize]) {
        self.usize(v.len());
        for x in v {
            self.usize(*x);
        }
    }
    fn matrix(&mut self, m: &DMatrix<f64>) {
        self.usize(m.nrows());
        self.usize(m.ncols());
        for x in m.iter() {
            self.f64(*x);
        }
    }
    fn system(&mut self, s: &Option<LocalSystem>) {
        match s {
            None => self.0.push(0),
            Some(s) => {
                self.0.push(1);
                self.usize(s.inv.dim());
                self.f64s(s.inv.packed());
                self.matrix(&s.w);
            }
        }
    }
}

struct Dec<'a> {
    buf: &'a [u8],
    what: &'static str,
}

impl<'a> Dec<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(GpError::Format(format!("truncated {} section", self.what)));
        }
        let (a, b) = self.buf.split_at(n);
        self.buf = b;
        Ok(a)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| GpError::Format("length overflows usize".into()))
    }
    /// A length that must fit in the remaining bytes at `elem` bytes each.
    fn len(&mut self, elem: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.checked_mul(elem).is_none_or(|b| b > self.buf.len()) {
            return Err(GpError::Format(format!("implausible length {n} in {} section", self.what)));
        }
        Ok(n)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn usizes(&mut self) -> Result<Vec<usize>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.usize()).collect()
    }
    fn matrix(&mut self) -> Result<DMatrix<f64>> {
        let r = self.usize()?;
        let c = self.usize()?;
        let n = r.checked_mul(c).ok_or_else(|| GpError::Format("matrix size overflows".into()))?;
        if n.checked_mul(8).is_none_or(|b| b > self.buf.len()) {
            return Err(GpError::Format(format!("truncated matrix in {} section", self.what)));
        }
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_vec(r, c, data))
    }
    fn system(&mut self) -> Result<Option<LocalSystem>> {
        match self.u8()? {
            0 => Ok(None),
            1 => {
                let n = self.usize()?;
                let inv = PackedSym::from_packed(n, self.f64s()?).map_err(|e| GpError::Format(e.to_string()))?;
                let w = self.matrix()?;
                Ok(Some(LocalSystem { inv, w }))
            }
            t => Err(GpError::Format(format!("bad system tag {t}"))),
        }
    }
    fn finish(&self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(GpError::Format(format!("{} trailing bytes in {} section", self.buf.len(), self.what)))
        }
    }
}

fn section(out: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

/// Canonical byte encoding of a model.
pub fn encode(model: &TrainedModel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());

    let meta = Meta {
        stats: model.stats.clone(),
        params: model.params.clone(),
        quad: model.quad.clone(),
        bounds: model.bounds.clone(),
        use_schur: model.use_schur,
        align: model.align,
    };
    let json = serde_json::to_vec(&meta).map_err(|e| GpError::Format(e.to_string()))?;
    section(&mut out, b"META", &json);

    let p = &model.partition;
    let mut e = Enc::default();
    e.usize(p.regions.len());
    for r in &p.regions {
        e.usize(r.id);
        e.f64s(&r.center);
        e.f64(r.weight);
    }
    e.f64s(&p.lower);
    e.f64s(&p.upper);
    e.usizes(&p.assignment);
    section(&mut out, b"PART", &e.0);

    let mut e = Enc::default();
    e.usize(model.points.dim());
    e.f64s(model.points.as_slice());
    section(&mut out, b"PNTS", &e.0);

    for b in &model.bins {
        let mut e = Enc::default();
        e.usize(b.bin_id);
        e.usizes(&b.near_points);
        e.usize(b.near_x.dim());
        e.f64s(b.near_x.as_slice());
        e.usizes(&b.grad_dims);
        e.usize(b.stats.near_rows);
        e.usize(b.stats.far_rows);
        e.usize(b.stats.iterations);
        e.f64(b.stats.residual);
        e.system(&b.schur);
        e.system(&b.local);
        section(&mut out, b"BIN_", &e.0);
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<TrainedModel> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(GpError::Format("not a model artifact (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(GpError::Format(format!("unsupported artifact version {version} (expected {FORMAT_VERSION})")));
    }
    let mut rest = &bytes[8..];
    let mut next = |want: &'static [u8; 4]| -> Result<Option<&[u8]>> {
        if rest.is_empty() {
            return Ok(None);
        }
        if rest.len() < 12 {
            return Err(GpError::Format("truncated section header".into()));
        }
        let tag = &rest[..4];
        if tag != want {
            return Err(GpError::Format(format!(
                "expected section {}, found {}",
                String::from_utf8_lossy(want),
                String::from_utf8_lossy(tag)
            )));
        }
        let len = u64::from_le_bytes(rest[4..12].try_into().expect("8 bytes"));
        let len = usize::try_from(len).ok().filter(|l| *l <= rest.len() - 12);
        let len =
            len.ok_or_else(|| GpError::Format(format!("section {} overruns the file", String::from_utf8_lossy(want))))?;
        let payload = &rest[12..12 + len];
        rest = &rest[12 + len..];
        Ok(Some(payload))
    };
    let missing = |t: &str| GpError::Format(format!("missing section {t}"));

    let meta: Meta = serde_json::from_slice(next(b"META")?.ok_or_else(|| missing("META"))?)
        .map_err(|e| GpError::Format(format!("META: {e}")))?;

    let mut d = Dec { buf: next(b"PART")?.ok_or_else(|| missing("PART"))?, what: "PART" };
    let n_regions = d.len(8)?;
    let mut regions = Vec::with_capacity(n_regions);
    for _ in 0..n_regions {
        let id = d.usize()?;
        let center = d.f64s()?;
        let weight = d.f64()?;
        regions.push(BinRegion { id, center, weight });
    }
    let lower = d.f64s()?;
    let upper = d.f64s()?;
    let assignment = d.usizes()?;
    d.finish()?;
    if assignment.iter().any(|&b| b >= n_regions) {
        return Err(GpError::Format("assignment refers to a missing bin".into()));
    }
    let partition = Partition { regions, lower, upper, assignment };

    let mut d = Dec { buf: next(b"PNTS")?.ok_or_else(|| missing("PNTS"))?, what: "PNTS" };
    let dim = d.usize()?;
    let data = d.f64s()?;
    d.finish()?;
    if dim == 0 || data.len() % dim != 0 {
        return Err(GpError::Format("point data does not match its dimension".into()));
    }
    let points = PointSet::from_rows(data, dim);

    let mut bins = Vec::new();
    while let Some(payload) = next(b"BIN_")? {
        let mut d = Dec { buf: payload, what: "BIN_" };
        let bin_id = d.usize()?;
        let near_points = d.usizes()?;
        let dim = d.usize()?;
        let xs = d.f64s()?;
        if dim == 0 || xs.len() != near_points.len() * dim {
            return Err(GpError::Format(format!("bin {bin_id}: near coordinates do not match")));
        }
        let grad_dims = d.usizes()?;
        let stats =
            PrecompStats { near_rows: d.usize()?, far_rows: d.usize()?, iterations: d.usize()?, residual: d.f64()? };
        let schur = d.system()?;
        let local = d.system()?;
        d.finish()?;
        bins.push(BinPrecomp {
            bin_id,
            near_points,
            near_x: PointSet::from_rows(xs, dim),
            grad_dims,
            schur,
            local,
            stats,
        });
    }
    let model = TrainedModel {
        stats: meta.stats,
        params: meta.params,
        quad: meta.quad,
        bounds: meta.bounds,
        partition,
        points,
        bins,
        use_schur: meta.use_schur,
        align: meta.align,
    };
    model.validate()?;
    Ok(model)
}

pub fn save<W: Write>(model: &TrainedModel, mut out: W) -> Result<()> {
    out.write_all(&encode(model)?)?;
    out.flush()?;
    Ok(())
}

pub fn load<R: Read>(mut input: R) -> Result<TrainedModel> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    decode(&bytes)
}

//! JSON-lines dataset files: one header record, then one case per line.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{RawCase, SamplingBounds};
use crate::error::{GpError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub schema_version: u32,
    pub seed: u64,
    pub bounds: SamplingBounds,
    pub oracle_version: String,
    pub n_samples: usize,
    pub gradients: bool,
    pub angle_unit: String,
}

impl DatasetHeader {
    pub fn new(seed: u64, bounds: SamplingBounds, oracle_version: &str, n_samples: usize, gradients: bool) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed,
            bounds,
            oracle_version: oracle_version.to_string(),
            n_samples,
            gradients,
            angle_unit: "rad".to_string(),
        }
    }
}

pub fn write_dataset<W: Write>(mut out: W, header: &DatasetHeader, cases: &[RawCase]) -> Result<()> {
    let line = serde_json::to_string(header).map_err(|e| GpError::Format(e.to_string()))?;
    writeln!(out, "{line}")?;
    for c in cases {
        let line = serde_json::to_string(c).map_err(|e| GpError::Format(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<(DatasetHeader, Vec<RawCase>)> {
    let mut lines = input.lines().enumerate().filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()));
    let (_, first) = lines.next().ok_or_else(|| GpError::Format("dataset file is empty".into()))?;
    let header: DatasetHeader =
        serde_json::from_str(&first?).map_err(|e| GpError::Format(format!("dataset header: {e}")))?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(GpError::Format(format!(
            "unsupported dataset schema version {} (expected {SCHEMA_VERSION})",
            header.schema_version
        )));
    }
    if header.angle_unit != "rad" {
        return Err(GpError::Format(format!("unsupported angle unit {:?}", header.angle_unit)));
    }
    let mut cases = Vec::with_capacity(header.n_samples);
    for (i, line) in lines {
        let c: RawCase =
            serde_json::from_str(&line?).map_err(|e| GpError::Format(format!("dataset line {}: {e}", i + 1)))?;
        c.validate().map_err(|e| GpError::Format(format!("dataset line {}: {e}", i + 1)))?;
        if c.has_gradients() != header.gradients {
            return Err(GpError::Format(format!("dataset line {}: gradient fields disagree with header", i + 1)));
        }
        cases.push(c);
    }
    if cases.len() != header.n_samples {
        return Err(GpError::Format(format!("header announces {} cases, found {}", header.n_samples, cases.len())));
    }
    Ok((header, cases))
}

//! Run trace persistence: `trace.csv`, the `run.json` sidecar and base64
//! parameter checkpoints (IEEE-754 little-endian doubles).

use std::io::{Read, Write};

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamVector;

pub const TRACE_COLUMNS: [&str; 11] = [
    "t",
    "value_mean",
    "value_stderr",
    "accepted",
    "alpha",
    "mu",
    "bits",
    "traj_optimizer",
    "traj_eval",
    "grad_l2",
    "grad_blocksum",
];

/// One policy iteration. Values describe `θ_t`, the iterate the iteration
/// started from; trajectory counters are cumulative through iteration `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    pub value_mean: f64,
    pub value_stderr: f64,
    pub accepted: Option<bool>,
    pub alpha: f64,
    pub mu: f64,
    /// Bits communicated during this iteration.
    pub bits: u64,
    /// Cumulative optimizer-path trajectories through this iteration.
    pub traj_optimizer: u64,
    /// Cumulative evaluation plus server-panel trajectories.
    pub traj_eval: u64,
    pub grad_l2: Option<f64>,
    pub grad_blocksum: Option<f64>,
    #[serde(default)]
    pub feedback: Vec<i8>,
    /// `|ĝ_t|²` of the aggregated direction.
    #[serde(default)]
    pub direction_sq_norm: f64,
    /// `Σ_{k: Ô_k ≠ 0} |I_k|` under this iteration's partition.
    #[serde(default)]
    pub active_coordinates: usize,
}

fn opt_f64(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_trace_csv<W: Write>(records: &[IterationRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_COLUMNS)?;
    for r in records {
        w.write_record([
            r.t.to_string(),
            r.value_mean.to_string(),
            r.value_stderr.to_string(),
            r.accepted.map(|a| a.to_string()).unwrap_or_default(),
            r.alpha.to_string(),
            r.mu.to_string(),
            r.bits.to_string(),
            r.traj_optimizer.to_string(),
            r.traj_eval.to_string(),
            opt_f64(r.grad_l2),
            opt_f64(r.grad_blocksum),
        ])?;
    }
    w.flush().map_err(|e| Error::io("trace.csv", e))?;
    Ok(())
}

/// Parses a `trace.csv`. Columns beyond the CSV layout (feedback, direction
/// norms) come back empty.
pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<IterationRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    if headers.iter().ne(TRACE_COLUMNS.iter().copied()) {
        return Err(Error::Decode(format!(
            "unexpected trace header: {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or("");
        let ctx = |col: usize| format!("row {} column {}", line + 1, TRACE_COLUMNS[col]);
        let num = |i: usize| -> Result<f64> {
            let v: f64 = field(i).parse().map_err(|_| Error::Decode(ctx(i)))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Decode(ctx(i)))
            }
        };
        let int = |i: usize| -> Result<u64> { field(i).parse().map_err(|_| Error::Decode(ctx(i))) };
        let opt = |i: usize| -> Result<Option<f64>> {
            if field(i).is_empty() {
                Ok(None)
            } else {
                num(i).map(Some)
            }
        };
        let accepted = match field(3) {
            "" => None,
            "true" => Some(true),
            "false" => Some(false),
            _ => return Err(Error::Decode(ctx(3))),
        };
        out.push(IterationRecord {
            t: int(0)? as usize,
            value_mean: num(1)?,
            value_stderr: num(2)?,
            accepted,
            alpha: num(4)?,
            mu: num(5)?,
            bits: int(6)?,
            traj_optimizer: int(7)?,
            traj_eval: int(8)?,
            grad_l2: opt(9)?,
            grad_blocksum: opt(10)?,
            feedback: Vec::new(),
            direction_sq_norm: 0.0,
            active_coordinates: 0,
        });
    }
    Ok(out)
}

pub fn encode_params(v: &ParamVector) -> String {
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_params(blob: &str) -> Result<ParamVector> {
    let bytes = STANDARD
        .decode(blob.as_bytes())
        .map_err(|e| Error::Decode(format!("checkpoint base64: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Decode(format!(
            "checkpoint length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    ParamVector::new(values).map_err(|e| Error::Decode(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Parameters after iteration `t`, i.e. `θ_{t+1}`.
    pub t: usize,
    pub params: String,
}

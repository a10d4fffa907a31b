//! Run-record and aggregate CSV files.
//!
//! ```text
//! # fingerprint=<sha256 of the config>
//! # algorithm=dnss seed=1 iterations=… truncated=false …
//! iter,samples,comm_rounds,grad_norm_sq,consensus_err,f_value
//! ```
//!
//! Floats use 16 significant digits; lines end in LF.

use std::fmt::Write as _;

use crate::algorithms::{RecordRow, RunRecord};

use super::aggregate::Aggregate;
use super::ExperimentError;

pub const RECORD_HEADER: &str = "iter,samples,comm_rounds,grad_norm_sq,consensus_err,f_value";
pub const AGGREGATE_HEADER: &str = "samples,runs,grad_norm_sq_mean,grad_norm_sq_std,\
consensus_err_mean,consensus_err_std,f_value_mean,f_value_std";

fn float(v: f64) -> String {
    format!("{v:.15e}")
}

/// A run record tagged with the configuration that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct TaggedRecord {
    pub fingerprint: String,
    pub algorithm: String,
    pub record: RunRecord,
}

pub fn write_record(tagged: &TaggedRecord) -> String {
    let r = &tagged.record;
    let mut out = String::new();
    let _ = writeln!(out, "# fingerprint={}", tagged.fingerprint);
    let _ = writeln!(
        out,
        "# algorithm={} seed={} iterations={} truncated={} diverged={} initial_rounds={} \
output_iter={} output_grad_norm_sq={} output_node_grad_norm_sq={}",
        tagged.algorithm,
        r.seed,
        r.iterations,
        r.truncated,
        r.diverged,
        r.initial_rounds,
        r.output_iter,
        float(r.output_grad_norm_sq),
        float(r.output_node_grad_norm_sq),
    );
    out.push_str(RECORD_HEADER);
    out.push('\n');
    for row in &r.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            row.iter,
            row.samples,
            row.comm_rounds,
            float(row.grad_norm_sq),
            float(row.consensus_err),
            float(row.f_value)
        );
    }
    out
}

/// Reads the fingerprint and rows of a record file. Only the fields stored
/// in the rows and the fingerprint are recovered.
pub fn read_record(text: &str) -> Result<(String, Vec<RecordRow>), ExperimentError> {
    let mut fingerprint = None;
    let mut rows = Vec::new();
    let mut seen_header = false;
    for (k, line) in text.lines().enumerate() {
        let bad = |msg: &str| ExperimentError::Aggregate(format!("line {}: {msg}", k + 1));
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(fp) = rest.trim().strip_prefix("fingerprint=") {
                fingerprint = Some(fp.to_string());
            }
            continue;
        }
        if !seen_header {
            if line != RECORD_HEADER {
                return Err(bad("unexpected header"));
            }
            seen_header = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad("expected 6 fields"));
        }
        let int = |s: &str| s.parse::<u64>().map_err(|_| bad("bad integer"));
        let real = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        rows.push(RecordRow {
            iter: int(f[0])? as usize,
            samples: int(f[1])?,
            comm_rounds: int(f[2])?,
            grad_norm_sq: real(f[3])?,
            consensus_err: real(f[4])?,
            f_value: real(f[5])?,
        });
    }
    let fingerprint =
        fingerprint.ok_or_else(|| ExperimentError::Aggregate("missing fingerprint line".into()))?;
    Ok((fingerprint, rows))
}

pub fn write_aggregate(agg: &Aggregate) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# fingerprint={}", agg.fingerprint);
    out.push_str(AGGREGATE_HEADER);
    out.push('\n');
    for p in &agg.points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            float(p.samples),
            agg.runs,
            float(p.grad_norm_sq.0),
            float(p.grad_norm_sq.1),
            float(p.consensus_err.0),
            float(p.consensus_err.1),
            float(p.f_value.0),
            float(p.f_value.1),
        );
    }
    out
}

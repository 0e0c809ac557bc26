//! Solver reports and the residual-trace CSV format.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{ScheduleMode, Termination};
use crate::reference::Comparison;
use crate::spmv::PrecisionScheme;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Streamed,
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: u64,
    pub rr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub solver: SolverKind,
    pub scheme: PrecisionScheme,
    pub schedule_mode: Option<ScheduleMode>,
    pub n: usize,
    pub nnz: usize,
    pub converged: bool,
    pub termination: Termination,
    pub iterations: u64,
    pub final_rr: f64,
    /// `rr` after the initialization pass (iteration 0) and after every iteration.
    pub residual_trace: Vec<TracePoint>,
    /// Vector-level memory instructions per main-loop iteration.
    pub vector_reads: Option<Vec<u64>>,
    pub vector_writes: Option<Vec<u64>>,
    /// Counts shared by every non-terminating iteration.
    pub reads_per_iteration: Option<u64>,
    pub writes_per_iteration: Option<u64>,
    pub init_reads: Option<u64>,
    pub init_writes: Option<u64>,
    pub instruction_count: Option<u64>,
    pub memory_responses: Option<u64>,
    pub padding_count: Option<u64>,
    /// Cycle-model estimate; not calibrated against hardware.
    pub estimated_cycles: Option<u64>,
    pub comparison: Option<Comparison>,
}

impl SolverReport {
    /// A report for a run without modeled hardware; counters stay empty.
    pub fn unmodeled(
        solver: SolverKind,
        scheme: PrecisionScheme,
        n: usize,
        nnz: usize,
        termination: Termination,
        residual_trace: Vec<TracePoint>,
    ) -> Self {
        let iterations = residual_trace.last().map_or(0, |t| t.iteration);
        let final_rr = residual_trace.last().map_or(f64::NAN, |t| t.rr);
        Self {
            solver,
            scheme,
            schedule_mode: None,
            n,
            nnz,
            converged: termination == Termination::Converged,
            termination,
            iterations,
            final_rr,
            residual_trace,
            vector_reads: None,
            vector_writes: None,
            reads_per_iteration: None,
            writes_per_iteration: None,
            init_reads: None,
            init_writes: None,
            instruction_count: None,
            memory_responses: None,
            padding_count: None,
            estimated_cycles: None,
            comparison: None,
        }
    }

    /// 0 when converged, 2 when the iteration budget ran out.
    pub fn exit_code(&self) -> i32 {
        match self.termination {
            Termination::Converged => 0,
            Termination::Budget => 2,
        }
    }

    pub fn rr_values(&self) -> Vec<f64> {
        self.residual_trace.iter().map(|t| t.rr).collect()
    }
}

#[derive(Debug, Error)]
pub enum TraceCsvError {
    #[error("empty trace")]
    Empty,
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub const TRACE_HEADER: &str = "iteration,rr";

/// `iteration,rr` rows with rr in 17 significant digits.
pub fn write_trace_csv<W: Write>(trace: &[TracePoint], mut w: W) -> Result<(), TraceCsvError> {
    if trace.is_empty() {
        return Err(TraceCsvError::Empty);
    }
    writeln!(w, "{TRACE_HEADER}")?;
    for t in trace {
        writeln!(w, "{},{:.16e}", t.iteration, t.rr)?;
    }
    Ok(())
}

pub fn read_trace_csv<R: BufRead>(r: R) -> Result<Vec<TracePoint>, TraceCsvError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let err = |reason: String| TraceCsvError::Parse { line: i + 1, reason };
        if i == 0 {
            if line.trim() != TRACE_HEADER {
                return Err(err(format!("expected header {TRACE_HEADER:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let (it, rr) = line.split_once(',').ok_or_else(|| err("expected two fields".into()))?;
        out.push(TracePoint {
            iteration: it.trim().parse().map_err(|e| err(format!("iteration: {e}")))?,
            rr: rr.trim().parse().map_err(|e| err(format!("rr: {e}")))?,
        });
    }
    Ok(out)
}

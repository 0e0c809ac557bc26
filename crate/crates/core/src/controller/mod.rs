//! Host-side controller: configuration, scalar updates, the per-iteration
//! instruction program, and the driver that runs a solve on the module graph.

mod driver;
mod program;
mod wiring;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix_io::{Diagnostic, MatrixError};
use crate::modules::kernels::{DEFAULT_DIVIDE_LATENCY, DEFAULT_L_ACC};
use crate::runtime::{RuntimeError, SchedulerKind};
use crate::spmv::{PrecisionScheme, ScheduleParams, SpmvError, DEFAULT_CHANNELS, DEFAULT_DEP_DISTANCE, DEFAULT_PES};

pub use driver::{run_jpcg, Accelerator, SolveArtifacts};
pub use program::{issue_sequence, stage_ops, CtrlOp, ScalarRef, Scalars, Stage};
pub use wiring::{channel_plan, ChannelSpec};

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITERS: u64 = 20_000;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid solver input: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Input(Vec<Diagnostic>),
    #[error("CG breakdown: {0}")]
    Breakdown(String),
    #[error("pipeline deadlock: {0}")]
    Deadlock(String),
    #[error("stage stalled without producing {missing}; blocked: {blocked}")]
    Stall { missing: String, blocked: String },
    #[error("step budget exhausted")]
    StepBudget,
    #[error("memory response mismatch: {issued} writes issued, {received} responses")]
    ResponseMismatch { issued: u64, received: u64 },
    #[error("instruction queue for {0} is full")]
    QueueFull(String),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Spmv(#[from] SpmvError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    /// Every consumed vector is read from memory, every produced one written.
    Naive,
    /// Vector streaming reuse with per-vector scheduling FSMs.
    #[default]
    Decentralized,
}

impl fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleMode::Naive => "naive",
            ScheduleMode::Decentralized => "decentralized",
        })
    }
}

impl FromStr for ScheduleMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive" => Ok(ScheduleMode::Naive),
            "decentralized" => Ok(ScheduleMode::Decentralized),
            _ => Err(format!("unknown schedule mode {s:?} (expected naive or decentralized)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iters: u64,
    pub scheme: PrecisionScheme,
    pub schedule_mode: ScheduleMode,
    /// Depth overrides keyed by channel name, e.g. `M5->M6:r`.
    pub fifo_depths: BTreeMap<String, usize>,
    pub n_channels: usize,
    pub n_pes: usize,
    pub dep_distance: usize,
    pub hardware_faithful: bool,
    pub scheduler: SchedulerKind,
    /// Skip the M5..M7 recompute on the terminating iteration.
    pub early_exit: bool,
    pub divide_latency: usize,
    pub l_acc: usize,
    /// Snapshot x, r and p from memory after every iteration.
    pub record_vectors: bool,
    pub record_transcripts: bool,
    /// Process steps allowed per stage.
    pub step_budget: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
            scheme: PrecisionScheme::DefaultFp64,
            schedule_mode: ScheduleMode::Decentralized,
            fifo_depths: BTreeMap::new(),
            n_channels: DEFAULT_CHANNELS,
            n_pes: DEFAULT_PES,
            dep_distance: DEFAULT_DEP_DISTANCE,
            hardware_faithful: false,
            scheduler: SchedulerKind::Deterministic,
            early_exit: true,
            divide_latency: DEFAULT_DIVIDE_LATENCY,
            l_acc: DEFAULT_L_ACC,
            record_vectors: false,
            record_transcripts: false,
            step_budget: u64::MAX,
        }
    }
}

impl SolverConfig {
    pub fn schedule_params(&self) -> ScheduleParams {
        ScheduleParams {
            n_channels: self.n_channels,
            n_pes: self.n_pes,
            dep_distance: self.dep_distance,
            hardware_faithful: self.hardware_faithful,
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: String| Err(SolverError::Config(m));
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return bad(format!("tolerance must be positive and finite, got {}", self.tol));
        }
        if self.max_iters < 1 {
            return bad("max_iters must be at least 1".into());
        }
        for (name, v) in [
            ("n_channels", self.n_channels),
            ("n_pes", self.n_pes),
            ("dep_distance", self.dep_distance),
            ("l_acc", self.l_acc),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if let Some((name, _)) = self.fifo_depths.iter().find(|(_, d)| **d == 0) {
            return bad(format!("fifo depth for {name} must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Termination {
    Converged,
    /// Iteration budget reached before convergence.
    Budget,
}

/// `alpha = rz / (p·ap)`; a non-positive or non-finite curvature is a breakdown.
pub fn alpha_of(rz: f64, p_dot_ap: f64) -> Result<f64, SolverError> {
    if !(p_dot_ap > 0.0 && p_dot_ap.is_finite()) {
        return Err(SolverError::Breakdown(format!("p·ap = {p_dot_ap}")));
    }
    let alpha = rz / p_dot_ap;
    if !alpha.is_finite() {
        return Err(SolverError::Breakdown(format!("alpha = {alpha}")));
    }
    Ok(alpha)
}

/// `beta = rz_new / rz`
pub fn beta_of(rz: f64, rz_new: f64) -> Result<f64, SolverError> {
    if rz == 0.0 || !rz.is_finite() {
        return Err(SolverError::Breakdown(format!("rz = {rz}")));
    }
    let beta = rz_new / rz;
    if !beta.is_finite() {
        return Err(SolverError::Breakdown(format!("beta = {beta}")));
    }
    Ok(beta)
}

pub fn scalar_step(rz: f64, rz_new: f64, p_dot_ap: f64) -> Result<(f64, f64), SolverError> {
    Ok((alpha_of(rz, p_dot_ap)?, beta_of(rz, rz_new)?))
}

/// Decision after the residual of iteration `rp` is known (`rp = -1` is the
/// initialization pass).
pub fn should_terminate(rr: f64, rp: i64, cfg: &SolverConfig) -> Option<Termination> {
    if rr <= cfg.tol {
        Some(Termination::Converged)
    } else if rp + 1 >= cfg.max_iters as i64 {
        Some(Termination::Budget)
    } else {
        None
    }
}

//! Rate matching and a coarse cycle model.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerfError {
    #[error("datawidth must be positive")]
    ZeroDatawidth,
    #[error("bandwidth must be positive and finite, got {0}")]
    BadBandwidth(f64),
}

/// Smallest depth for the fast FIFO of a two-FIFO join whose slow side passes
/// through a pipeline of depth `l`.
pub fn min_safe_depth(l: usize) -> usize {
    l + 1
}

/// Clock frequency (Hz) at which a module consuming `max_datawidth` bytes per
/// cycle saturates a channel delivering `bw_per_channel` bytes per second.
pub fn matching_frequency(bw_per_channel: f64, max_datawidth: f64) -> Result<f64, PerfError> {
    if max_datawidth == 0.0 {
        return Err(PerfError::ZeroDatawidth);
    }
    if !(bw_per_channel > 0.0 && bw_per_channel.is_finite()) {
        return Err(PerfError::BadBandwidth(bw_per_channel));
    }
    if !(max_datawidth > 0.0 && max_datawidth.is_finite()) {
        return Err(PerfError::ZeroDatawidth);
    }
    Ok(bw_per_channel / max_datawidth)
}

/// One stream through a chain of pipelined stages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StreamPath {
    /// Beats pushed through the path at II=1.
    pub length: u64,
    pub stage_depths: Vec<u64>,
    /// Delay-buffer length when the path ends in a dot product.
    pub dot_product: Option<u64>,
}

impl StreamPath {
    pub fn cycles(&self) -> u64 {
        self.length + self.stage_depths.iter().sum::<u64>() + self.dot_product.map_or(0, |l| 5 * l)
    }
}

/// Streams that run concurrently between two scalar barriers.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct PhaseProfile {
    pub streams: Vec<StreamPath>,
}

/// Sum over phases of the slowest stream in each phase.
pub fn estimate_iteration_cycles(phases: &[PhaseProfile]) -> u64 {
    phases
        .iter()
        .map(|p| p.streams.iter().map(StreamPath::cycles).max().unwrap_or(0))
        .sum()
}

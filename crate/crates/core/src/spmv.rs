//! Streamed SpMV: precision schemes, nonzero scheduling across channels and
//! processing engines, and the hardware buffer limits.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix_io::CsrMatrix;

/// X buffer depth: column window size in hardware-faithful mode.
pub const X_WINDOW: usize = 4096;
/// Y buffer depth per channel.
pub const Y_CAPACITY: usize = 24576;
pub const COL_INDEX_BITS: u32 = 14;
pub const ROW_INDEX_BITS: u32 = 18;
pub const DEFAULT_CHANNELS: usize = 16;
pub const DEFAULT_PES: usize = 8;
pub const DEFAULT_DEP_DISTANCE: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpmvError {
    #[error("value at ({row}, {col}) overflows FP32: {value}")]
    Fp32Overflow { row: usize, col: usize, value: f64 },
    #[error("dimension mismatch: matrix is {n}x{n}, vector has {len} entries")]
    DimensionMismatch { n: usize, len: usize },
    #[error("invalid schedule parameters: {0}")]
    BadParameters(String),
}

/// (matrix, input vector, output vector) widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrecisionScheme {
    #[default]
    #[serde(rename = "fp64")]
    DefaultFp64,
    MixedV1,
    MixedV2,
    MixedV3,
}

impl PrecisionScheme {
    pub const ALL: [PrecisionScheme; 4] = [
        PrecisionScheme::DefaultFp64,
        PrecisionScheme::MixedV1,
        PrecisionScheme::MixedV2,
        PrecisionScheme::MixedV3,
    ];

    pub fn widths(self) -> (u32, u32, u32) {
        match self {
            PrecisionScheme::DefaultFp64 => (64, 64, 64),
            PrecisionScheme::MixedV1 => (32, 32, 32),
            PrecisionScheme::MixedV2 => (32, 32, 64),
            PrecisionScheme::MixedV3 => (32, 64, 64),
        }
    }

    pub fn matrix_is_fp32(self) -> bool {
        self.widths().0 == 32
    }
}

impl fmt::Display for PrecisionScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PrecisionScheme::DefaultFp64 => "fp64",
            PrecisionScheme::MixedV1 => "mixed-v1",
            PrecisionScheme::MixedV2 => "mixed-v2",
            PrecisionScheme::MixedV3 => "mixed-v3",
        })
    }
}

impl FromStr for PrecisionScheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fp64" => Ok(PrecisionScheme::DefaultFp64),
            "mixed-v1" => Ok(PrecisionScheme::MixedV1),
            "mixed-v2" => Ok(PrecisionScheme::MixedV2),
            "mixed-v3" => Ok(PrecisionScheme::MixedV3),
            _ => Err(format!("unknown precision scheme '{s}'")),
        }
    }
}

/// Matrix values at the scheme's matrix precision.
#[derive(Debug, Clone, PartialEq)]
pub enum CastValues {
    F64(Vec<f64>),
    F32(Vec<f32>),
}

impl CastValues {
    /// Values widened back to FP64.
    pub fn widened(&self) -> Vec<f64> {
        match self {
            CastValues::F64(v) => v.clone(),
            CastValues::F32(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }
}

pub fn cast_matrix(a: &CsrMatrix, scheme: PrecisionScheme) -> Result<CastValues, SpmvError> {
    if !scheme.matrix_is_fp32() {
        return Ok(CastValues::F64(a.values().to_vec()));
    }
    let mut out = Vec::with_capacity(a.nnz());
    for i in 0..a.n() {
        for (j, v) in a.row(i) {
            let c = v as f32;
            if c.is_infinite() && v.is_finite() {
                return Err(SpmvError::Fp32Overflow {
                    row: i,
                    col: j,
                    value: v,
                });
            }
            out.push(c);
        }
    }
    Ok(CastValues::F32(out))
}

/// The matrix with its values replaced by their FP32 roundings, held in FP64.
pub fn cast_matrix_widened(a: &CsrMatrix, scheme: PrecisionScheme) -> Result<CsrMatrix, SpmvError> {
    let vals = cast_matrix(a, scheme)?.widened();
    Ok(a.with_values(vals).expect("casting keeps the pattern"))
}

/// One slot in a PE's nonzero stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Slot {
    Entry {
        row: usize,
        col: usize,
        value: f64,
    },
    /// No-op carrying +0.0 to row 0; never accumulated.
    Pad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub n_channels: usize,
    pub n_pes: usize,
    pub dep_distance: usize,
    pub hardware_faithful: bool,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            n_channels: DEFAULT_CHANNELS,
            n_pes: DEFAULT_PES,
            dep_distance: DEFAULT_DEP_DISTANCE,
            hardware_faithful: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledNonzeros {
    pub n: usize,
    pub params: ScheduleParams,
    /// PE lists indexed by `channel * n_pes + pe`.
    pub pes: Vec<Vec<Slot>>,
    pub padding: usize,
    /// Entries placed earlier than a preceding entry of the original order.
    pub reordered: usize,
    /// Column windows (1 unless hardware-faithful).
    pub windows: usize,
}

impl ScheduledNonzeros {
    pub fn fan_out(&self) -> usize {
        self.params.n_channels * self.params.n_pes
    }

    pub fn lane_of_row(&self, row: usize) -> usize {
        row % self.fan_out()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.pes.iter().flatten().filter_map(|s| match *s {
            Slot::Entry { row, col, value } => Some((row, col, value)),
            Slot::Pad => None,
        })
    }

    /// Text dump: `pe_id seq row col value-hex`, pads shown as row 0 col 0.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (pe, list) in self.pes.iter().enumerate() {
            for (seq, s) in list.iter().enumerate() {
                let (row, col, value) = match *s {
                    Slot::Entry { row, col, value } => (row, col, value),
                    Slot::Pad => (0, 0, 0.0),
                };
                out.push_str(&format!("{pe} {seq} {row} {col} {:016x}\n", value.to_bits()));
            }
        }
        out
    }

    /// Smallest spacing between equal-row entries over all PE lists.
    pub fn min_same_row_spacing(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for list in &self.pes {
            let mut last: HashMap<usize, usize> = HashMap::new();
            for (pos, s) in list.iter().enumerate() {
                if let Slot::Entry { row, .. } = *s {
                    if let Some(p) = last.insert(row, pos) {
                        let d = pos - p;
                        best = Some(best.map_or(d, |b| b.min(d)));
                    }
                }
            }
        }
        best
    }
}

/// Greedy placement of one lane's entries, appended to `out`.
///
/// Rows are kept in their original order and each row's entries in column
/// order. At each slot the first row (in order) whose previous entry is at
/// least `d` slots back supplies its next entry; when no such row exists a pad
/// is inserted. `last` holds the slot of each row's latest entry in `out`.
fn schedule_lane(
    rows: Vec<Vec<(usize, usize, f64)>>,
    d: usize,
    out: &mut Vec<Slot>,
    last: &mut HashMap<usize, usize>,
) -> (usize, usize) {
    let mut active: VecDeque<std::vec::IntoIter<(usize, usize, f64)>> = rows
        .into_iter()
        .filter(|r| !r.is_empty())
        .map(|r| r.into_iter())
        .collect();
    let mut pads = 0;
    let mut reordered = 0;
    while !active.is_empty() {
        let slot = out.len();
        let pick = active.iter().take(d).position(|it| {
            let row = it.as_slice()[0].0;
            last.get(&row).is_none_or(|&l| slot - l >= d)
        });
        match pick {
            Some(k) => {
                if k > 0 {
                    reordered += 1;
                }
                let it = &mut active[k];
                let (row, col, value) = it.next().expect("active rows are non-empty");
                out.push(Slot::Entry { row, col, value });
                last.insert(row, slot);
                if it.len() == 0 {
                    active.remove(k);
                }
            }
            None => {
                out.push(Slot::Pad);
                pads += 1;
            }
        }
    }
    (pads, reordered)
}

/// Distributes nonzeros over `n_channels * n_pes` lanes by row modulo the
/// fan-out and schedules each lane so equal-row entries are at least
/// `dep_distance` apart. Values are taken from `a` unchanged.
pub fn schedule_nonzeros(a: &CsrMatrix, params: ScheduleParams) -> Result<ScheduledNonzeros, SpmvError> {
    if params.n_channels == 0 || params.n_pes == 0 || params.dep_distance == 0 {
        return Err(SpmvError::BadParameters(format!(
            "channels={}, pes={}, dep_distance={} must all be positive",
            params.n_channels, params.n_pes, params.dep_distance
        )));
    }
    let fan = params.n_channels * params.n_pes;
    let n = a.n();
    let windows = if params.hardware_faithful {
        n.div_ceil(X_WINDOW).max(1)
    } else {
        1
    };
    let mut pes = vec![Vec::new(); fan];
    let mut padding = 0;
    let mut reordered = 0;
    for (lane, list) in pes.iter_mut().enumerate() {
        let mut last = HashMap::new();
        for w in 0..windows {
            let (lo, hi) = if params.hardware_faithful {
                (w * X_WINDOW, ((w + 1) * X_WINDOW).min(n))
            } else {
                (0, n)
            };
            let rows: Vec<Vec<(usize, usize, f64)>> = (lane..n)
                .step_by(fan)
                .map(|i| {
                    a.row(i)
                        .filter(|(j, _)| *j >= lo && *j < hi)
                        .map(|(j, v)| (i, j, v))
                        .collect()
                })
                .collect();
            let (p, r) = schedule_lane(rows, params.dep_distance, list, &mut last);
            padding += p;
            reordered += r;
        }
    }
    Ok(ScheduledNonzeros {
        n,
        params,
        pes,
        padding,
        reordered,
        windows,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HwLimitViolation {
    RowIndex { row: usize },
    YCapacity { channel: usize, rows: usize },
    ColumnWindow { window: usize, width: usize },
}

impl fmt::Display for HwLimitViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HwLimitViolation::RowIndex { row } => {
                write!(f, "row index {row} does not fit in {ROW_INDEX_BITS} bits")
            }
            HwLimitViolation::YCapacity { channel, rows } => write!(
                f,
                "channel {channel} holds {rows} rows, exceeding Y capacity {Y_CAPACITY}"
            ),
            HwLimitViolation::ColumnWindow { window, width } => write!(
                f,
                "column window {window} spans {width} columns, exceeding X capacity {X_WINDOW}"
            ),
        }
    }
}

/// Hardware buffer and index-width checks. Functional mode always passes.
pub fn check_hw_limits(sched: &ScheduledNonzeros, n: usize) -> Vec<HwLimitViolation> {
    let p = sched.params;
    if !p.hardware_faithful {
        return Vec::new();
    }
    let mut out = Vec::new();
    if n > 1 << ROW_INDEX_BITS {
        out.push(HwLimitViolation::RowIndex { row: n - 1 });
    }
    let fan = p.n_channels * p.n_pes;
    for ch in 0..p.n_channels {
        let rows: usize = (0..p.n_pes)
            .map(|pe| {
                let lane = ch * p.n_pes + pe;
                if lane < n {
                    (n - lane).div_ceil(fan)
                } else {
                    0
                }
            })
            .sum();
        if rows > Y_CAPACITY {
            out.push(HwLimitViolation::YCapacity { channel: ch, rows });
        }
    }
    if sched.windows == 1 && n > X_WINDOW {
        out.push(HwLimitViolation::ColumnWindow { window: 0, width: n });
    }
    out
}

/// `y = A x` evaluated lane by lane in scheduled order at the scheme's
/// precisions. Each lane keeps one accumulator per row, starting at +0.0; lane
/// partials for a row are combined in ascending lane order.
pub fn spmv_streamed(sched: &ScheduledNonzeros, x: &[f64], scheme: PrecisionScheme) -> Result<Vec<f64>, SpmvError> {
    let n = sched.n;
    if x.len() != n {
        return Err(SpmvError::DimensionMismatch { n, len: x.len() });
    }
    let x32: Vec<f32> = match scheme {
        PrecisionScheme::MixedV1 => x.iter().map(|&v| v as f32).collect(),
        _ => Vec::new(),
    };
    let mut y = vec![0.0f64; n];
    let mut seen = vec![false; n];
    let mut acc = vec![0.0f64; n];
    let mut acc32 = vec![0.0f32; if x32.is_empty() { 0 } else { n }];
    let mut active = vec![false; n];
    for list in &sched.pes {
        let mut touched = Vec::new();
        for s in list {
            let Slot::Entry { row, col, value } = *s else {
                continue;
            };
            if !active[row] {
                active[row] = true;
                touched.push(row);
            }
            match scheme {
                PrecisionScheme::DefaultFp64 => acc[row] += value * x[col],
                PrecisionScheme::MixedV1 => acc32[row] += (value as f32) * x32[col],
                PrecisionScheme::MixedV2 => acc[row] += ((value as f32) as f64) * ((x[col] as f32) as f64),
                PrecisionScheme::MixedV3 => acc[row] += ((value as f32) as f64) * x[col],
            }
        }
        for row in touched {
            let part = if x32.is_empty() {
                std::mem::take(&mut acc[row])
            } else {
                std::mem::take(&mut acc32[row]) as f64
            };
            y[row] = if seen[row] { y[row] + part } else { part };
            seen[row] = true;
            active[row] = false;
        }
    }
    Ok(y)
}

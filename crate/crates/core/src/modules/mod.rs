//! Compute modules M1..M8, vector controllers and memory read/write modules.

pub mod fsm;
pub mod join;
pub mod kernels;
mod units;
mod vector;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::isa::QId;
use crate::runtime::{Port, Receiver, RuntimeError, Sender};

pub use units::{Kernel, SpmvRoute, SpmvUnit, StreamRoute, StreamUnit};
pub use vector::{MemPort, MemUnit, VecCtrl, VecKey, VecOp, VecRoute};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModuleId {
    M1,
    M2,
    M3,
    M4,
    M5,
    M6,
    M7,
    M8,
}

impl ModuleId {
    pub const ALL: [ModuleId; 8] = [
        ModuleId::M1,
        ModuleId::M2,
        ModuleId::M3,
        ModuleId::M4,
        ModuleId::M5,
        ModuleId::M6,
        ModuleId::M7,
        ModuleId::M8,
    ];

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn q_id(self) -> QId {
        QId::new(self.index()).expect("eight modules fit in q_id")
    }

    pub fn from_q(q: QId) -> Self {
        Self::ALL[q.get() as usize]
    }
}

impl fmt::Display for ModuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "M{}", self.index() + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VectorId {
    P,
    R,
    X,
    Ap,
    M,
    /// Only memory-backed in the naive schedule.
    Z,
}

impl VectorId {
    pub const ALL: [VectorId; 6] = [
        VectorId::P,
        VectorId::R,
        VectorId::X,
        VectorId::Ap,
        VectorId::M,
        VectorId::Z,
    ];

    pub fn label(self) -> &'static str {
        match self {
            VectorId::P => "P",
            VectorId::R => "R",
            VectorId::X => "X",
            VectorId::Ap => "Ap",
            VectorId::M => "M",
            VectorId::Z => "Z",
        }
    }

    /// Process name of the vector controller.
    pub fn ctrl_name(self) -> String {
        format!("Vc{}", self.label())
    }

    /// Process name of the memory read/write module.
    pub fn mem_name(self) -> String {
        format!("Mem{}", self.label())
    }
}

impl fmt::Display for VectorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VectorId::P => "p",
            VectorId::R => "r",
            VectorId::X => "x",
            VectorId::Ap => "ap",
            VectorId::M => "M",
            VectorId::Z => "z",
        })
    }
}

/// Named data ports of a module.
#[derive(Default)]
pub struct DataPorts {
    pub ins: Vec<Receiver<f64>>,
    pub outs: Vec<Sender<f64>>,
}

impl DataPorts {
    pub fn input(&self, module: &str, name: &str) -> Result<usize, RuntimeError> {
        self.ins
            .iter()
            .position(|r| r.name() == name)
            .ok_or_else(|| wiring(module, format!("no input channel {name}")))
    }

    pub fn output(&self, module: &str, name: &str) -> Result<usize, RuntimeError> {
        self.outs
            .iter()
            .position(|s| s.name() == name)
            .ok_or_else(|| wiring(module, format!("no output channel {name}")))
    }

    pub fn outputs(&self, module: &str, names: &[String]) -> Result<Vec<usize>, RuntimeError> {
        names.iter().map(|n| self.output(module, n)).collect()
    }

    pub fn ports(&self) -> Vec<Port> {
        self.ins
            .iter()
            .map(Port::input)
            .chain(self.outs.iter().map(Port::output))
            .collect()
    }

    /// First output in `idx` without room, if any.
    pub fn full_output(&self, idx: &[usize]) -> Option<usize> {
        idx.iter().copied().find(|&i| !self.outs[i].has_room())
    }

    pub fn push_all(&self, idx: &[usize], v: f64) -> Result<(), RuntimeError> {
        for &i in idx {
            self.outs[i].try_push(v)?;
        }
        Ok(())
    }
}

pub(crate) fn wiring(module: &str, message: String) -> RuntimeError {
    RuntimeError::Module {
        module: module.to_string(),
        message,
    }
}

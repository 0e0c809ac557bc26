//! Functional model of a stream-centric JPCG accelerator.
//!
//! Instruction-driven modules exchange FP64 streams over bounded FIFOs, vectors
//! live in a modeled off-chip memory with access counters, and a host-side
//! controller sequences each solver iteration. A sequential reference solver
//! serves as ground truth.

pub mod controller;
pub mod fixtures;
pub mod isa;
pub mod matrix_io;
pub mod modules;
pub mod reference;
pub mod report;
pub mod runtime;
pub mod spmv;

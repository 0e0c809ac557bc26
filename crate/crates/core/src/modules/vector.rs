use std::sync::Arc;

use parking_lot::Mutex;
use serde::Serialize;

use crate::isa::{InstRdWr, InstVCtrl, MemOp, MemResponse};
use crate::runtime::memory::VectorStore;
use crate::runtime::{BlockedOn, PopOutcome, Port, Process, Receiver, RuntimeError, Sender, Step};

use super::fsm::{Fsm, FsmProbe};
use super::{wiring, DataPorts, ModuleId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum VecOp {
    Rd,
    Wr,
    RdWr,
}

impl VecOp {
    pub fn of(rd: bool, wr: bool) -> Self {
        match (rd, wr) {
            (true, true) => VecOp::RdWr,
            (true, false) => VecOp::Rd,
            _ => VecOp::Wr,
        }
    }

    /// `(rd, wr)`
    pub fn flags(self) -> (bool, bool) {
        match self {
            VecOp::Rd => (true, false),
            VecOp::Wr => (false, true),
            VecOp::RdWr => (true, true),
        }
    }
}

/// FSM key of a vector controller: the access kind and the instruction's q_id.
pub type VecKey = (VecOp, ModuleId);

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VecRoute {
    /// Channels receiving the vector read from memory.
    pub read_to: Vec<String>,
    /// Channel supplying the vector written to memory.
    pub write_from: Option<String>,
}

struct VecJob {
    mem_inst: Option<InstRdWr>,
    rd_left: usize,
    wr_left: usize,
    read_to: Vec<usize>,
    write_from: Option<usize>,
}

/// Routes one vector between its memory module and the compute modules.
pub struct VecCtrl {
    name: String,
    inst: Receiver<InstVCtrl>,
    mem_inst: Sender<InstRdWr>,
    mem_rd: Receiver<f64>,
    mem_wr: Sender<f64>,
    ports: DataPorts,
    fsm: Fsm<VecKey, VecRoute>,
    job: Option<VecJob>,
}

impl VecCtrl {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        inst: Receiver<InstVCtrl>,
        mem_inst: Sender<InstRdWr>,
        mem_rd: Receiver<f64>,
        mem_wr: Sender<f64>,
        ports: DataPorts,
        fsm: Fsm<VecKey, VecRoute>,
    ) -> Self {
        Self {
            name: name.into(),
            inst,
            mem_inst,
            mem_rd,
            mem_wr,
            ports,
            fsm,
            job: None,
        }
    }

    pub fn fsm_probe(&self) -> FsmProbe {
        self.fsm.probe()
    }

    fn start(&mut self) -> Result<Step, RuntimeError> {
        let inst = match self.inst.try_pop() {
            PopOutcome::Item(i) => i,
            PopOutcome::WouldBlock => return Ok(Step::Blocked(BlockedOn::pop(self.inst.id()))),
            PopOutcome::EndOfStream => return Ok(Step::Done),
        };
        let key = (VecOp::of(inst.rd, inst.wr), ModuleId::from_q(inst.q_id));
        let route = self.fsm.advance(&key).map_err(|e| wiring(&self.name, e.to_string()))?;
        if inst.rd == route.read_to.is_empty() || inst.wr != route.write_from.is_some() {
            return Err(wiring(&self.name, format!("route {route:?} does not fit {inst}")));
        }
        let len = inst.len as usize;
        self.job = Some(VecJob {
            mem_inst: Some(InstRdWr {
                rd: inst.rd,
                wr: inst.wr,
                base_addr: inst.base_addr,
                len: inst.len,
            }),
            rd_left: if inst.rd { len } else { 0 },
            wr_left: if inst.wr { len } else { 0 },
            read_to: self.ports.outputs(&self.name, &route.read_to)?,
            write_from: route
                .write_from
                .as_deref()
                .map(|n| self.ports.input(&self.name, n))
                .transpose()?,
        });
        Ok(Step::Progress)
    }
}

impl Process for VecCtrl {
    fn name(&self) -> &str {
        &self.name
    }

    fn ports(&self) -> Vec<Port> {
        let mut p = self.ports.ports();
        p.extend([
            Port::input(&self.inst),
            Port::output(&self.mem_inst),
            Port::input(&self.mem_rd),
            Port::output(&self.mem_wr),
        ]);
        p
    }

    fn step(&mut self) -> Result<Step, RuntimeError> {
        let Some(job) = self.job.as_mut() else {
            return self.start();
        };
        if let Some(mi) = job.mem_inst {
            if !self.mem_inst.has_room() {
                return Ok(Step::Blocked(BlockedOn::push(self.mem_inst.id())));
            }
            self.mem_inst.try_push(mi)?;
            job.mem_inst = None;
            return Ok(Step::Progress);
        }
        if job.rd_left == 0 && job.wr_left == 0 {
            self.job = None;
            return Ok(Step::Progress);
        }
        let mut progress = false;
        let mut blocked = None;
        if job.rd_left > 0 {
            if let Some(i) = self.ports.full_output(&job.read_to) {
                blocked = Some(BlockedOn::push(self.ports.outs[i].id()));
            } else {
                match self.mem_rd.try_pop() {
                    PopOutcome::Item(v) => {
                        self.ports.push_all(&job.read_to, v)?;
                        job.rd_left -= 1;
                        progress = true;
                    }
                    _ => blocked = Some(BlockedOn::pop(self.mem_rd.id())),
                }
            }
        }
        if job.wr_left > 0 {
            let src = &self.ports.ins[job.write_from.expect("writes have a source")];
            if !self.mem_wr.has_room() {
                blocked.get_or_insert(BlockedOn::push(self.mem_wr.id()));
            } else {
                match src.try_pop() {
                    PopOutcome::Item(v) => {
                        self.mem_wr.try_push(v)?;
                        job.wr_left -= 1;
                        progress = true;
                    }
                    _ => {
                        blocked.get_or_insert(BlockedOn::pop(src.id()));
                    }
                }
            }
        }
        if progress {
            Ok(Step::Progress)
        } else {
            Ok(Step::Blocked(blocked.expect("an unfinished job is blocked somewhere")))
        }
    }
}

/// Memory state shared between a memory module and the host.
#[derive(Debug, Clone)]
pub struct MemPort {
    pub store: VectorStore,
    pub vector_reads: u64,
    pub vector_writes: u64,
}

impl MemPort {
    pub fn new(store: VectorStore) -> Self {
        Self {
            store,
            vector_reads: 0,
            vector_writes: 0,
        }
    }

    pub fn reset_counters(&mut self) {
        self.vector_reads = 0;
        self.vector_writes = 0;
        self.store.reset_counters();
    }
}

struct MemJob {
    inst: InstRdWr,
    rd_next: usize,
    wr_next: usize,
}

/// Executes memory instructions against one vector's channel(s). The read
/// and write halves of an instruction proceed in the same steps; one
/// response is sent per write instruction, after which a double binding flips.
pub struct MemUnit {
    name: String,
    inst: Receiver<InstRdWr>,
    rd_out: Sender<f64>,
    wr_in: Receiver<f64>,
    resp: Sender<MemResponse>,
    port: Arc<Mutex<MemPort>>,
    job: Option<MemJob>,
}

impl MemUnit {
    pub fn new(
        name: impl Into<String>,
        inst: Receiver<InstRdWr>,
        rd_out: Sender<f64>,
        wr_in: Receiver<f64>,
        resp: Sender<MemResponse>,
        port: Arc<Mutex<MemPort>>,
    ) -> Self {
        Self {
            name: name.into(),
            inst,
            rd_out,
            wr_in,
            resp,
            port,
            job: None,
        }
    }
}

impl Process for MemUnit {
    fn name(&self) -> &str {
        &self.name
    }

    fn ports(&self) -> Vec<Port> {
        vec![
            Port::input(&self.inst),
            Port::output(&self.rd_out),
            Port::input(&self.wr_in),
            Port::output(&self.resp),
        ]
    }

    fn step(&mut self) -> Result<Step, RuntimeError> {
        let Some(job) = self.job.as_mut() else {
            let inst = match self.inst.try_pop() {
                PopOutcome::Item(i) => i,
                PopOutcome::WouldBlock => return Ok(Step::Blocked(BlockedOn::pop(self.inst.id()))),
                PopOutcome::EndOfStream => return Ok(Step::Done),
            };
            let mut port = self.port.lock();
            let len = inst.len as usize;
            if inst.rd {
                port.store.read_channel().check(inst.base_addr, len)?;
                port.vector_reads += 1;
            }
            if inst.wr {
                port.store.write_channel().check(inst.base_addr, len)?;
                port.vector_writes += 1;
            }
            self.job = Some(MemJob {
                inst,
                rd_next: 0,
                wr_next: 0,
            });
            return Ok(Step::Progress);
        };
        let len = job.inst.len as usize;
        let rd_left = job.inst.rd && job.rd_next < len;
        let wr_left = job.inst.wr && job.wr_next < len;
        if !rd_left && !wr_left {
            if job.inst.wr {
                if !self.resp.has_room() {
                    return Ok(Step::Blocked(BlockedOn::push(self.resp.id())));
                }
                let mut port = self.port.lock();
                self.resp.try_push(MemResponse {
                    channel: port.store.write_channel_id(),
                    op: MemOp::Write,
                    len: job.inst.len,
                })?;
                port.store.finish_write();
            }
            self.job = None;
            return Ok(Step::Progress);
        }
        let mut progress = false;
        let mut blocked = None;
        let mut port = self.port.lock();
        if rd_left {
            if self.rd_out.has_room() {
                let v = port
                    .store
                    .read_channel()
                    .read_word(job.inst.base_addr + job.rd_next as u64)?;
                self.rd_out.try_push(v)?;
                job.rd_next += 1;
                progress = true;
            } else {
                blocked = Some(BlockedOn::push(self.rd_out.id()));
            }
        }
        if wr_left {
            match self.wr_in.try_pop() {
                PopOutcome::Item(v) => {
                    port.store
                        .write_channel()
                        .write_word(job.inst.base_addr + job.wr_next as u64, v)?;
                    job.wr_next += 1;
                    progress = true;
                }
                _ => {
                    blocked.get_or_insert(BlockedOn::pop(self.wr_in.id()));
                }
            }
        }
        if progress {
            Ok(Step::Progress)
        } else {
            Ok(Step::Blocked(blocked.expect("an unfinished job is blocked somewhere")))
        }
    }
}

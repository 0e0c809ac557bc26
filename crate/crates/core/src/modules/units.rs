use std::collections::VecDeque;
use std::sync::Arc;

use crate::isa::InstCmp;
use crate::runtime::{BlockedOn, PopOutcome, Port, Process, Receiver, RuntimeError, Sender, Step};
use crate::spmv::{spmv_streamed, PrecisionScheme, ScheduledNonzeros};

use super::fsm::{Fsm, FsmProbe};
use super::kernels::DelayBuffer;
use super::{wiring, DataPorts, ModuleId};

/// Function of a stream unit. Operands are popped jointly, one element each
/// per step; the last operand is the one forwarded downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    /// `a·b` into the delay buffer.
    Dot,
    /// `a·a` into the delay buffer; single operand.
    Square,
    /// `a + alpha·b`
    AddScaled,
    /// `a - alpha·b`
    SubScaled,
    /// `b / a`
    Divide,
}

impl Kernel {
    fn arity(self) -> usize {
        match self {
            Kernel::Square => 1,
            _ => 2,
        }
    }

    fn reduces(self) -> bool {
        matches!(self, Kernel::Dot | Kernel::Square)
    }
}

/// Channel names used by one instruction of a stream unit.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StreamRoute {
    pub operands: Vec<String>,
    pub results: Vec<String>,
    pub forwards: Vec<String>,
}

struct Job {
    len: usize,
    alpha: f64,
    operands: Vec<usize>,
    results: Vec<usize>,
    forwards: Vec<usize>,
    consumed: usize,
    tick: u64,
    pipeline: VecDeque<(f64, u64)>,
    acc: DelayBuffer,
}

/// Compute modules M2..M8.
///
/// Results of element `i` leave `latency` steps after the step that consumed
/// it; forwarded operands leave in the consuming step. A step that would need
/// to push into a full channel stalls the whole pipeline.
pub struct StreamUnit {
    name: String,
    kernel: Kernel,
    inst: Receiver<InstCmp>,
    ports: DataPorts,
    scalar: Option<Sender<f64>>,
    fsm: Fsm<ModuleId, StreamRoute>,
    latency: usize,
    l_acc: usize,
    job: Option<Job>,
}

impl StreamUnit {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        kernel: Kernel,
        inst: Receiver<InstCmp>,
        ports: DataPorts,
        scalar: Option<Sender<f64>>,
        fsm: Fsm<ModuleId, StreamRoute>,
        latency: usize,
        l_acc: usize,
    ) -> Self {
        Self {
            name: name.into(),
            kernel,
            inst,
            ports,
            scalar,
            fsm,
            latency,
            l_acc,
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
        let route = self
            .fsm
            .advance(&ModuleId::from_q(inst.q_id))
            .map_err(|e| wiring(&self.name, e.to_string()))?;
        if route.operands.len() != self.kernel.arity() {
            return Err(wiring(
                &self.name,
                format!(
                    "{:?} takes {} operands, route has {}",
                    self.kernel,
                    self.kernel.arity(),
                    route.operands.len()
                ),
            ));
        }
        let operands = route
            .operands
            .iter()
            .map(|n| self.ports.input(&self.name, n))
            .collect::<Result<Vec<_>, _>>()?;
        if self.kernel.reduces() && self.scalar.is_none() {
            return Err(wiring(&self.name, "reduction without a scalar channel".into()));
        }
        self.job = Some(Job {
            len: inst.len as usize,
            alpha: inst.alpha,
            operands,
            results: self.ports.outputs(&self.name, &route.results)?,
            forwards: self.ports.outputs(&self.name, &route.forwards)?,
            consumed: 0,
            tick: 0,
            pipeline: VecDeque::new(),
            acc: DelayBuffer::new(self.l_acc),
        });
        Ok(Step::Progress)
    }

    fn pop(&self, i: usize) -> Result<f64, RuntimeError> {
        match self.ports.ins[i].try_pop() {
            PopOutcome::Item(v) => Ok(v),
            _ => Err(wiring(
                &self.name,
                format!("stream underrun on {}", self.ports.ins[i].name()),
            )),
        }
    }
}

impl Process for StreamUnit {
    fn name(&self) -> &str {
        &self.name
    }

    fn ports(&self) -> Vec<Port> {
        let mut p = self.ports.ports();
        p.push(Port::input(&self.inst));
        if let Some(s) = &self.scalar {
            p.push(Port::output(s));
        }
        p
    }

    fn step(&mut self) -> Result<Step, RuntimeError> {
        let Some(job) = self.job.as_ref() else {
            return self.start();
        };
        let ports = &self.ports;
        let blocked_push = |i: usize| Ok(Step::Blocked(BlockedOn::push(ports.outs[i].id())));

        if job.consumed == job.len && job.pipeline.is_empty() {
            if self.kernel.reduces() {
                let tx = self.scalar.as_ref().expect("checked at start");
                if !tx.has_room() {
                    return Ok(Step::Blocked(BlockedOn::push(tx.id())));
                }
                tx.try_push(job.acc.finish())?;
            }
            self.job = None;
            return Ok(Step::Progress);
        }

        let ready = job.pipeline.front().is_some_and(|&(_, t)| t <= job.tick);
        if ready {
            if let Some(i) = ports.full_output(&job.results) {
                return blocked_push(i);
            }
        }
        let missing = job.operands.iter().copied().find(|&i| ports.ins[i].is_empty());
        let want_in = job.consumed < job.len && missing.is_none();
        if want_in {
            if let Some(i) = ports.full_output(&job.forwards) {
                return blocked_push(i);
            }
            if self.latency == 0 {
                if let Some(i) = ports.full_output(&job.results) {
                    return blocked_push(i);
                }
            }
        }
        if !ready && !want_in {
            if job.pipeline.is_empty() {
                let i = missing.expect("unfinished job with empty pipeline waits on an operand");
                return Ok(Step::Blocked(BlockedOn::pop(ports.ins[i].id())));
            }
            self.job.as_mut().expect("job present").tick += 1;
            return Ok(Step::Progress);
        }

        let a = if want_in {
            Some(self.pop(job.operands[0])?)
        } else {
            None
        };
        let b = if want_in && job.operands.len() > 1 {
            Some(self.pop(job.operands[1])?)
        } else {
            None
        };
        let kernel = self.kernel;
        let latency = self.latency as u64;
        let job = self.job.as_mut().expect("job present");
        if ready {
            let (v, _) = job.pipeline.pop_front().expect("ready implies non-empty");
            self.ports.push_all(&job.results, v)?;
        }
        if let Some(a) = a {
            let index = job.consumed;
            let (result, forward) = match kernel {
                Kernel::Dot => {
                    let b = b.expect("binary kernel");
                    job.acc.add(a * b);
                    (None, b)
                }
                Kernel::Square => {
                    job.acc.add(a * a);
                    (None, a)
                }
                Kernel::AddScaled => {
                    let b = b.expect("binary kernel");
                    (Some(a + job.alpha * b), b)
                }
                Kernel::SubScaled => {
                    let b = b.expect("binary kernel");
                    (Some(a - job.alpha * b), b)
                }
                Kernel::Divide => {
                    let b = b.expect("binary kernel");
                    if a == 0.0 {
                        return Err(wiring(&self.name, format!("division by zero at index {index}")));
                    }
                    (Some(b / a), b)
                }
            };
            self.ports.push_all(&job.forwards, forward)?;
            if let Some(v) = result {
                if latency == 0 {
                    self.ports.push_all(&job.results, v)?;
                } else {
                    job.pipeline.push_back((v, job.tick + latency));
                }
            }
            job.consumed += 1;
        }
        job.tick += 1;
        Ok(Step::Progress)
    }
}

/// Channel names used by one SpMV instruction.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SpmvRoute {
    pub source: String,
    pub results: Vec<String>,
}

struct SpmvJob {
    len: usize,
    source: usize,
    results: Vec<usize>,
    x: Vec<f64>,
    y: Vec<f64>,
    emitted: usize,
}

/// M1: buffers the whole input vector, multiplies, then streams `y` out.
pub struct SpmvUnit {
    name: String,
    inst: Receiver<InstCmp>,
    ports: DataPorts,
    sched: Arc<ScheduledNonzeros>,
    scheme: PrecisionScheme,
    fsm: Fsm<ModuleId, SpmvRoute>,
    job: Option<SpmvJob>,
}

impl SpmvUnit {
    pub fn new(
        name: impl Into<String>,
        inst: Receiver<InstCmp>,
        ports: DataPorts,
        sched: Arc<ScheduledNonzeros>,
        scheme: PrecisionScheme,
        fsm: Fsm<ModuleId, SpmvRoute>,
    ) -> Self {
        Self {
            name: name.into(),
            inst,
            ports,
            sched,
            scheme,
            fsm,
            job: None,
        }
    }

    pub fn fsm_probe(&self) -> FsmProbe {
        self.fsm.probe()
    }
}

impl Process for SpmvUnit {
    fn name(&self) -> &str {
        &self.name
    }

    fn ports(&self) -> Vec<Port> {
        let mut p = self.ports.ports();
        p.push(Port::input(&self.inst));
        p
    }

    fn step(&mut self) -> Result<Step, RuntimeError> {
        let Some(job) = self.job.as_mut() else {
            let inst = match self.inst.try_pop() {
                PopOutcome::Item(i) => i,
                PopOutcome::WouldBlock => return Ok(Step::Blocked(BlockedOn::pop(self.inst.id()))),
                PopOutcome::EndOfStream => return Ok(Step::Done),
            };
            let route = self
                .fsm
                .advance(&ModuleId::from_q(inst.q_id))
                .map_err(|e| wiring(&self.name, e.to_string()))?;
            let len = inst.len as usize;
            if len != self.sched.n {
                return Err(wiring(
                    &self.name,
                    format!("SpMV length {len} differs from matrix dimension {}", self.sched.n),
                ));
            }
            self.job = Some(SpmvJob {
                len,
                source: self.ports.input(&self.name, &route.source)?,
                results: self.ports.outputs(&self.name, &route.results)?,
                x: Vec::with_capacity(len),
                y: Vec::new(),
                emitted: 0,
            });
            return Ok(Step::Progress);
        };
        if job.x.len() < job.len {
            let rx = &self.ports.ins[job.source];
            return match rx.try_pop() {
                PopOutcome::Item(v) => {
                    job.x.push(v);
                    if job.x.len() == job.len {
                        job.y = spmv_streamed(&self.sched, &job.x, self.scheme)
                            .map_err(|e| wiring(&self.name, e.to_string()))?;
                    }
                    Ok(Step::Progress)
                }
                PopOutcome::WouldBlock => Ok(Step::Blocked(BlockedOn::pop(rx.id()))),
                PopOutcome::EndOfStream => Err(wiring(&self.name, format!("stream underrun on {}", rx.name()))),
            };
        }
        if job.emitted == job.len {
            self.job = None;
            return Ok(Step::Progress);
        }
        if let Some(i) = self.ports.full_output(&job.results) {
            return Ok(Step::Blocked(BlockedOn::push(self.ports.outs[i].id())));
        }
        self.ports.push_all(&job.results, job.y[job.emitted])?;
        job.emitted += 1;
        Ok(Step::Progress)
    }
}

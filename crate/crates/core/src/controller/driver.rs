use std::collections::BTreeMap;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::Serialize;

use crate::isa::{InstCmp, InstVCtrl, Instruction, MemResponse};
use crate::matrix_io::{extract_jacobi, validate_solver_input, CsrMatrix};
use crate::modules::fsm::FsmProbe;
use crate::modules::{MemPort, ModuleId, VecOp, VectorId};
use crate::report::{SolverKind, SolverReport, TracePoint};
use crate::runtime::perf::{estimate_iteration_cycles, PhaseProfile, StreamPath};
use crate::runtime::{
    format_blocked, BlockedModule, ChannelId, Graph, PopOutcome, PushOutcome, Receiver, RunOutcome, Sender,
};
use crate::spmv::{cast_matrix, check_hw_limits, schedule_nonzeros, ScheduledNonzeros};

use super::program::{iteration_stages, stage_ops, CtrlOp, Scalars, Stage};
use super::wiring::{build, Wired};
use super::{alpha_of, beta_of, should_terminate, SolverConfig, SolverError, Termination};

/// The module graph plus the host's endpoints into it.
pub struct Accelerator {
    graph: Graph,
    cfg: SolverConfig,
    n: usize,
    sched: Arc<ScheduledNonzeros>,
    vctrl: BTreeMap<VectorId, Sender<InstVCtrl>>,
    cmp: BTreeMap<ModuleId, Sender<InstCmp>>,
    scalars: BTreeMap<ModuleId, Receiver<f64>>,
    responses: BTreeMap<VectorId, Receiver<MemResponse>>,
    memory: BTreeMap<VectorId, Arc<Mutex<MemPort>>>,
    probes: Vec<FsmProbe>,
    data_channels: Vec<ChannelId>,
    log: Vec<Instruction>,
    writes_issued: u64,
    responses_seen: u64,
    last_blocked: Vec<BlockedModule>,
}

impl Accelerator {
    /// Builds the graph and loads `b` (where r lives), `x0`, the Jacobi
    /// diagonal and zeroed p/ap/z into modeled memory.
    pub fn new(a: &CsrMatrix, b: &[f64], x0: &[f64], cfg: &SolverConfig) -> Result<Self, SolverError> {
        cfg.validate()?;
        let diags = validate_solver_input(a, b, x0);
        if !diags.is_empty() {
            return Err(SolverError::Input(diags));
        }
        let params = cfg.schedule_params();
        cast_matrix(a, cfg.scheme)?;
        let sched = schedule_nonzeros(a, params)?;
        if cfg.hardware_faithful {
            let v = check_hw_limits(&sched, a.n());
            if !v.is_empty() {
                let list: Vec<String> = v.iter().map(|e| e.to_string()).collect();
                return Err(SolverError::Config(format!(
                    "hardware limits violated: {}",
                    list.join("; ")
                )));
            }
        }
        let sched = Arc::new(sched);
        let Wired {
            graph,
            vctrl,
            cmp,
            scalars,
            responses,
            memory,
            probes,
            data_channels,
        } = build(a, Arc::clone(&sched), cfg)?;
        if cfg.record_transcripts {
            graph.enable_transcripts();
        }
        let n = a.n();
        let diag = extract_jacobi(a)?.into_inner();
        let zeros = vec![0.0; n];
        for (v, port) in &memory {
            let data: &[f64] = match v {
                VectorId::R => b,
                VectorId::X => x0,
                VectorId::M => &diag,
                _ => &zeros,
            };
            port.lock()
                .store
                .preload(0, data)
                .map_err(crate::runtime::RuntimeError::from)?;
        }
        Ok(Self {
            graph,
            cfg: cfg.clone(),
            n,
            sched,
            vctrl,
            cmp,
            scalars,
            responses,
            memory,
            probes,
            data_channels,
            log: Vec::new(),
            writes_issued: 0,
            responses_seen: 0,
            last_blocked: Vec::new(),
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn schedule(&self) -> &ScheduledNonzeros {
        &self.sched
    }

    pub fn instruction_log(&self) -> &[Instruction] {
        &self.log
    }

    pub fn fsm_probes(&self) -> &[FsmProbe] {
        &self.probes
    }

    /// Names of scheduling FSMs away from their home state.
    pub fn fsms_off_home(&self) -> Vec<String> {
        self.probes
            .iter()
            .filter(|p| !p.at_home())
            .map(|p| format!("{}@S{}", p.name(), p.state()))
            .collect()
    }

    /// Vector-level (reads, writes) summed over all memory modules.
    pub fn vector_counts(&self) -> (u64, u64) {
        self.memory.values().fold((0, 0), |(r, w), p| {
            let p = p.lock();
            (r + p.vector_reads, w + p.vector_writes)
        })
    }

    pub fn counts_of(&self, v: VectorId) -> Option<(u64, u64)> {
        self.memory.get(&v).map(|p| {
            let p = p.lock();
            (p.vector_reads, p.vector_writes)
        })
    }

    /// Current contents of a vector as the next read would see them.
    pub fn snapshot(&self, v: VectorId) -> Option<Vec<f64>> {
        self.memory.get(&v).map(|p| {
            p.lock()
                .store
                .snapshot(0, self.n)
                .expect("vectors span the whole store")
        })
    }

    fn issue(&mut self, op: &CtrlOp, s: &Scalars) -> Result<(), SolverError> {
        let len = self.n as u32;
        let (inst, outcome, target) = match *op {
            CtrlOp::VCtrl { vector, op, q } => {
                let inst = InstVCtrl {
                    rd: matches!(op, VecOp::Rd | VecOp::RdWr),
                    wr: matches!(op, VecOp::Wr | VecOp::RdWr),
                    base_addr: 0,
                    len,
                    q_id: q.q_id(),
                };
                if inst.wr {
                    self.writes_issued += 1;
                }
                let tx = self
                    .vctrl
                    .get(&vector)
                    .ok_or_else(|| SolverError::Config(format!("no vector controller for {vector}")))?;
                (Instruction::VCtrl(inst), tx.try_push(inst)?, vector.ctrl_name())
            }
            CtrlOp::Cmp { module, scalar, q } => {
                let inst = InstCmp {
                    len,
                    alpha: s.resolve(scalar),
                    q_id: q.q_id(),
                };
                (
                    Instruction::Cmp(inst),
                    self.cmp[&module].try_push(inst)?,
                    module.to_string(),
                )
            }
            CtrlOp::Await(_) => return Ok(()),
        };
        if outcome == PushOutcome::WouldBlock {
            return Err(SolverError::QueueFull(target));
        }
        self.log.push(inst);
        Ok(())
    }

    fn run_to_idle(&mut self) -> Result<(), SolverError> {
        match self.graph.run(self.cfg.scheduler, self.cfg.step_budget)? {
            RunOutcome::Idle { blocked } => {
                self.last_blocked = blocked;
                Ok(())
            }
            RunOutcome::Completed => Ok(()),
            RunOutcome::Deadlock { blocked } => Err(SolverError::Deadlock(format_blocked(&blocked))),
            RunOutcome::BudgetExhausted => Err(SolverError::StepBudget),
        }
    }

    fn drain_responses(&mut self) {
        for rx in self.responses.values() {
            while let PopOutcome::Item(_) = rx.try_pop() {
                self.responses_seen += 1;
            }
        }
    }

    /// Issues a stage, runs the graph until it waits on the host, and
    /// returns the awaited scalars in order.
    pub fn run_stage(&mut self, ops: &[CtrlOp], s: &Scalars) -> Result<Vec<(ModuleId, f64)>, SolverError> {
        for op in ops {
            self.issue(op, s)?;
        }
        self.run_to_idle()?;
        self.drain_responses();
        let mut out = Vec::new();
        for op in ops {
            if let CtrlOp::Await(m) = *op {
                match self.scalars[&m].try_pop() {
                    PopOutcome::Item(v) => out.push((m, v)),
                    _ => {
                        return Err(SolverError::Stall {
                            missing: format!("{m} scalar"),
                            blocked: format_blocked(&self.last_blocked),
                        })
                    }
                }
            }
        }
        Ok(out)
    }

    /// Checks that all streams drained and every write was acknowledged.
    pub fn finish(&mut self) -> Result<(), SolverError> {
        self.drain_responses();
        if self.responses_seen != self.writes_issued {
            return Err(SolverError::ResponseMismatch {
                issued: self.writes_issued,
                received: self.responses_seen,
            });
        }
        if let Some(&id) = self.data_channels.iter().find(|&&id| self.graph.occupancy(id) > 0) {
            return Err(SolverError::Stall {
                missing: format!("drain of {}", self.graph.channel_name(id)),
                blocked: format_blocked(&self.last_blocked),
            });
        }
        Ok(())
    }

    pub fn responses_seen(&self) -> u64 {
        self.responses_seen
    }

    /// Cycle-model estimate of one main-loop iteration: vectors move one
    /// 64-byte beat (eight FP64 values) per cycle, each PE one nonzero per cycle.
    pub fn estimated_iteration_cycles(&self) -> u64 {
        let beats = self.n.div_ceil(8) as u64;
        let lane = self.sched.pes.iter().map(Vec::len).max().unwrap_or(0) as u64;
        let l_acc = Some(self.cfg.l_acc as u64);
        let div = self.cfg.divide_latency as u64;
        let path = |length, stage_depths: Vec<u64>, dot_product| StreamPath {
            length,
            stage_depths,
            dot_product,
        };
        let phases = [
            PhaseProfile {
                streams: vec![path(beats + lane, vec![], None)],
            },
            PhaseProfile {
                streams: vec![path(beats, vec![], l_acc)],
            },
            PhaseProfile {
                streams: vec![path(beats, vec![div], l_acc)],
            },
            PhaseProfile {
                streams: vec![path(beats, vec![div], None)],
            },
        ];
        estimate_iteration_cycles(&phases)
    }
}

/// Memory contents after one iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationSnapshot {
    /// 0 is the initialization pass.
    pub iteration: u64,
    pub x: Vec<f64>,
    pub r: Vec<f64>,
    pub p: Vec<f64>,
}

/// Everything a streamed solve produces besides the solution.
#[derive(Debug, Clone)]
pub struct SolveArtifacts {
    pub x: Vec<f64>,
    pub report: SolverReport,
    pub snapshots: Vec<IterationSnapshot>,
    pub instruction_log: Vec<Instruction>,
    /// Per main-loop iteration: FSMs not in their home state afterwards.
    pub fsms_off_home: Vec<Vec<String>>,
    /// Per channel name, when transcripts were recorded.
    pub transcripts: BTreeMap<String, Vec<String>>,
    pub transcript_dump: Option<String>,
    /// (iteration, alpha, beta) as used by the hardware; beta is absent on the
    /// terminating iteration.
    pub scalars: Vec<(u64, f64, Option<f64>)>,
}

fn take(out: &[(ModuleId, f64)], m: ModuleId) -> f64 {
    out.iter()
        .find(|(k, _)| *k == m)
        .map(|(_, v)| *v)
        .expect("awaited scalar")
}

fn steady(values: &[u64]) -> Option<u64> {
    let body = &values[..values.len().saturating_sub(1)];
    match body.first() {
        Some(&v) if body.iter().all(|&w| w == v) => Some(v),
        _ => None,
    }
}

/// Streamed JPCG on the module graph. Returns the x last written to memory.
pub fn run_jpcg(a: &CsrMatrix, b: &[f64], x0: &[f64], cfg: &SolverConfig) -> Result<SolveArtifacts, SolverError> {
    let mut acc = Accelerator::new(a, b, x0, cfg)?;
    let mode = cfg.schedule_mode;
    let mut s = Scalars::default();
    let mut trace = Vec::new();
    let mut snapshots = Vec::new();
    let mut off_home = Vec::new();
    let mut reads = Vec::new();
    let mut writes = Vec::new();
    let mut used = Vec::new();
    let snap = |acc: &Accelerator, iteration: u64, out: &mut Vec<IterationSnapshot>| {
        if cfg.record_vectors {
            out.push(IterationSnapshot {
                iteration,
                x: acc.snapshot(VectorId::X).expect("x is memory-backed"),
                r: acc.snapshot(VectorId::R).expect("r is memory-backed"),
                p: acc.snapshot(VectorId::P).expect("p is memory-backed"),
            });
        }
    };

    let head = acc.run_stage(&stage_ops(mode, Stage::InitHead), &s)?;
    let (mut rr, mut rz) = (take(&head, ModuleId::M8), take(&head, ModuleId::M6));
    trace.push(TracePoint { iteration: 0, rr });
    let mut termination = should_terminate(rr, -1, cfg);
    if termination.is_none() && rz == 0.0 {
        return Err(SolverError::Breakdown("rz = 0 before convergence".into()));
    }
    let tail = iteration_stages(-1, termination.is_some(), cfg.early_exit)[1];
    acc.run_stage(&stage_ops(mode, tail), &s)?;
    let (init_reads, init_writes) = acc.vector_counts();
    snap(&acc, 0, &mut snapshots);

    let mut rp: i64 = 0;
    while termination.is_none() {
        let (r0, w0) = acc.vector_counts();
        let p1 = acc.run_stage(&stage_ops(mode, Stage::Phase1), &s)?;
        s.alpha = alpha_of(rz, take(&p1, ModuleId::M2))?;
        let p2 = acc.run_stage(&stage_ops(mode, Stage::Phase2), &s)?;
        rr = take(&p2, ModuleId::M8);
        let rz_new = take(&p2, ModuleId::M6);
        let iteration = (rp + 1) as u64;
        trace.push(TracePoint { iteration, rr });
        termination = should_terminate(rr, rp, cfg);
        let last = termination.is_some();
        if !last && rz_new == 0.0 {
            return Err(SolverError::Breakdown("rz = 0 before convergence".into()));
        }
        let end = iteration_stages(rp, last, cfg.early_exit)[2];
        let beta = if end == Stage::Tail {
            Some(beta_of(rz, rz_new)?)
        } else {
            None
        };
        if let Some(b) = beta {
            s.beta = b;
        }
        acc.run_stage(&stage_ops(mode, end), &s)?;
        used.push((iteration, s.alpha, beta));
        rz = rz_new;
        let (r1, w1) = acc.vector_counts();
        reads.push(r1 - r0);
        writes.push(w1 - w0);
        off_home.push(acc.fsms_off_home());
        snap(&acc, iteration, &mut snapshots);
        rp += 1;
    }
    acc.finish()?;

    let termination = termination.expect("loop exits on a decision");
    let iterations = rp as u64;
    let x = acc.snapshot(VectorId::X).expect("x is memory-backed");
    let mut transcripts = BTreeMap::new();
    let mut transcript_dump = None;
    if cfg.record_transcripts {
        let g = acc.graph();
        for name in g.channel_names() {
            let id = g.channel_id(&name).expect("listed channel");
            transcripts.insert(name, g.transcript(id));
        }
        transcript_dump = Some(g.transcript_dump());
    }
    let per_iter = acc.estimated_iteration_cycles();
    let report = SolverReport {
        solver: SolverKind::Streamed,
        scheme: cfg.scheme,
        schedule_mode: Some(mode),
        n: a.n(),
        nnz: a.nnz(),
        converged: termination == Termination::Converged,
        termination,
        iterations,
        final_rr: rr,
        residual_trace: trace,
        reads_per_iteration: steady(&reads),
        writes_per_iteration: steady(&writes),
        vector_reads: Some(reads),
        vector_writes: Some(writes),
        init_reads: Some(init_reads),
        init_writes: Some(init_writes),
        instruction_count: Some(acc.instruction_log().len() as u64),
        memory_responses: Some(acc.responses_seen()),
        padding_count: Some(acc.schedule().padding as u64),
        estimated_cycles: Some(per_iter * (iterations + 1)),
        comparison: None,
    };
    Ok(SolveArtifacts {
        x,
        report,
        snapshots,
        instruction_log: acc.log.clone(),
        fsms_off_home: off_home,
        transcripts,
        transcript_dump,
        scalars: used,
    })
}

//! The two-FIFO join: M5 forwards `r` at once on a fast FIFO and emits `z`
//! through its divide pipeline on a slow FIFO; M6 pops both jointly.

use std::sync::Arc;

use parking_lot::Mutex;

use crate::isa::InstCmp;
use crate::runtime::{
    BlockedOn, Graph, PopOutcome, Port, Process, PushOutcome, Receiver, RunOutcome, RuntimeError, SchedulerKind,
    Sender, Step,
};

use super::fsm::{Fsm, Transition};
use super::{DataPorts, Kernel, ModuleId, StreamRoute, StreamUnit};

pub const FAST: &str = "M5->M6:r";
pub const SLOW: &str = "M5->M6:z";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JoinParams {
    /// M5 pipeline depth.
    pub latency: usize,
    pub fast_depth: usize,
    pub slow_depth: usize,
    pub len: usize,
}

impl JoinParams {
    pub fn new(latency: usize, fast_depth: usize, len: usize) -> Self {
        Self {
            latency,
            fast_depth,
            slow_depth: 2,
            len,
        }
    }
}

struct Feed {
    name: String,
    tx: Sender<f64>,
    data: Vec<f64>,
    next: usize,
}

impl Process for Feed {
    fn name(&self) -> &str {
        &self.name
    }

    fn ports(&self) -> Vec<Port> {
        vec![Port::output(&self.tx)]
    }

    fn step(&mut self) -> Result<Step, RuntimeError> {
        let Some(&v) = self.data.get(self.next) else {
            self.tx.close();
            return Ok(Step::Done);
        };
        match self.tx.try_push(v)? {
            PushOutcome::Accepted => {
                self.next += 1;
                Ok(Step::Progress)
            }
            PushOutcome::WouldBlock => Ok(Step::Blocked(BlockedOn::push(self.tx.id()))),
        }
    }
}

struct Collect {
    rx: Receiver<f64>,
    got: Arc<Mutex<Vec<f64>>>,
}

impl Process for Collect {
    fn name(&self) -> &str {
        "ctrl"
    }

    fn ports(&self) -> Vec<Port> {
        vec![Port::input(&self.rx)]
    }

    fn step(&mut self) -> Result<Step, RuntimeError> {
        match self.rx.try_pop() {
            PopOutcome::Item(v) => {
                self.got.lock().push(v);
                Ok(Step::Done)
            }
            PopOutcome::WouldBlock => Ok(Step::Blocked(BlockedOn::pop(self.rx.id()))),
            PopOutcome::EndOfStream => Ok(Step::Done),
        }
    }
}

/// Result of one run of the join topology.
#[derive(Debug, Clone, PartialEq)]
pub struct JoinRun {
    pub outcome: RunOutcome,
    /// Dot product reported by M6, when it finished.
    pub dot: Option<f64>,
}

fn single<R: Clone>(name: &str, q: ModuleId, route: R) -> Fsm<ModuleId, R> {
    Fsm::new(
        name,
        0,
        0,
        vec![Transition {
            from: 0,
            key: q,
            to: 0,
            route,
        }],
    )
}

/// Builds the join with `m` and `r` streams of `len` elements and runs it.
pub fn run_join(
    params: JoinParams,
    m: &[f64],
    r: &[f64],
    scheduler: SchedulerKind,
    step_budget: u64,
) -> Result<JoinRun, RuntimeError> {
    let len = params.len;
    if m.len() != len || r.len() != len {
        return Err(RuntimeError::MalformedGraph(format!(
            "join inputs must have {len} elements"
        )));
    }
    let mut g = Graph::new();
    let (m_tx, m_rx) = g.channel::<f64>("VcM->M5:M", 2)?;
    let (r_tx, r_rx) = g.channel::<f64>("M4->M5:r", 2)?;
    let (fast_tx, fast_rx) = g.channel::<f64>(FAST, params.fast_depth)?;
    let (slow_tx, slow_rx) = g.channel::<f64>(SLOW, params.slow_depth)?;
    let (s_tx, s_rx) = g.channel::<f64>("M6->ctrl:s", 2)?;
    let (i5_tx, i5_rx) = g.host_input::<InstCmp>("ctrl->M5", 1)?;
    let (i6_tx, i6_rx) = g.host_input::<InstCmp>("ctrl->M6", 1)?;
    let inst = |q: ModuleId| InstCmp {
        len: len as u32,
        alpha: 0.0,
        q_id: q.q_id(),
    };
    i5_tx.try_push(inst(ModuleId::M6))?;
    i5_tx.close();
    i6_tx.try_push(inst(ModuleId::M6))?;
    i6_tx.close();

    g.add(Box::new(Feed {
        name: "VcM".into(),
        tx: m_tx,
        data: m.to_vec(),
        next: 0,
    }));
    g.add(Box::new(Feed {
        name: "M4".into(),
        tx: r_tx,
        data: r.to_vec(),
        next: 0,
    }));
    let m5_route = StreamRoute {
        operands: vec!["VcM->M5:M".into(), "M4->M5:r".into()],
        results: vec![SLOW.into()],
        forwards: vec![FAST.into()],
    };
    g.add(Box::new(StreamUnit::new(
        "M5",
        Kernel::Divide,
        i5_rx,
        DataPorts {
            ins: vec![m_rx, r_rx],
            outs: vec![slow_tx, fast_tx],
        },
        None,
        single("M5", ModuleId::M6, m5_route),
        params.latency,
        8,
    )));
    let m6_route = StreamRoute {
        operands: vec![SLOW.into(), FAST.into()],
        results: vec![],
        forwards: vec![],
    };
    g.add(Box::new(StreamUnit::new(
        "M6",
        Kernel::Dot,
        i6_rx,
        DataPorts {
            ins: vec![slow_rx, fast_rx],
            outs: vec![],
        },
        Some(s_tx),
        single("M6", ModuleId::M6, m6_route),
        0,
        8,
    )));
    let got = Arc::new(Mutex::new(Vec::new()));
    g.add(Box::new(Collect {
        rx: s_rx,
        got: got.clone(),
    }));
    let outcome = g.run(scheduler, step_budget)?;
    let dot = got.lock().first().copied();
    Ok(JoinRun { outcome, dot })
}

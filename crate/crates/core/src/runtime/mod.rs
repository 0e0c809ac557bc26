//! Bounded-FIFO dataflow substrate.
//!
//! A [`Graph`] owns channels and processes. Processes are stepped either by a
//! single-threaded round-robin scheduler or by one thread per process; in both
//! cases the only synchronisation between processes is channel traffic, so the
//! element sequence on every channel is the same under either scheduler.

mod fifo;
pub mod memory;
pub mod perf;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Condvar, Mutex};
use serde::Serialize;
use thiserror::Error;

pub use fifo::{ChannelId, ChannelProbe, Element, Fifo, PopOutcome, PushOutcome, Receiver, Sender};
pub use memory::MemoryError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuntimeError {
    #[error("malformed graph: {0}")]
    MalformedGraph(String),
    #[error("push after stream complete on channel {channel}")]
    PushAfterClose { channel: String },
    #[error("{module}: {message}")]
    Module { module: String, message: String },
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelOp {
    Push,
    Pop,
}

impl fmt::Display for ChannelOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelOp::Push => "push",
            ChannelOp::Pop => "pop",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockedOn {
    pub channel: ChannelId,
    pub op: ChannelOp,
}

impl BlockedOn {
    pub fn push(channel: ChannelId) -> Self {
        Self {
            channel,
            op: ChannelOp::Push,
        }
    }
    pub fn pop(channel: ChannelId) -> Self {
        Self {
            channel,
            op: ChannelOp::Pop,
        }
    }
}

/// Result of one scheduling step of a process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Progress,
    Blocked(BlockedOn),
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    In,
    Out,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Port {
    pub channel: ChannelId,
    pub dir: Direction,
}

impl Port {
    pub fn input<T: Element>(rx: &Receiver<T>) -> Self {
        Self {
            channel: rx.id(),
            dir: Direction::In,
        }
    }
    pub fn output<T: Element>(tx: &Sender<T>) -> Self {
        Self {
            channel: tx.id(),
            dir: Direction::Out,
        }
    }
}

/// A module task. `step` must attempt a bounded amount of work and never block.
pub trait Process: Send {
    fn name(&self) -> &str;
    fn ports(&self) -> Vec<Port>;
    fn step(&mut self) -> Result<Step, RuntimeError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerKind {
    /// Round-robin, one step per process per round.
    #[default]
    Deterministic,
    /// One thread per process.
    Concurrent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockedModule {
    pub module: String,
    pub channel: ChannelId,
    pub channel_name: String,
    pub op: ChannelOp,
}

impl fmt::Display for BlockedModule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} {}", self.module, self.op, self.channel_name)
    }
}

/// Renders a blocked set as `{A: push x, B: pop y}`.
pub fn format_blocked(set: &[BlockedModule]) -> String {
    let items: Vec<String> = set.iter().map(|b| b.to_string()).collect();
    format!("{{{}}}", items.join(", "))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunOutcome {
    Completed,
    /// No process can progress and none is waiting for host input.
    Deadlock {
        blocked: Vec<BlockedModule>,
    },
    /// No process can progress, but some are waiting on channels the host feeds.
    Idle {
        blocked: Vec<BlockedModule>,
    },
    BudgetExhausted,
}

/// Per-process status at the end of a scheduling round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProcessStatus {
    Runnable,
    Blocked(BlockedModule),
    Done,
}

/// Returns the blocked set when nothing is runnable and something is unfinished.
pub fn detect_deadlock(statuses: &[ProcessStatus]) -> Option<Vec<BlockedModule>> {
    if statuses.contains(&ProcessStatus::Runnable) {
        return None;
    }
    let blocked: Vec<BlockedModule> = statuses
        .iter()
        .filter_map(|s| match s {
            ProcessStatus::Blocked(b) => Some(b.clone()),
            _ => None,
        })
        .collect();
    if blocked.is_empty() {
        None
    } else {
        Some(blocked)
    }
}

#[derive(Default)]
pub struct Graph {
    channels: Vec<Arc<dyn ChannelProbe>>,
    host_producer: HashSet<ChannelId>,
    host_consumer: HashSet<ChannelId>,
    processes: Vec<Box<dyn Process>>,
    done: Vec<bool>,
    validated: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn channel<T: Element>(
        &mut self,
        name: impl Into<String>,
        depth: usize,
    ) -> Result<(Sender<T>, Receiver<T>), RuntimeError> {
        let name = name.into();
        if depth == 0 {
            return Err(RuntimeError::MalformedGraph(format!("channel {name} has depth 0")));
        }
        let id = ChannelId(self.channels.len());
        let fifo = Fifo::new(id, name, depth);
        self.channels.push(fifo.probe());
        self.validated = false;
        Ok((Sender(fifo.clone()), Receiver(fifo)))
    }

    /// A channel whose producer is the host driver.
    pub fn host_input<T: Element>(
        &mut self,
        name: impl Into<String>,
        depth: usize,
    ) -> Result<(Sender<T>, Receiver<T>), RuntimeError> {
        let (tx, rx) = self.channel(name, depth)?;
        self.host_producer.insert(tx.id());
        Ok((tx, rx))
    }

    /// A channel whose consumer is the host driver.
    pub fn host_output<T: Element>(
        &mut self,
        name: impl Into<String>,
        depth: usize,
    ) -> Result<(Sender<T>, Receiver<T>), RuntimeError> {
        let (tx, rx) = self.channel(name, depth)?;
        self.host_consumer.insert(tx.id());
        Ok((tx, rx))
    }

    pub fn add(&mut self, p: Box<dyn Process>) -> usize {
        self.processes.push(p);
        self.done.push(false);
        self.validated = false;
        self.processes.len() - 1
    }

    pub fn process_names(&self) -> Vec<String> {
        self.processes.iter().map(|p| p.name().to_string()).collect()
    }

    pub fn channel_names(&self) -> Vec<String> {
        self.channels.iter().map(|c| c.name().to_string()).collect()
    }

    pub fn channel_id(&self, name: &str) -> Option<ChannelId> {
        self.channels.iter().find(|c| c.name() == name).map(|c| c.id())
    }

    pub fn channel_name(&self, id: ChannelId) -> &str {
        self.channels[id.0].name()
    }

    pub fn channel_depth(&self, id: ChannelId) -> usize {
        self.channels[id.0].depth()
    }

    pub fn occupancy(&self, id: ChannelId) -> usize {
        self.channels[id.0].occupancy()
    }

    pub fn enable_transcripts(&self) {
        for c in &self.channels {
            c.enable_transcript();
        }
    }

    pub fn transcript(&self, id: ChannelId) -> Vec<String> {
        self.channels[id.0].transcript()
    }

    /// All recorded transcript lines, channels in id order, each channel
    /// introduced by a `# id name` line.
    pub fn transcript_dump(&self) -> String {
        let mut out = String::new();
        for (id, c) in self.channels.iter().enumerate() {
            let lines = c.transcript();
            if lines.is_empty() {
                continue;
            }
            out.push_str(&format!("# {id} {}\n", c.name()));
            for line in lines {
                out.push_str(&line);
                out.push('\n');
            }
        }
        out
    }

    /// Checks that every channel has exactly one producer and one consumer.
    pub fn validate(&self) -> Result<(), RuntimeError> {
        let mut producers: BTreeMap<ChannelId, Vec<String>> = BTreeMap::new();
        let mut consumers: BTreeMap<ChannelId, Vec<String>> = BTreeMap::new();
        for id in &self.host_producer {
            producers.entry(*id).or_default().push("host".into());
        }
        for id in &self.host_consumer {
            consumers.entry(*id).or_default().push("host".into());
        }
        for p in &self.processes {
            for port in p.ports() {
                if port.channel.0 >= self.channels.len() {
                    return Err(RuntimeError::MalformedGraph(format!(
                        "{} uses unknown channel {}",
                        p.name(),
                        port.channel
                    )));
                }
                let map = match port.dir {
                    Direction::In => &mut consumers,
                    Direction::Out => &mut producers,
                };
                map.entry(port.channel).or_default().push(p.name().to_string());
            }
        }
        for c in &self.channels {
            let prod = producers.get(&c.id()).map_or(&[][..], |v| v.as_slice());
            let cons = consumers.get(&c.id()).map_or(&[][..], |v| v.as_slice());
            if prod.len() != 1 || cons.len() != 1 {
                return Err(RuntimeError::MalformedGraph(format!(
                    "channel {} has producers {:?} and consumers {:?}",
                    c.name(),
                    prod,
                    cons
                )));
            }
        }
        Ok(())
    }

    fn blocked_module(&self, module: &str, b: BlockedOn) -> BlockedModule {
        BlockedModule {
            module: module.to_string(),
            channel: b.channel,
            channel_name: self.channel_name(b.channel).to_string(),
            op: b.op,
        }
    }

    /// Process index at each end of every channel; `None` is the host.
    fn endpoints(&self) -> (Vec<Option<usize>>, Vec<Option<usize>>) {
        let mut prod = vec![None; self.channels.len()];
        let mut cons = vec![None; self.channels.len()];
        for (i, p) in self.processes.iter().enumerate() {
            for port in p.ports() {
                match port.dir {
                    Direction::In => cons[port.channel.0] = Some(i),
                    Direction::Out => prod[port.channel.0] = Some(i),
                }
            }
        }
        (prod, cons)
    }

    /// Members of wait-for cycles among `blocked`: a module blocked on a push
    /// waits for the channel's consumer, one blocked on a pop for its producer.
    pub fn wait_cycle(&self, blocked: &[BlockedModule]) -> Vec<BlockedModule> {
        let (prod, cons) = self.endpoints();
        let index: HashMap<&str, usize> = self.processes.iter().enumerate().map(|(i, p)| (p.name(), i)).collect();
        let mut waits: Vec<Option<usize>> = vec![None; self.processes.len()];
        for b in blocked {
            if let Some(&i) = index.get(b.module.as_str()) {
                waits[i] = match b.op {
                    ChannelOp::Push => cons[b.channel.0],
                    ChannelOp::Pop => prod[b.channel.0],
                };
            }
        }
        let mut on_cycle = vec![false; waits.len()];
        for start in 0..waits.len() {
            let mut seen = Vec::new();
            let mut cur = Some(start);
            while let Some(c) = cur {
                if let Some(pos) = seen.iter().position(|&s| s == c) {
                    for &m in &seen[pos..] {
                        on_cycle[m] = true;
                    }
                    break;
                }
                if seen.len() > waits.len() {
                    break;
                }
                seen.push(c);
                cur = waits[c];
            }
        }
        blocked
            .iter()
            .filter(|b| index.get(b.module.as_str()).is_some_and(|&i| on_cycle[i]))
            .cloned()
            .collect()
    }

    fn classify(&self, blocked: Vec<BlockedModule>) -> RunOutcome {
        let cycle = self.wait_cycle(&blocked);
        if !cycle.is_empty() {
            return RunOutcome::Deadlock { blocked: cycle };
        }
        let waits_on_host = blocked
            .iter()
            .any(|b| b.op == ChannelOp::Pop && self.host_producer.contains(&b.channel));
        if waits_on_host {
            RunOutcome::Idle { blocked }
        } else {
            RunOutcome::Deadlock { blocked }
        }
    }

    /// Steps processes until all are done, nothing can progress, or `step_budget`
    /// process steps have been taken.
    pub fn run(&mut self, scheduler: SchedulerKind, step_budget: u64) -> Result<RunOutcome, RuntimeError> {
        if !self.validated {
            self.validate()?;
            self.validated = true;
        }
        match scheduler {
            SchedulerKind::Deterministic => self.run_deterministic(step_budget),
            SchedulerKind::Concurrent => self.run_concurrent(step_budget),
        }
    }

    fn run_deterministic(&mut self, step_budget: u64) -> Result<RunOutcome, RuntimeError> {
        let mut steps = 0u64;
        let mut last: Vec<Option<BlockedOn>> = vec![None; self.processes.len()];
        loop {
            if self.done.iter().all(|d| *d) {
                return Ok(RunOutcome::Completed);
            }
            let mut progress = false;
            for (i, p) in self.processes.iter_mut().enumerate() {
                if self.done[i] {
                    continue;
                }
                if steps >= step_budget {
                    return Ok(RunOutcome::BudgetExhausted);
                }
                steps += 1;
                match p.step()? {
                    Step::Progress => {
                        progress = true;
                        last[i] = None;
                    }
                    Step::Done => {
                        progress = true;
                        self.done[i] = true;
                    }
                    Step::Blocked(b) => last[i] = Some(b),
                }
            }
            if !progress {
                let statuses: Vec<ProcessStatus> = (0..self.processes.len())
                    .map(|i| match (self.done[i], last[i]) {
                        (true, _) => ProcessStatus::Done,
                        (false, Some(b)) => ProcessStatus::Blocked(self.blocked_module(self.processes[i].name(), b)),
                        (false, None) => ProcessStatus::Runnable,
                    })
                    .collect();
                return Ok(match detect_deadlock(&statuses) {
                    Some(blocked) => self.classify(blocked),
                    None => RunOutcome::Completed,
                });
            }
        }
    }

    fn run_concurrent(&mut self, step_budget: u64) -> Result<RunOutcome, RuntimeError> {
        enum Stop {
            Quiescent,
            Completed,
            Budget,
            Failed(RuntimeError),
        }
        struct Sync {
            version: u64,
            /// Processes blocked since `version` last changed.
            blocked: usize,
            done: usize,
            stop: Option<Stop>,
        }

        let total = self.processes.len();
        let already_done = self.done.iter().filter(|d| **d).count();
        if already_done == total {
            return Ok(RunOutcome::Completed);
        }
        let sync = Mutex::new(Sync {
            version: 0,
            blocked: 0,
            done: already_done,
            stop: None,
        });
        let cv = Condvar::new();
        let steps = AtomicU64::new(0);
        let last: Mutex<Vec<Option<BlockedOn>>> = Mutex::new(vec![None; total]);
        let done_flags: Mutex<Vec<bool>> = Mutex::new(self.done.clone());

        std::thread::scope(|s| {
            for (i, p) in self.processes.iter_mut().enumerate() {
                if self.done[i] {
                    continue;
                }
                let (sync, cv, steps, last, done_flags) = (&sync, &cv, &steps, &last, &done_flags);
                s.spawn(move || loop {
                    let v = {
                        let st = sync.lock();
                        if st.stop.is_some() {
                            return;
                        }
                        st.version
                    };
                    if steps.fetch_add(1, Ordering::Relaxed) >= step_budget {
                        let mut st = sync.lock();
                        st.stop.get_or_insert(Stop::Budget);
                        cv.notify_all();
                        return;
                    }
                    match p.step() {
                        Err(e) => {
                            let mut st = sync.lock();
                            st.stop.get_or_insert(Stop::Failed(e));
                            cv.notify_all();
                            return;
                        }
                        Ok(Step::Progress) => {
                            last.lock()[i] = None;
                            let mut st = sync.lock();
                            st.version += 1;
                            st.blocked = 0;
                            cv.notify_all();
                        }
                        Ok(Step::Done) => {
                            done_flags.lock()[i] = true;
                            let mut st = sync.lock();
                            st.version += 1;
                            st.blocked = 0;
                            st.done += 1;
                            if st.done == total {
                                st.stop.get_or_insert(Stop::Completed);
                            }
                            cv.notify_all();
                            return;
                        }
                        Ok(Step::Blocked(b)) => {
                            last.lock()[i] = Some(b);
                            let mut st = sync.lock();
                            if st.version != v {
                                continue;
                            }
                            st.blocked += 1;
                            if st.blocked + st.done == total {
                                st.stop.get_or_insert(Stop::Quiescent);
                                cv.notify_all();
                                return;
                            }
                            while st.version == v && st.stop.is_none() {
                                cv.wait(&mut st);
                            }
                            if st.stop.is_some() {
                                return;
                            }
                        }
                    }
                });
            }
        });

        self.done = done_flags.into_inner();
        let last = last.into_inner();
        match sync.into_inner().stop {
            Some(Stop::Failed(e)) => Err(e),
            Some(Stop::Budget) => Ok(RunOutcome::BudgetExhausted),
            Some(Stop::Completed) | None => Ok(RunOutcome::Completed),
            Some(Stop::Quiescent) => {
                let blocked: Vec<BlockedModule> = (0..total)
                    .filter(|i| !self.done[*i])
                    .filter_map(|i| last[i].map(|b| self.blocked_module(self.processes[i].name(), b)))
                    .collect();
                Ok(self.classify(blocked))
            }
        }
    }
}

use std::fmt::Debug;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("FSM state mismatch: {fsm} in state S{state} has no transition for {key}")]
pub struct FsmError {
    pub fsm: String,
    pub state: usize,
    pub key: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition<K, R> {
    pub from: usize,
    pub key: K,
    pub to: usize,
    pub route: R,
}

/// Read-only view of an FSM that lives inside a running process.
#[derive(Debug, Clone)]
pub struct FsmProbe {
    name: String,
    state: Arc<AtomicUsize>,
    home: usize,
}

impl FsmProbe {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state(&self) -> usize {
        self.state.load(Ordering::Acquire)
    }

    pub fn at_home(&self) -> bool {
        self.state() == self.home
    }
}

/// Table-driven scheduling FSM. Each instruction selects the transition
/// leaving the current state whose key matches, and yields its routing.
#[derive(Debug)]
pub struct Fsm<K, R> {
    name: String,
    state: Arc<AtomicUsize>,
    home: usize,
    transitions: Vec<Transition<K, R>>,
}

impl<K: PartialEq + Debug, R: Clone> Fsm<K, R> {
    pub fn new(name: impl Into<String>, start: usize, home: usize, transitions: Vec<Transition<K, R>>) -> Self {
        Self {
            name: name.into(),
            state: Arc::new(AtomicUsize::new(start)),
            home,
            transitions,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state(&self) -> usize {
        self.state.load(Ordering::Acquire)
    }

    /// True when back at the state each iteration starts from.
    pub fn at_home(&self) -> bool {
        self.state() == self.home
    }

    pub fn probe(&self) -> FsmProbe {
        FsmProbe {
            name: self.name.clone(),
            state: Arc::clone(&self.state),
            home: self.home,
        }
    }

    pub fn advance(&mut self, key: &K) -> Result<R, FsmError> {
        let state = self.state();
        let t = self
            .transitions
            .iter()
            .find(|t| t.from == state && &t.key == key)
            .ok_or_else(|| FsmError {
                fsm: self.name.clone(),
                state,
                key: format!("{key:?}"),
            })?;
        self.state.store(t.to, Ordering::Release);
        Ok(t.route.clone())
    }
}

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use parking_lot::Mutex;

use super::RuntimeError;

/// Index of a channel inside its graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub struct ChannelId(pub usize);

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Anything that can travel through a channel.
pub trait Element: Send + 'static {
    /// Payload rendering used by channel transcripts.
    fn transcript_bits(&self) -> String;
}

impl Element for f64 {
    fn transcript_bits(&self) -> String {
        format!("{:016x}", self.to_bits())
    }
}

impl Element for crate::isa::InstVCtrl {
    fn transcript_bits(&self) -> String {
        self.to_string()
    }
}

impl Element for crate::isa::InstCmp {
    fn transcript_bits(&self) -> String {
        self.to_string()
    }
}

impl Element for crate::isa::InstRdWr {
    fn transcript_bits(&self) -> String {
        self.to_string()
    }
}

impl Element for crate::isa::MemResponse {
    fn transcript_bits(&self) -> String {
        format!("RESP ch={} {:?} len={}", self.channel, self.op, self.len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PushOutcome {
    Accepted,
    WouldBlock,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PopOutcome<T> {
    Item(T),
    WouldBlock,
    EndOfStream,
}

struct State<T> {
    queue: VecDeque<T>,
    closed: bool,
    pushed: u64,
    high_water: usize,
    transcript: Option<Vec<String>>,
}

struct Shared<T> {
    id: ChannelId,
    name: String,
    depth: usize,
    state: Mutex<State<T>>,
}

/// Bounded FIFO. Cloning yields another handle to the same queue.
pub struct Fifo<T> {
    shared: Arc<Shared<T>>,
}

impl<T> Clone for Fifo<T> {
    fn clone(&self) -> Self {
        Self {
            shared: Arc::clone(&self.shared),
        }
    }
}

impl<T: Element> Fifo<T> {
    /// `depth` must be at least 1.
    pub fn new(id: ChannelId, name: impl Into<String>, depth: usize) -> Self {
        assert!(depth >= 1, "FIFO depth must be at least 1");
        Self {
            shared: Arc::new(Shared {
                id,
                name: name.into(),
                depth,
                state: Mutex::new(State {
                    queue: VecDeque::with_capacity(depth.min(1024)),
                    closed: false,
                    pushed: 0,
                    high_water: 0,
                    transcript: None,
                }),
            }),
        }
    }

    pub fn id(&self) -> ChannelId {
        self.shared.id
    }

    pub fn name(&self) -> &str {
        &self.shared.name
    }

    pub fn depth(&self) -> usize {
        self.shared.depth
    }

    pub fn len(&self) -> usize {
        self.shared.state.lock().queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn has_room(&self) -> bool {
        self.len() < self.shared.depth
    }

    pub fn is_closed(&self) -> bool {
        self.shared.state.lock().closed
    }

    pub fn high_water(&self) -> usize {
        self.shared.state.lock().high_water
    }

    pub fn try_push(&self, e: T) -> Result<PushOutcome, RuntimeError> {
        let mut st = self.shared.state.lock();
        if st.closed {
            return Err(RuntimeError::PushAfterClose {
                channel: self.shared.name.clone(),
            });
        }
        if st.queue.len() >= self.shared.depth {
            return Ok(PushOutcome::WouldBlock);
        }
        let seq = st.pushed;
        if let Some(t) = st.transcript.as_mut() {
            t.push(format!("{} {} {}", self.shared.id.0, seq, e.transcript_bits()));
        }
        st.queue.push_back(e);
        st.pushed += 1;
        st.high_water = st.high_water.max(st.queue.len());
        Ok(PushOutcome::Accepted)
    }

    pub fn try_pop(&self) -> PopOutcome<T> {
        let mut st = self.shared.state.lock();
        match st.queue.pop_front() {
            Some(e) => PopOutcome::Item(e),
            None if st.closed => PopOutcome::EndOfStream,
            None => PopOutcome::WouldBlock,
        }
    }

    /// Marks the stream complete. Queued elements can still be popped.
    pub fn close(&self) {
        self.shared.state.lock().closed = true;
    }

    pub fn enable_transcript(&self) {
        let mut st = self.shared.state.lock();
        if st.transcript.is_none() {
            st.transcript = Some(Vec::new());
        }
    }

    pub fn transcript(&self) -> Vec<String> {
        self.shared.state.lock().transcript.clone().unwrap_or_default()
    }

    pub fn pushed(&self) -> u64 {
        self.shared.state.lock().pushed
    }
}

impl<T: Element + Clone> Fifo<T> {
    pub fn peek(&self) -> Option<T> {
        self.shared.state.lock().queue.front().cloned()
    }
}

/// Type-erased view of a channel used by graphs for validation and dumps.
pub trait ChannelProbe: Send + Sync {
    fn id(&self) -> ChannelId;
    fn name(&self) -> &str;
    fn depth(&self) -> usize;
    fn occupancy(&self) -> usize;
    fn enable_transcript(&self);
    fn transcript(&self) -> Vec<String>;
}

impl<T: Element> ChannelProbe for Shared<T> {
    fn id(&self) -> ChannelId {
        self.id
    }
    fn name(&self) -> &str {
        &self.name
    }
    fn depth(&self) -> usize {
        self.depth
    }
    fn occupancy(&self) -> usize {
        self.state.lock().queue.len()
    }
    fn enable_transcript(&self) {
        let mut st = self.state.lock();
        if st.transcript.is_none() {
            st.transcript = Some(Vec::new());
        }
    }
    fn transcript(&self) -> Vec<String> {
        self.state.lock().transcript.clone().unwrap_or_default()
    }
}

impl<T: Element> Fifo<T> {
    pub(crate) fn probe(&self) -> Arc<dyn ChannelProbe> {
        self.shared.clone()
    }
}

/// Producer end of a channel.
pub struct Sender<T>(pub(crate) Fifo<T>);

/// Consumer end of a channel.
pub struct Receiver<T>(pub(crate) Fifo<T>);

impl<T: Element> Sender<T> {
    pub fn id(&self) -> ChannelId {
        self.0.id()
    }
    pub fn name(&self) -> &str {
        self.0.name()
    }
    pub fn has_room(&self) -> bool {
        self.0.has_room()
    }
    pub fn try_push(&self, e: T) -> Result<PushOutcome, RuntimeError> {
        self.0.try_push(e)
    }
    pub fn close(&self) {
        self.0.close()
    }
    pub fn fifo(&self) -> &Fifo<T> {
        &self.0
    }
}

impl<T: Element> Receiver<T> {
    pub fn id(&self) -> ChannelId {
        self.0.id()
    }
    pub fn name(&self) -> &str {
        self.0.name()
    }
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
    pub fn len(&self) -> usize {
        self.0.len()
    }
    pub fn try_pop(&self) -> PopOutcome<T> {
        self.0.try_pop()
    }
    pub fn fifo(&self) -> &Fifo<T> {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::VecDeque;

    fn fifo(depth: usize) -> Fifo<f64> {
        Fifo::new(ChannelId(0), "t", depth)
    }

    #[test]
    fn capacity_bound() {
        let f = fifo(2);
        assert_eq!(f.try_push(1.0).unwrap(), PushOutcome::Accepted);
        assert_eq!(f.try_push(2.0).unwrap(), PushOutcome::Accepted);
        assert_eq!(f.try_push(3.0).unwrap(), PushOutcome::WouldBlock);
        assert_eq!(f.len(), 2);
    }

    #[test]
    fn order_and_end_of_stream() {
        let f = fifo(2);
        assert_eq!(f.try_pop(), PopOutcome::WouldBlock);
        f.try_push(1.0).unwrap();
        f.try_push(2.0).unwrap();
        assert_eq!(f.try_pop(), PopOutcome::Item(1.0));
        assert_eq!(f.try_pop(), PopOutcome::Item(2.0));
        assert_eq!(f.try_pop(), PopOutcome::WouldBlock);
        f.close();
        assert_eq!(f.try_pop(), PopOutcome::EndOfStream);
        assert!(matches!(f.try_push(3.0), Err(RuntimeError::PushAfterClose { .. })));
    }

    #[test]
    fn closed_channel_drains_before_end() {
        let f = fifo(4);
        f.try_push(7.0).unwrap();
        f.close();
        assert_eq!(f.try_pop(), PopOutcome::Item(7.0));
        assert_eq!(f.try_pop(), PopOutcome::EndOfStream);
    }

    #[test]
    fn transcript_lines() {
        let f = Fifo::new(ChannelId(3), "t", 4);
        f.enable_transcript();
        f.try_push(1.0f64).unwrap();
        f.try_push(-0.0f64).unwrap();
        assert_eq!(f.transcript(), vec!["3 0 3ff0000000000000", "3 1 8000000000000000"]);
    }

    proptest! {
        // Random interleavings of push/pop against a VecDeque model.
        #[test]
        fn matches_queue_model(
            depth in 1usize..16,
            ops in proptest::collection::vec((any::<bool>(), any::<f64>()), 10_000),
        ) {
            let f = fifo(depth);
            let mut model = VecDeque::new();
            for (push, v) in ops {
                if push {
                    let out = f.try_push(v).unwrap();
                    if model.len() < depth {
                        prop_assert_eq!(out, PushOutcome::Accepted);
                        model.push_back(v);
                    } else {
                        prop_assert_eq!(out, PushOutcome::WouldBlock);
                    }
                } else {
                    match (f.try_pop(), model.pop_front()) {
                        (PopOutcome::Item(a), Some(b)) => prop_assert_eq!(a.to_bits(), b.to_bits()),
                        (PopOutcome::WouldBlock, None) => {}
                        (got, want) => prop_assert!(false, "got {:?}, model {:?}", got, want),
                    }
                }
                prop_assert!(f.len() <= depth);
            }
        }
    }
}

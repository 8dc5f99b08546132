use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

/// Event kinds in tie-break order: simultaneous events are processed
/// A2F arrivals first, then FFN completions, F2A arrivals, attention completions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    A2fArrival,
    FfnDone,
    F2aArrival,
    AttentionDone,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::A2fArrival => "a2f_arrival",
            EventKind::FfnDone => "ffn_done",
            EventKind::F2aArrival => "f2a_arrival",
            EventKind::AttentionDone => "attention_done",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub wave: u8,
    /// Attention instance; zero for FFN completions.
    pub instance: u32,
}

impl Event {
    fn key(&self) -> (EventKind, u8, u32) {
        (self.kind, self.wave, self.instance)
    }
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then_with(|| self.key().cmp(&other.key()))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Min-ordered future event list.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<std::cmp::Reverse<Event>>,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, event: Event) {
        debug_assert!(event.time.is_finite());
        self.heap.push(std::cmp::Reverse(event));
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop().map(|r| r.0)
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|r| r.0.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

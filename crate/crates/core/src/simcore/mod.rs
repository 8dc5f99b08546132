//! Discrete-event simulator of one rA-1F bundle.
//!
//! Two waves (microbatch groups) are kept in flight. Each wave cycles through
//! `Attention -> A2F -> WaitingForFfn -> Ffn -> F2A -> WaitingForAttention`.
//! All `r` attention instances of a wave must deliver their activations before
//! the FFN server may start it, and the FFN server holds one wave at a time.
//! While the FFN works on one wave the attention instances work on the other.
//! Completed requests leave their slot at the end of the attention step that
//! emitted their last token; vacated slots are refilled in FCFS order when the
//! wave leaves the FFN.

mod engine;
mod event;
pub mod verify;
mod workload;

use std::fmt;

use thiserror::Error;

pub use engine::{run, run_with_requests};
pub use event::{Event, EventKind, EventQueue};
pub use workload::{build_workload, draw_requests, Request};

use crate::model::ModelError;

/// Number of waves kept in flight.
pub const NUM_WAVES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaveState {
    Attention,
    A2f,
    WaitingForFfn,
    Ffn,
    F2a,
    WaitingForAttention,
    /// No active slot is left and the buffer is empty.
    Retired,
}

impl WaveState {
    /// Whether `self -> next` is an edge of the wave state machine.
    pub fn can_transition_to(self, next: WaveState) -> bool {
        use WaveState::*;
        matches!(
            (self, next),
            (Attention, A2f)
                | (A2f, WaitingForFfn)
                | (WaitingForFfn, Ffn)
                | (Ffn, F2a)
                | (F2a, WaitingForAttention)
                | (WaitingForAttention, Attention)
                | (F2a, Retired)
        )
    }
}

impl fmt::Display for WaveState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// When a run ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopRule {
    /// Stop once this many requests have completed (all events at the
    /// stopping instant are still processed).
    TotalCompletions(u64),
    /// Run until every request has completed.
    Drain,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Record every state change as a [`TraceRecord`].
    pub trace: bool,
    /// Recompute token loads from scratch at every attention start and fail
    /// on mismatch with the incrementally maintained value.
    pub check_invariants: bool,
    /// Record prefill and decode load of the first `probe_steps` attention
    /// steps of every (wave, instance) lane.
    pub probe_steps: usize,
}

/// Busy intervals of one resource.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BusyLog {
    first_dispatch: Option<f64>,
    intervals: Vec<(f64, f64)>,
    busy_total: f64,
    idle_total: f64,
}

impl BusyLog {
    pub(crate) fn record(&mut self, start: f64, end: f64) {
        match self.first_dispatch {
            None => self.first_dispatch = Some(start),
            Some(_) => {
                let prev_end = self.intervals.last().map_or(start, |iv| iv.1);
                self.idle_total += (start - prev_end).max(0.0);
            }
        }
        self.busy_total += end - start;
        self.intervals.push((start, end));
    }

    pub fn first_dispatch(&self) -> Option<f64> {
        self.first_dispatch
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    /// Busy time over the whole run.
    pub fn busy_total(&self) -> f64 {
        self.busy_total
    }

    /// Gaps between consecutive busy intervals over the whole run.
    pub fn idle_total(&self) -> f64 {
        self.idle_total
    }

    /// Busy time within `[0, t]`.
    pub fn busy_until(&self, t: f64) -> f64 {
        let end = self.intervals.partition_point(|iv| iv.1 <= t);
        let mut busy: f64 = self.intervals[..end].iter().map(|iv| iv.1 - iv.0).sum();
        if let Some(&(s, _)) = self.intervals.get(end) {
            busy += (t - s).max(0.0);
        }
        busy
    }

    /// Idle time within `[first_dispatch, t]`; zero before the first dispatch.
    pub fn idle_until(&self, t: f64) -> f64 {
        match self.first_dispatch {
            Some(start) if t > start => (t - start - self.busy_until(t)).max(0.0),
            _ => 0.0,
        }
    }
}

/// A finished request as it appears in the completion log.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletedRequest {
    pub id: u64,
    pub arrival_index: u64,
    pub wave: u8,
    pub instance: u32,
    pub slot: u32,
    pub prefill_len: u32,
    pub decode_budget: u32,
    pub tokens_emitted: u32,
    pub start_decode_time: f64,
    pub completion_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    AttentionStart,
    AttentionEnd,
    A2fArrival,
    FfnStart,
    FfnEnd,
    F2aArrival,
}

impl fmt::Display for TraceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TraceKind::AttentionStart => "attention_start",
            TraceKind::AttentionEnd => "attention_end",
            TraceKind::A2fArrival => "a2f_arrival",
            TraceKind::FfnStart => "ffn_start",
            TraceKind::FfnEnd => "ffn_end",
            TraceKind::F2aArrival => "f2a_arrival",
        })
    }
}

/// One line of the optional event trace. `instance` is `None` for FFN rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub time: f64,
    pub kind: TraceKind,
    pub wave: u8,
    pub instance: Option<u32>,
}

/// Writes the trace as `time,kind,wave,instance` CSV with a header row.
pub fn write_trace_csv<W: std::io::Write>(mut w: W, trace: &[TraceRecord]) -> std::io::Result<()> {
    writeln!(w, "time,kind,wave,instance")?;
    for rec in trace {
        let inst = rec.instance.map(|i| i.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{}", rec.time, rec.kind, rec.wave, inst)?;
    }
    Ok(())
}

/// Prefill and decode token load of one lane at the start of an attention step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadSample {
    pub prefill: u64,
    pub decode: u64,
}

/// State of the bundle when a run could not make progress.
#[derive(Debug, Clone, PartialEq)]
pub struct FsmSnapshot {
    pub clock: f64,
    pub waves: [WaveState; NUM_WAVES],
    pub ffn_busy_with: Option<u8>,
    pub buffered: usize,
    pub completed: u64,
}

impl fmt::Display for FsmSnapshot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "clock={} waves=[{}, {}] ffn={:?} buffered={} completed={}",
            self.clock, self.waves[0], self.waves[1], self.ffn_busy_with, self.buffered, self.completed
        )
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("workload too small: {have} requests cannot fill both waves ({needed} slots)")]
    InsufficientRequests { have: usize, needed: usize },
    #[error("invalid workload: {0}")]
    InvalidWorkload(String),
    #[error("invalid transition for wave {wave}: {from} -> {to}")]
    InvalidTransition {
        wave: u8,
        from: WaveState,
        to: WaveState,
    },
    #[error("unexpected {kind} for wave {wave} instance {instance}: {detail}")]
    UnexpectedEvent {
        kind: EventKind,
        wave: u8,
        instance: u32,
        detail: &'static str,
    },
    #[error("event queue ran dry before the stop rule fired: {0}")]
    Deadlock(FsmSnapshot),
    #[error("invariant violated: {0}")]
    InvariantViolated(String),
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct SimOutcome {
    /// Completed requests ordered by `(completion_time, instance, slot)`.
    pub completions: Vec<CompletedRequest>,
    /// Final state of every request in the workload.
    pub requests: Vec<Request>,
    pub attention_busy: Vec<BusyLog>,
    pub ffn_busy: BusyLog,
    pub final_clock: f64,
    pub tokens_emitted: u64,
    pub trace: Option<Vec<TraceRecord>>,
    /// `load_probe[wave * r + instance][k]` for the first probed steps.
    pub load_probe: Vec<Vec<LoadSample>>,
}

impl SimOutcome {
    /// Per-instance attention idle time within `[0, t]`.
    pub fn attention_idle_until(&self, t: f64) -> Vec<f64> {
        self.attention_busy.iter().map(|b| b.idle_until(t)).collect()
    }

    pub fn ffn_idle_until(&self, t: f64) -> f64 {
        self.ffn_busy.idle_until(t)
    }
}

use std::collections::VecDeque;

use super::{
    build_workload, BusyLog, CompletedRequest, Event, EventKind, EventQueue, FsmSnapshot,
    LoadSample, Request, RunOptions, SimError, SimOutcome, StopRule, TraceKind, TraceRecord,
    WaveState, NUM_WAVES,
};
use crate::model::{comm_latency, split_round_trip, BundleConfig, LatencyCoefficients, WorkloadSpec};

/// Simulates `config` on a freshly drawn workload of `r * N` requests.
pub fn run(
    config: &BundleConfig,
    coeffs: &LatencyCoefficients,
    spec: &WorkloadSpec,
    stop: StopRule,
    options: &RunOptions,
) -> Result<SimOutcome, SimError> {
    let total = config.r() as usize * spec.n() as usize;
    let requests = build_workload(spec, config, total)?;
    run_with_requests(config, coeffs, requests, stop, options)
}

/// Simulates `config` on an explicit FCFS buffer. Requests are dispatched in
/// slice order and must have pristine state.
pub fn run_with_requests(
    config: &BundleConfig,
    coeffs: &LatencyCoefficients,
    requests: Vec<Request>,
    stop: StopRule,
    options: &RunOptions,
) -> Result<SimOutcome, SimError> {
    let needed = NUM_WAVES * config.r() as usize * config.batch() as usize;
    if requests.len() < needed {
        return Err(SimError::InsufficientRequests {
            have: requests.len(),
            needed,
        });
    }
    if let Some(bad) = requests
        .iter()
        .find(|r| r.decode_budget == 0 || r.tokens_emitted != 0 || r.completion_time.is_some())
    {
        return Err(SimError::InvalidWorkload(format!(
            "request {} is not a fresh request with a positive decode budget",
            bad.id
        )));
    }
    let mut sim = Bundle::new(config, coeffs, requests, options)?;
    sim.run(stop)?;
    Ok(sim.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LaneStatus {
    WaitingForAttention,
    Computing,
    InTransit,
    Arrived,
    Away,
}

/// Slots of one wave on one attention instance.
#[derive(Debug)]
struct Lane {
    slots: Vec<Option<usize>>,
    token_load: u64,
    active: u32,
    status: LaneStatus,
    steps: u64,
}

#[derive(Debug)]
struct Wave {
    state: WaveState,
    computing_left: u32,
    arrived: u32,
    ffn_batch: u64,
}

struct Bundle<'a> {
    coeffs: &'a LatencyCoefficients,
    options: &'a RunOptions,
    r: usize,
    a2f: f64,
    f2a: f64,
    clock: f64,
    queue: EventQueue,
    requests: Vec<Request>,
    next_request: usize,
    lanes: Vec<Lane>,
    waves: [Wave; NUM_WAVES],
    instance_busy: Vec<Option<u8>>,
    instance_ready: Vec<VecDeque<u8>>,
    ffn_busy: Option<u8>,
    ffn_queue: VecDeque<u8>,
    attention_log: Vec<BusyLog>,
    ffn_log: BusyLog,
    completions: Vec<CompletedRequest>,
    completed: u64,
    tokens_emitted: u64,
    trace: Option<Vec<TraceRecord>>,
    probe: Vec<Vec<LoadSample>>,
}

impl<'a> Bundle<'a> {
    fn new(
        config: &BundleConfig,
        coeffs: &'a LatencyCoefficients,
        requests: Vec<Request>,
        options: &'a RunOptions,
    ) -> Result<Self, SimError> {
        let r = config.r() as usize;
        let batch = config.batch() as usize;
        let (a2f, f2a) = split_round_trip(comm_latency(coeffs, batch as f64)?);
        let lanes = (0..NUM_WAVES * r)
            .map(|_| Lane {
                slots: vec![None; batch],
                token_load: 0,
                active: 0,
                status: LaneStatus::WaitingForAttention,
                steps: 0,
            })
            .collect();
        let wave = || Wave {
            state: WaveState::WaitingForAttention,
            computing_left: r as u32,
            arrived: 0,
            ffn_batch: 0,
        };
        let mut sim = Bundle {
            coeffs,
            options,
            r,
            a2f,
            f2a,
            clock: 0.0,
            queue: EventQueue::new(),
            requests,
            next_request: 0,
            lanes,
            waves: [wave(), wave()],
            instance_busy: vec![None; r],
            instance_ready: (0..r).map(|_| (0..NUM_WAVES as u8).collect()).collect(),
            ffn_busy: None,
            ffn_queue: VecDeque::new(),
            attention_log: vec![BusyLog::default(); r],
            ffn_log: BusyLog::default(),
            completions: Vec::new(),
            completed: 0,
            tokens_emitted: 0,
            trace: options.trace.then(Vec::new),
            probe: vec![Vec::new(); NUM_WAVES * r],
        };
        for wave in 0..NUM_WAVES as u8 {
            sim.refill_wave(wave);
        }
        Ok(sim)
    }

    fn lane_index(&self, wave: u8, instance: u32) -> usize {
        wave as usize * self.r + instance as usize
    }

    fn transition(&mut self, wave: u8, to: WaveState) -> Result<(), SimError> {
        let from = self.waves[wave as usize].state;
        if !from.can_transition_to(to) {
            return Err(SimError::InvalidTransition { wave, from, to });
        }
        self.waves[wave as usize].state = to;
        Ok(())
    }

    fn note(&mut self, kind: TraceKind, wave: u8, instance: Option<u32>) {
        let time = self.clock;
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceRecord {
                time,
                kind,
                wave,
                instance,
            });
        }
    }

    fn snapshot(&self) -> FsmSnapshot {
        FsmSnapshot {
            clock: self.clock,
            waves: [self.waves[0].state, self.waves[1].state],
            ffn_busy_with: self.ffn_busy,
            buffered: self.requests.len() - self.next_request,
            completed: self.completed,
        }
    }

    /// Fills every vacant slot of `wave` from the FCFS buffer, instance by
    /// instance, slot by slot.
    fn refill_wave(&mut self, wave: u8) {
        for instance in 0..self.r as u32 {
            let li = self.lane_index(wave, instance);
            for slot in 0..self.lanes[li].slots.len() {
                if self.lanes[li].slots[slot].is_some() {
                    continue;
                }
                if self.next_request == self.requests.len() {
                    return;
                }
                let idx = self.next_request;
                self.next_request += 1;
                let req = &mut self.requests[idx];
                req.dispatch_time = Some(self.clock);
                let lane = &mut self.lanes[li];
                lane.slots[slot] = Some(idx);
                lane.token_load += req.token_load();
                lane.active += 1;
            }
        }
    }

    fn run(&mut self, stop: StopRule) -> Result<(), SimError> {
        for instance in 0..self.r as u32 {
            self.try_start_attention(instance)?;
        }
        let mut stop_time: Option<f64> = None;
        loop {
            if let Some(t) = stop_time {
                if self.queue.peek_time() != Some(t) {
                    return Ok(());
                }
            }
            let Some(event) = self.queue.pop() else {
                let drained = self.waves.iter().all(|w| w.state == WaveState::Retired);
                return match stop {
                    StopRule::Drain if drained => Ok(()),
                    _ => Err(SimError::Deadlock(self.snapshot())),
                };
            };
            debug_assert!(event.time >= self.clock);
            self.clock = event.time;
            match event.kind {
                EventKind::AttentionDone => self.on_attention_done(event)?,
                EventKind::A2fArrival => self.on_a2f_arrival(event)?,
                EventKind::FfnDone => self.on_ffn_done(event)?,
                EventKind::F2aArrival => self.on_f2a_arrival(event)?,
            }
            if let StopRule::TotalCompletions(n) = stop {
                if stop_time.is_none() && self.completed >= n {
                    stop_time = Some(self.clock);
                }
            }
        }
    }

    fn try_start_attention(&mut self, instance: u32) -> Result<(), SimError> {
        let i = instance as usize;
        if self.instance_busy[i].is_some() {
            return Ok(());
        }
        let Some(wave) = self.instance_ready[i].pop_front() else {
            return Ok(());
        };
        let li = self.lane_index(wave, instance);
        if self.lanes[li].status != LaneStatus::WaitingForAttention {
            return Err(SimError::UnexpectedEvent {
                kind: EventKind::F2aArrival,
                wave,
                instance,
                detail: "lane scheduled for attention while not waiting",
            });
        }
        if self.waves[wave as usize].state == WaveState::WaitingForAttention {
            self.transition(wave, WaveState::Attention)?;
        } else if self.waves[wave as usize].state != WaveState::Attention {
            return Err(SimError::InvalidTransition {
                wave,
                from: self.waves[wave as usize].state,
                to: WaveState::Attention,
            });
        }

        let now = self.clock;
        let lane = &self.lanes[li];
        if self.options.check_invariants {
            let (load, active) = lane
                .slots
                .iter()
                .flatten()
                .fold((0u64, 0u32), |(l, a), &idx| (l + self.requests[idx].token_load(), a + 1));
            if load != lane.token_load || active != lane.active {
                return Err(SimError::InvariantViolated(format!(
                    "lane (wave {wave}, instance {instance}) tracks load {} / {} active, \
                     recomputed {load} / {active}",
                    lane.token_load, lane.active
                )));
            }
        }
        if (lane.steps as usize) < self.options.probe_steps {
            let sample = lane.slots.iter().flatten().fold(
                LoadSample {
                    prefill: 0,
                    decode: 0,
                },
                |acc, &idx| LoadSample {
                    prefill: acc.prefill + self.requests[idx].prefill_len as u64,
                    decode: acc.decode + self.requests[idx].tokens_emitted as u64,
                },
            );
            self.probe[li].push(sample);
        }
        for &idx in lane.slots.iter().flatten() {
            let req = &mut self.requests[idx];
            if req.start_decode_time.is_none() {
                req.start_decode_time = Some(now);
            }
        }
        let lane = &mut self.lanes[li];
        lane.status = LaneStatus::Computing;
        lane.steps += 1;
        let duration = self.coeffs.alpha_a() * lane.token_load as f64 + self.coeffs.beta_a();
        self.waves[wave as usize].ffn_batch += lane.active as u64;
        self.instance_busy[i] = Some(wave);
        self.attention_log[i].record(now, now + duration);
        self.note(TraceKind::AttentionStart, wave, Some(instance));
        self.queue.push(Event {
            time: now + duration,
            kind: EventKind::AttentionDone,
            wave,
            instance,
        });
        Ok(())
    }

    fn on_attention_done(&mut self, ev: Event) -> Result<(), SimError> {
        let (wave, instance) = (ev.wave, ev.instance);
        let li = self.lane_index(wave, instance);
        if self.lanes[li].status != LaneStatus::Computing || self.instance_busy[instance as usize] != Some(wave) {
            return Err(SimError::UnexpectedEvent {
                kind: ev.kind,
                wave,
                instance,
                detail: "lane was not computing",
            });
        }
        self.note(TraceKind::AttentionEnd, wave, Some(instance));
        let now = self.clock;
        for slot in 0..self.lanes[li].slots.len() {
            let Some(idx) = self.lanes[li].slots[slot] else {
                continue;
            };
            let req = &mut self.requests[idx];
            req.tokens_emitted += 1;
            self.tokens_emitted += 1;
            let lane = &mut self.lanes[li];
            lane.token_load += 1;
            if req.tokens_emitted == req.decode_budget {
                req.completion_time = Some(now);
                lane.token_load -= req.token_load();
                lane.active -= 1;
                lane.slots[slot] = None;
                self.completed += 1;
                self.completions.push(CompletedRequest {
                    id: req.id,
                    arrival_index: req.arrival_index,
                    wave,
                    instance,
                    slot: slot as u32,
                    prefill_len: req.prefill_len,
                    decode_budget: req.decode_budget,
                    tokens_emitted: req.tokens_emitted,
                    start_decode_time: req.start_decode_time.unwrap_or(now),
                    completion_time: now,
                });
            }
        }
        self.lanes[li].status = LaneStatus::InTransit;
        self.queue.push(Event {
            time: now + self.a2f,
            kind: EventKind::A2fArrival,
            wave,
            instance,
        });
        let w = &mut self.waves[wave as usize];
        w.computing_left -= 1;
        if w.computing_left == 0 {
            self.transition(wave, WaveState::A2f)?;
        }
        self.instance_busy[instance as usize] = None;
        self.try_start_attention(instance)
    }

    fn on_a2f_arrival(&mut self, ev: Event) -> Result<(), SimError> {
        let li = self.lane_index(ev.wave, ev.instance);
        if self.lanes[li].status != LaneStatus::InTransit {
            return Err(SimError::UnexpectedEvent {
                kind: ev.kind,
                wave: ev.wave,
                instance: ev.instance,
                detail: "no transfer in flight",
            });
        }
        self.lanes[li].status = LaneStatus::Arrived;
        self.note(TraceKind::A2fArrival, ev.wave, Some(ev.instance));
        let w = &mut self.waves[ev.wave as usize];
        w.arrived += 1;
        if w.arrived as usize == self.r {
            self.transition(ev.wave, WaveState::WaitingForFfn)?;
            self.ffn_queue.push_back(ev.wave);
            self.try_start_ffn()?;
        }
        Ok(())
    }

    fn try_start_ffn(&mut self) -> Result<(), SimError> {
        if self.ffn_busy.is_some() {
            return Ok(());
        }
        let Some(wave) = self.ffn_queue.pop_front() else {
            return Ok(());
        };
        self.transition(wave, WaveState::Ffn)?;
        let now = self.clock;
        let w = &mut self.waves[wave as usize];
        let duration = self.coeffs.alpha_f() * w.ffn_batch as f64 + self.coeffs.beta_f();
        w.arrived = 0;
        w.ffn_batch = 0;
        for instance in 0..self.r as u32 {
            let li = self.lane_index(wave, instance);
            self.lanes[li].status = LaneStatus::Away;
        }
        self.ffn_busy = Some(wave);
        self.ffn_log.record(now, now + duration);
        self.note(TraceKind::FfnStart, wave, None);
        self.queue.push(Event {
            time: now + duration,
            kind: EventKind::FfnDone,
            wave,
            instance: 0,
        });
        Ok(())
    }

    fn on_ffn_done(&mut self, ev: Event) -> Result<(), SimError> {
        let wave = ev.wave;
        if self.ffn_busy != Some(wave) {
            return Err(SimError::UnexpectedEvent {
                kind: ev.kind,
                wave,
                instance: ev.instance,
                detail: "FFN was not serving this wave",
            });
        }
        self.ffn_busy = None;
        self.note(TraceKind::FfnEnd, wave, None);
        self.transition(wave, WaveState::F2a)?;
        self.refill_wave(wave);
        let active: u64 = (0..self.r as u32)
            .map(|i| self.lanes[self.lane_index(wave, i)].active as u64)
            .sum();
        if active == 0 {
            self.transition(wave, WaveState::Retired)?;
        } else {
            self.waves[wave as usize].computing_left = self.r as u32;
            for instance in 0..self.r as u32 {
                self.queue.push(Event {
                    time: self.clock + self.f2a,
                    kind: EventKind::F2aArrival,
                    wave,
                    instance,
                });
            }
        }
        self.try_start_ffn()
    }

    fn on_f2a_arrival(&mut self, ev: Event) -> Result<(), SimError> {
        let li = self.lane_index(ev.wave, ev.instance);
        if self.lanes[li].status != LaneStatus::Away {
            return Err(SimError::UnexpectedEvent {
                kind: ev.kind,
                wave: ev.wave,
                instance: ev.instance,
                detail: "lane was not away at the FFN",
            });
        }
        self.lanes[li].status = LaneStatus::WaitingForAttention;
        self.note(TraceKind::F2aArrival, ev.wave, Some(ev.instance));
        if self.waves[ev.wave as usize].state == WaveState::F2a {
            self.transition(ev.wave, WaveState::WaitingForAttention)?;
        }
        self.instance_ready[ev.instance as usize].push_back(ev.wave);
        self.try_start_attention(ev.instance)
    }

    fn finish(mut self) -> SimOutcome {
        self.completions.sort_by(|a, b| {
            a.completion_time
                .total_cmp(&b.completion_time)
                .then(a.instance.cmp(&b.instance))
                .then(a.slot.cmp(&b.slot))
        });
        SimOutcome {
            completions: self.completions,
            requests: self.requests,
            attention_busy: self.attention_log,
            ffn_busy: self.ffn_log,
            final_clock: self.clock,
            tokens_emitted: self.tokens_emitted,
            trace: self.trace,
            load_probe: self.probe,
        }
    }
}

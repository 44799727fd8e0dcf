//! Event-calendar simulation of one replication.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp};

use super::estimate::{BatchRecord, SimEstimate};
use super::sampling::{stream, truncated_exponential, DurationSampler, StreamKind};
use super::{SimMode, SimOptions};
use crate::model::{Epoch, PollingConfig};

/// What the server is doing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Glue(usize),
    Visit(usize),
    Switch(usize),
}

/// Snapshot of the system: `counts[i]` is the queue of station `i`,
/// `counts[N + i]` its orbit.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueState {
    pub time: f64,
    pub phase: Phase,
    pub counts: Vec<u64>,
}

impl QueueState {
    pub fn queue(&self, i: usize) -> u64 {
        self.counts[i]
    }

    pub fn orbit(&self, i: usize) -> u64 {
        self.counts[self.counts.len() / 2 + i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    /// End of the current glue or switch-over period.
    PhaseEnd,
    ServiceCompletion,
    Arrival(usize),
    /// Retrial clock of one orbiting customer (exact clocks only).
    Retrial(usize),
    /// A customer that sticks during glue period number `glue` (coin mode).
    Join { station: usize, glue: u64 },
}

impl EventKind {
    /// Order of simultaneous events.
    fn rank(&self) -> u8 {
        match self {
            EventKind::PhaseEnd => 0,
            EventKind::ServiceCompletion => 1,
            EventKind::Arrival(_) => 2,
            EventKind::Retrial(_) | EventKind::Join { .. } => 3,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.kind.rank().cmp(&other.kind.rank()))
            .then(self.seq.cmp(&other.seq))
    }
}

/// Accumulates post-warmup statistics, one [`BatchRecord`] per batch.
struct Recorder {
    n: usize,
    warmup: u64,
    batch_size: u64,
    batches: usize,
    current: Option<usize>,
    records: Vec<BatchRecord>,
    area: Vec<f64>,
    area_sq: Vec<f64>,
    last: Vec<f64>,
    batch_start: f64,
}

impl Recorder {
    fn new(n: usize, warmup: u64, observed: u64, batches: usize) -> Self {
        Self {
            n,
            warmup,
            batch_size: observed / batches as u64,
            batches,
            current: None,
            records: (0..batches).map(|_| BatchRecord::new(n)).collect(),
            area: vec![0.0; 2 * n],
            area_sq: vec![0.0; 2 * n],
            last: vec![0.0; 2 * n],
            batch_start: 0.0,
        }
    }

    fn batch_of(&self, cycle: u64) -> Option<usize> {
        (cycle >= self.warmup).then(|| (((cycle - self.warmup) / self.batch_size) as usize).min(self.batches - 1))
    }

    fn flush(&mut self, c: usize, count: u64, t: f64) {
        let dt = t - self.last[c];
        let x = count as f64;
        self.area[c] += x * dt;
        self.area_sq[c] += x * x * dt;
        self.last[c] = t;
    }

    /// Closes the current batch's time integrals at `t`.
    fn close(&mut self, counts: &[u64], t: f64) {
        for (c, &count) in counts.iter().enumerate() {
            self.flush(c, count, t);
        }
        if let Some(b) = self.current {
            let rec = &mut self.records[b];
            for c in 0..2 * self.n {
                rec.area[c] += self.area[c];
                rec.area_sq[c] += self.area_sq[c];
            }
            rec.duration += t - self.batch_start;
        }
        self.area.iter_mut().for_each(|a| *a = 0.0);
        self.area_sq.iter_mut().for_each(|a| *a = 0.0);
        self.batch_start = t;
    }

    /// Called when cycle number `cycle` begins.
    fn start_cycle(&mut self, cycle: u64, counts: &[u64], t: f64) {
        let b = self.batch_of(cycle);
        if b != self.current {
            self.close(counts, t);
            self.current = b;
        }
        if let Some(b) = b {
            self.records[b].cycles += 1;
        }
    }

    fn slot(&self, epoch: Epoch) -> usize {
        match epoch {
            Epoch::GlueStart(i) => i,
            Epoch::VisitStart(i) => self.n + i,
            Epoch::SwitchStart(i) => 2 * self.n + i,
        }
    }

    fn record_epoch(&mut self, epoch: Epoch, counts: &[u64]) -> bool {
        let Some(b) = self.current else { return false };
        let slot = self.slot(epoch);
        self.records[b].add_epoch(slot, counts);
        true
    }

    fn phase_time(&mut self, phase: Phase, dt: f64) {
        let Some(b) = self.current else { return };
        let slot = match phase {
            Phase::Glue(i) => i,
            Phase::Visit(i) => self.n + i,
            Phase::Switch(i) => 2 * self.n + i,
        };
        self.records[b].phase_time[slot] += dt;
    }
}

pub(super) struct Engine<'a> {
    config: &'a PollingConfig,
    n: usize,
    mode: SimMode,
    services: Vec<DurationSampler>,
    switchovers: Vec<DurationSampler>,
    arrival_clocks: Vec<Option<Exp<f64>>>,
    retrial_clocks: Vec<Exp<f64>>,
    arrival_rng: Vec<ChaCha8Rng>,
    service_rng: Vec<ChaCha8Rng>,
    switch_rng: Vec<ChaCha8Rng>,
    retrial_rng: Vec<ChaCha8Rng>,
    calendar: BinaryHeap<Reverse<Event>>,
    seq: u64,
    state: QueueState,
    phase_start: f64,
    glue_count: u64,
    pending_joins: u64,
    visit_target: u64,
    served: u64,
    cycle: u64,
    target_cycles: u64,
    recorder: Recorder,
    gated_checks: u64,
    events: u64,
}

impl<'a> Engine<'a> {
    pub(super) fn new(config: &'a PollingConfig, options: &SimOptions) -> Self {
        let n = config.len();
        let seed = options.seed;
        let warmup = options.warmup_cycles();
        let observed = options.cycles - warmup;
        Self {
            config,
            n,
            mode: options.mode,
            services: config.stations.iter().map(|s| DurationSampler::new(&s.service)).collect(),
            switchovers: config.stations.iter().map(|s| DurationSampler::new(&s.switchover)).collect(),
            arrival_clocks: config
                .stations
                .iter()
                .map(|s| (s.arrival_rate > 0.0).then(|| Exp::new(s.arrival_rate).expect("positive rate")))
                .collect(),
            retrial_clocks: config.stations.iter().map(|s| Exp::new(s.retrial_rate).expect("positive rate")).collect(),
            arrival_rng: (0..n).map(|i| stream(seed, StreamKind::Arrivals, i)).collect(),
            service_rng: (0..n).map(|i| stream(seed, StreamKind::Services, i)).collect(),
            switch_rng: (0..n).map(|i| stream(seed, StreamKind::Switchovers, i)).collect(),
            retrial_rng: (0..n).map(|i| stream(seed, StreamKind::Retrials, i)).collect(),
            calendar: BinaryHeap::new(),
            seq: 0,
            state: QueueState { time: 0.0, phase: Phase::Glue(0), counts: vec![0; 2 * n] },
            phase_start: 0.0,
            glue_count: 0,
            pending_joins: 0,
            visit_target: 0,
            served: 0,
            cycle: 0,
            target_cycles: options.cycles,
            recorder: Recorder::new(n, warmup, observed, options.batches),
            gated_checks: 0,
            events: 0,
        }
    }

    fn schedule(&mut self, delay: f64, kind: EventKind) {
        self.seq += 1;
        self.calendar.push(Reverse(Event { time: self.state.time + delay, seq: self.seq, kind }));
    }

    fn change(&mut self, c: usize, up: bool) {
        let count = self.state.counts[c];
        self.recorder.flush(c, count, self.state.time);
        self.state.counts[c] = if up { count + 1 } else { count - 1 };
    }

    fn schedule_arrival(&mut self, j: usize) {
        if let Some(clock) = self.arrival_clocks[j] {
            let dt = clock.sample(&mut self.arrival_rng[j]);
            self.schedule(dt, EventKind::Arrival(j));
        }
    }

    fn schedule_retrial(&mut self, j: usize) {
        let dt = self.retrial_clocks[j].sample(&mut self.retrial_rng[j]);
        self.schedule(dt, EventKind::Retrial(j));
    }

    fn observe<F: FnMut(Epoch, &QueueState)>(&mut self, epoch: Epoch, observer: &mut F) {
        if self.recorder.record_epoch(epoch, &self.state.counts) {
            observer(epoch, &self.state);
        }
    }

    fn end_phase(&mut self) {
        let dt = self.state.time - self.phase_start;
        self.recorder.phase_time(self.state.phase, dt);
        self.phase_start = self.state.time;
    }

    /// Starts the glue period of station `i`. Returns `false` once the
    /// requested number of cycles has been completed.
    fn begin_glue<F: FnMut(Epoch, &QueueState)>(&mut self, i: usize, observer: &mut F) -> bool {
        if i == 0 {
            if self.glue_count > 0 {
                self.cycle += 1;
            }
            if self.cycle == self.target_cycles {
                self.recorder.close(&self.state.counts, self.state.time);
                return false;
            }
            self.recorder.start_cycle(self.cycle, &self.state.counts, self.state.time);
        }
        self.state.phase = Phase::Glue(i);
        self.glue_count += 1;
        self.observe(Epoch::GlueStart(i), observer);
        let station = &self.config.stations[i];
        if self.mode == SimMode::GlueCoin {
            let orbit = self.state.counts[self.n + i];
            let p = station.stick_probability();
            let sticking = if orbit == 0 || p <= 0.0 {
                0
            } else if p >= 1.0 {
                orbit
            } else {
                Binomial::new(orbit, p).expect("valid binomial").sample(&mut self.retrial_rng[i])
            };
            self.pending_joins = sticking;
            for _ in 0..sticking {
                let dt = truncated_exponential(&mut self.retrial_rng[i], station.retrial_rate, station.glue);
                self.schedule(dt, EventKind::Join { station: i, glue: self.glue_count });
            }
        }
        self.schedule(station.glue, EventKind::PhaseEnd);
        true
    }

    fn end_glue<F: FnMut(Epoch, &QueueState)>(&mut self, i: usize, observer: &mut F) {
        // Join times that rounded onto the end of the glue period.
        while self.pending_joins > 0 {
            self.change(self.n + i, false);
            self.change(i, true);
            self.pending_joins -= 1;
        }
        self.end_phase();
        self.state.phase = Phase::Visit(i);
        self.observe(Epoch::VisitStart(i), observer);
        self.visit_target = self.state.counts[i];
        self.served = 0;
        if self.visit_target > 0 {
            self.schedule_service(i);
        } else {
            self.end_visit(i, observer);
        }
    }

    fn schedule_service(&mut self, i: usize) {
        let dt = self.services[i].sample(&mut self.service_rng[i]);
        self.schedule(dt, EventKind::ServiceCompletion);
    }

    fn end_visit<F: FnMut(Epoch, &QueueState)>(&mut self, i: usize, observer: &mut F) {
        assert_eq!(
            self.served,
            self.visit_target,
            "gated discipline violated at station {} in cycle {}",
            i + 1,
            self.cycle
        );
        self.gated_checks += 1;
        self.end_phase();
        self.state.phase = Phase::Switch(i);
        self.observe(Epoch::SwitchStart(i), observer);
        let dt = self.switchovers[i].sample(&mut self.switch_rng[i]);
        self.schedule(dt, EventKind::PhaseEnd);
    }

    pub(super) fn run<F: FnMut(Epoch, &QueueState)>(mut self, observer: &mut F) -> SimEstimate {
        for j in 0..self.n {
            self.schedule_arrival(j);
        }
        self.begin_glue(0, observer);
        while let Some(Reverse(event)) = self.calendar.pop() {
            self.state.time = event.time;
            self.events += 1;
            match event.kind {
                EventKind::PhaseEnd => match self.state.phase {
                    Phase::Glue(i) => self.end_glue(i, observer),
                    Phase::Switch(i) => {
                        self.end_phase();
                        if !self.begin_glue((i + 1) % self.n, observer) {
                            break;
                        }
                    }
                    Phase::Visit(_) => unreachable!("visits end on service completions"),
                },
                EventKind::ServiceCompletion => {
                    let Phase::Visit(i) = self.state.phase else { unreachable!("service outside a visit") };
                    self.change(i, false);
                    self.served += 1;
                    if self.state.counts[i] > 0 {
                        self.schedule_service(i);
                    } else {
                        self.end_visit(i, observer);
                    }
                }
                EventKind::Arrival(j) => {
                    if self.state.phase == Phase::Glue(j) {
                        self.change(j, true);
                    } else {
                        self.change(self.n + j, true);
                        if self.mode == SimMode::ExactClocks {
                            self.schedule_retrial(j);
                        }
                    }
                    self.schedule_arrival(j);
                }
                EventKind::Retrial(j) => {
                    if self.state.phase == Phase::Glue(j) {
                        self.change(self.n + j, false);
                        self.change(j, true);
                    } else {
                        self.schedule_retrial(j);
                    }
                }
                EventKind::Join { station, glue } => {
                    if glue == self.glue_count && self.state.phase == Phase::Glue(station) && self.pending_joins > 0 {
                        self.change(self.n + station, false);
                        self.change(station, true);
                        self.pending_joins -= 1;
                    }
                }
            }
        }
        SimEstimate::from_records(
            self.n,
            self.config.load(),
            self.mode,
            self.recorder.warmup,
            self.recorder.records,
            self.gated_checks,
            self.events,
        )
    }
}

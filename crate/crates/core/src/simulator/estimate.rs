//! Batch-means estimates assembled from a finished replication.

use std::fmt;

use super::SimMode;
use crate::htlimits::Coordinate;
use crate::model::Epoch;
use crate::stats::{batch_interval, replication_interval, Interval};

/// Sums collected over the cycles of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchRecord {
    pub cycles: u64,
    pub duration: f64,
    /// Integral of each count over the batch, joint `(queue, orbit)` layout.
    pub area: Vec<f64>,
    pub area_sq: Vec<f64>,
    /// `epoch_sum[slot * 2N + c]`, slots ordered glue starts, visit starts,
    /// switch starts.
    pub epoch_sum: Vec<f64>,
    pub epoch_sq: Vec<f64>,
    pub epoch_count: Vec<u64>,
    /// Time spent in each phase, same slot order as the epochs.
    pub phase_time: Vec<f64>,
}

impl BatchRecord {
    pub fn new(n: usize) -> Self {
        Self {
            cycles: 0,
            duration: 0.0,
            area: vec![0.0; 2 * n],
            area_sq: vec![0.0; 2 * n],
            epoch_sum: vec![0.0; 6 * n * n],
            epoch_sq: vec![0.0; 6 * n * n],
            epoch_count: vec![0; 3 * n],
            phase_time: vec![0.0; 3 * n],
        }
    }

    pub(super) fn add_epoch(&mut self, slot: usize, counts: &[u64]) {
        let width = counts.len();
        let base = slot * width;
        for (c, &x) in counts.iter().enumerate() {
            let x = x as f64;
            self.epoch_sum[base + c] += x;
            self.epoch_sq[base + c] += x * x;
        }
        self.epoch_count[slot] += 1;
    }

    fn merge(&mut self, other: &BatchRecord) {
        self.cycles += other.cycles;
        self.duration += other.duration;
        let add = |a: &mut Vec<f64>, b: &Vec<f64>| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.area, &other.area);
        add(&mut self.area_sq, &other.area_sq);
        add(&mut self.epoch_sum, &other.epoch_sum);
        add(&mut self.epoch_sq, &other.epoch_sq);
        add(&mut self.phase_time, &other.phase_time);
        self.epoch_count.iter_mut().zip(&other.epoch_count).for_each(|(x, y)| *x += y);
    }
}

/// Where a statistic was observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observation {
    Embedded(Epoch),
    TimeAverage,
}

impl Observation {
    pub fn label(&self) -> &'static str {
        match self {
            Observation::Embedded(e) => e.kind(),
            Observation::TimeAverage => "time_average",
        }
    }

    /// One-based station of an embedded epoch.
    pub fn station_label(&self) -> String {
        match self {
            Observation::Embedded(e) => (e.station() + 1).to_string(),
            Observation::TimeAverage => String::new(),
        }
    }
}

impl fmt::Display for Observation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observation::Embedded(e) => write!(f, "{}({})", e.kind(), e.station() + 1),
            Observation::TimeAverage => f.write_str("time_average"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateStat {
    pub mean: f64,
    pub variance: f64,
    /// 95% half-width, reported only with enough batches (or replications).
    pub ci95: Option<f64>,
    /// Observations (embedded) or observed cycles (time averages).
    pub n: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimRow {
    pub observation: Observation,
    pub coordinate: Coordinate,
    pub stat: CoordinateStat,
}

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct SimEstimate {
    pub stations: usize,
    pub rho: f64,
    pub mode: SimMode,
    pub cycles_observed: u64,
    pub warmup_cycles_discarded: u64,
    /// Visits at which the number served was checked against the gated count.
    pub gated_checks: u64,
    pub events: u64,
    batches: Vec<BatchRecord>,
    totals: BatchRecord,
}

impl SimEstimate {
    pub(super) fn from_records(
        n: usize,
        rho: f64,
        mode: SimMode,
        warmup: u64,
        batches: Vec<BatchRecord>,
        gated_checks: u64,
        events: u64,
    ) -> Self {
        let mut totals = BatchRecord::new(n);
        for b in &batches {
            totals.merge(b);
        }
        Self {
            stations: n,
            rho,
            mode,
            cycles_observed: totals.cycles,
            warmup_cycles_discarded: warmup,
            gated_checks,
            events,
            batches,
            totals,
        }
    }

    pub fn batches(&self) -> &[BatchRecord] {
        &self.batches
    }

    pub fn observed_time(&self) -> f64 {
        self.totals.duration
    }

    fn slot(&self, epoch: Epoch) -> usize {
        let n = self.stations;
        match epoch {
            Epoch::GlueStart(i) => i,
            Epoch::VisitStart(i) => n + i,
            Epoch::SwitchStart(i) => 2 * n + i,
        }
    }

    fn weighted(values: &[f64], weights: &[f64]) -> f64 {
        values.iter().zip(weights).map(|(v, w)| v * w).sum()
    }

    fn interval(mean: f64, batch_means: &[f64]) -> Interval {
        Interval { mean, ..batch_interval(batch_means) }
    }

    /// Mean of `weights . X` over the occurrences of `epoch` (joint layout).
    pub fn embedded_functional(&self, epoch: Epoch, weights: &[f64]) -> Interval {
        let s = self.slot(epoch);
        let w = 2 * self.stations;
        let per_batch = |b: &BatchRecord| Self::weighted(&b.epoch_sum[s * w..(s + 1) * w], weights) / b.epoch_count[s] as f64;
        let batch_means: Vec<f64> = self.batches.iter().map(per_batch).collect();
        Self::interval(per_batch(&self.totals), &batch_means)
    }

    /// Time average of `weights . X` (joint layout).
    pub fn time_average_functional(&self, weights: &[f64]) -> Interval {
        let per_batch = |b: &BatchRecord| Self::weighted(&b.area, weights) / b.duration;
        let batch_means: Vec<f64> = self.batches.iter().map(per_batch).collect();
        Self::interval(per_batch(&self.totals), &batch_means)
    }

    /// Batch means of `weights . X` at `epoch`, in batch order.
    pub fn embedded_batch_means(&self, epoch: Epoch, weights: &[f64]) -> Vec<f64> {
        let s = self.slot(epoch);
        let w = 2 * self.stations;
        self.batches
            .iter()
            .map(|b| Self::weighted(&b.epoch_sum[s * w..(s + 1) * w], weights) / b.epoch_count[s] as f64)
            .collect()
    }

    /// Long-run fraction of time the server spends serving.
    pub fn visit_fraction(&self) -> Interval {
        let n = self.stations;
        let per_batch = |b: &BatchRecord| b.phase_time[n..2 * n].iter().sum::<f64>() / b.duration;
        let batch_means: Vec<f64> = self.batches.iter().map(per_batch).collect();
        Self::interval(per_batch(&self.totals), &batch_means)
    }

    fn unit(&self, c: usize) -> Vec<f64> {
        let mut w = vec![0.0; 2 * self.stations];
        w[c] = 1.0;
        w
    }

    /// Per-coordinate statistics at `epoch`, joint layout.
    pub fn embedded(&self, epoch: Epoch) -> Vec<CoordinateStat> {
        let s = self.slot(epoch);
        let w = 2 * self.stations;
        let count = self.totals.epoch_count[s];
        (0..w)
            .map(|c| {
                let iv = self.embedded_functional(epoch, &self.unit(c));
                let m2 = self.totals.epoch_sq[s * w + c] / count as f64;
                let variance = if count > 1 { (m2 - iv.mean * iv.mean) * count as f64 / (count - 1) as f64 } else { 0.0 };
                CoordinateStat { mean: iv.mean, variance: variance.max(0.0), ci95: iv.half_width, n: count }
            })
            .collect()
    }

    /// Time-average statistics per coordinate, joint layout.
    pub fn time_average(&self) -> Vec<CoordinateStat> {
        (0..2 * self.stations)
            .map(|c| {
                let iv = self.time_average_functional(&self.unit(c));
                let m2 = self.totals.area_sq[c] / self.totals.duration;
                CoordinateStat {
                    mean: iv.mean,
                    variance: (m2 - iv.mean * iv.mean).max(0.0),
                    ci95: iv.half_width,
                    n: self.cycles_observed,
                }
            })
            .collect()
    }

    /// Every embedded epoch (glue, visit, switch starts per station) followed
    /// by the time averages.
    pub fn observations(&self) -> Vec<Observation> {
        let n = self.stations;
        let mut out = Vec::with_capacity(3 * n + 1);
        for i in 0..n {
            out.push(Observation::Embedded(Epoch::GlueStart(i)));
            out.push(Observation::Embedded(Epoch::VisitStart(i)));
            out.push(Observation::Embedded(Epoch::SwitchStart(i)));
        }
        out.push(Observation::TimeAverage);
        out
    }

    pub fn stats(&self, observation: Observation) -> Vec<CoordinateStat> {
        match observation {
            Observation::Embedded(e) => self.embedded(e),
            Observation::TimeAverage => self.time_average(),
        }
    }

    pub fn rows(&self) -> Vec<SimRow> {
        pool_rows(std::slice::from_ref(self))
    }
}

/// Statistic pooled over replications: a t-interval over the replication
/// means with two or more replications, the batch interval otherwise.
pub fn pool_intervals(intervals: &[Interval]) -> Interval {
    match intervals {
        [single] => *single,
        many => replication_interval(&many.iter().map(|i| i.mean).collect::<Vec<_>>()),
    }
}

/// Rows of all replications pooled coordinate by coordinate.
pub fn pool_rows(estimates: &[SimEstimate]) -> Vec<SimRow> {
    let first = &estimates[0];
    let n = first.stations;
    let coords = crate::htlimits::joint_coordinates(n);
    let mut rows = Vec::new();
    for observation in first.observations() {
        let per_rep: Vec<Vec<CoordinateStat>> = estimates.iter().map(|e| e.stats(observation)).collect();
        for (c, &coordinate) in coords.iter().enumerate() {
            let stats: Vec<CoordinateStat> = per_rep.iter().map(|s| s[c]).collect();
            let stat = if let [single] = stats.as_slice() {
                *single
            } else {
                let iv = replication_interval(&stats.iter().map(|s| s.mean).collect::<Vec<_>>());
                CoordinateStat {
                    mean: iv.mean,
                    variance: stats.iter().map(|s| s.variance).sum::<f64>() / stats.len() as f64,
                    ci95: iv.half_width,
                    n: stats.iter().map(|s| s.n).sum(),
                }
            };
            rows.push(SimRow { observation, coordinate, stat });
        }
    }
    rows
}

//! Discrete-event simulation of the polling system with retrials and glue
//! periods.
//!
//! A cycle runs from the start of the glue period of the first station to the
//! next one. The server glues, serves the glued customers (gated) and switches
//! over, station by station. Arrivals during the glue period of their own
//! station join its queue; all others go to orbit and join a queue only if
//! they retry during a glue period of their station.
//!
//! Two equivalent ways to decide who sticks during a glue period are
//! available. [`SimMode::ExactClocks`] runs an exponential retrial clock for
//! every orbiting customer. [`SimMode::GlueCoin`] draws, at the start of the
//! glue period, how many orbiting customers retry at least once before it ends
//! and then schedules each one's first retrial conditioned on falling inside
//! the period; attempts outside a glue period have no effect, so both modes
//! give the same process law.

mod engine;
mod estimate;
mod sampling;

use std::fmt;

use thiserror::Error;

pub use engine::{Phase, QueueState};
pub use estimate::{pool_intervals, pool_rows, BatchRecord, CoordinateStat, Observation, SimEstimate, SimRow};
pub use sampling::{replication_seeds, DurationSampler};

use crate::model::{Epoch, LoadProfile, PollingConfig, ValidationErrors};
use crate::stats::lag1_autocorrelation;

/// Fewest post-warmup cycles a run may observe.
pub const MIN_OBSERVED_CYCLES: u64 = 100;
pub const DEFAULT_BATCHES: usize = 30;
/// Lag-1 autocorrelation of batch means above which batching is suspect.
pub const AUTOCORRELATION_WARNING: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SimMode {
    /// One Bernoulli stick decision per orbiting customer per glue period.
    #[default]
    GlueCoin,
    /// An exponential retrial clock per orbiting customer.
    ExactClocks,
}

impl fmt::Display for SimMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimMode::GlueCoin => "coin",
            SimMode::ExactClocks => "clocks",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// Total cycles simulated, warmup included.
    pub cycles: u64,
    /// Cycles discarded at the start; 10% of `cycles` when `None`.
    pub warmup: Option<u64>,
    pub seed: u64,
    pub mode: SimMode,
    pub batches: usize,
}

impl SimOptions {
    pub fn new(cycles: u64, seed: u64) -> Self {
        Self { cycles, warmup: None, seed, mode: SimMode::default(), batches: DEFAULT_BATCHES }
    }

    pub fn with_mode(self, mode: SimMode) -> Self {
        Self { mode, ..self }
    }

    pub fn with_warmup(self, warmup: u64) -> Self {
        Self { warmup: Some(warmup), ..self }
    }

    pub fn with_batches(self, batches: usize) -> Self {
        Self { batches, ..self }
    }

    pub fn warmup_cycles(&self) -> u64 {
        self.warmup.unwrap_or(self.cycles / 10)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("load {0} is not below 1; the system is unstable")]
    UnstableLoad(f64),
    #[error("load {0} must be positive")]
    InvalidLoad(f64),
    #[error("{cycles} cycles with {warmup} warmup cycles leave fewer than {MIN_OBSERVED_CYCLES} observed cycles")]
    InsufficientCycles { cycles: u64, warmup: u64 },
    #[error("{batches} batches cannot be formed from {observed} observed cycles")]
    InvalidBatches { batches: usize, observed: u64 },
    #[error("invalid configuration:\n{0}")]
    Invalid(ValidationErrors),
}

/// The configuration scaled to total load `rho`. A configuration without any
/// arrivals is simulated as is.
fn at_load(config: &PollingConfig, rho: f64) -> Result<PollingConfig, SimError> {
    if rho.is_nan() || rho <= 0.0 {
        return Err(SimError::InvalidLoad(rho));
    }
    if rho >= 1.0 {
        return Err(SimError::UnstableLoad(rho));
    }
    config.validate().map_err(SimError::Invalid)?;
    Ok(match LoadProfile::normalize(config) {
        Ok(profile) => profile.materialize(rho),
        Err(_) => config.clone(),
    })
}

fn check_options(options: &SimOptions) -> Result<(), SimError> {
    let warmup = options.warmup_cycles();
    if options.cycles < warmup.saturating_add(MIN_OBSERVED_CYCLES) {
        return Err(SimError::InsufficientCycles { cycles: options.cycles, warmup });
    }
    let observed = options.cycles - warmup;
    if options.batches == 0 || options.batches as u64 > observed {
        return Err(SimError::InvalidBatches { batches: options.batches, observed });
    }
    Ok(())
}

/// Simulates `options.cycles` cycles at total load `rho`.
pub fn run(config: &PollingConfig, rho: f64, options: &SimOptions) -> Result<SimEstimate, SimError> {
    run_observed(config, rho, options, |_, _| {})
}

/// Like [`run`], calling `observer` at every post-warmup embedded epoch.
pub fn run_observed<F: FnMut(Epoch, &QueueState)>(
    config: &PollingConfig,
    rho: f64,
    options: &SimOptions,
    mut observer: F,
) -> Result<SimEstimate, SimError> {
    let scaled = at_load(config, rho)?;
    check_options(options)?;
    Ok(engine::Engine::new(&scaled, options).run(&mut observer))
}

/// `reps` independent replications with seeds derived from `options.seed`.
pub fn run_replications(
    config: &PollingConfig,
    rho: f64,
    options: &SimOptions,
    reps: usize,
) -> Result<Vec<SimEstimate>, SimError> {
    if reps <= 1 {
        return Ok(vec![run(config, rho, options)?]);
    }
    replication_seeds(options.seed, reps)
        .into_iter()
        .map(|seed| run(config, rho, &SimOptions { seed, ..*options }))
        .collect()
}

/// `(1 - rho)` times the joint `(queue, orbit)` vector at every post-warmup
/// occurrence of `epoch`.
pub fn scaled_embedded_samples(
    config: &PollingConfig,
    rho: f64,
    epoch: Epoch,
    options: &SimOptions,
) -> Result<Vec<Vec<f64>>, SimError> {
    let mut samples = Vec::new();
    run_observed(config, rho, options, |e, state| {
        if e == epoch {
            samples.push(state.counts.iter().map(|&x| (1.0 - rho) * x as f64).collect());
        }
    })?;
    Ok(samples)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegenerationDiagnostics {
    pub batches: usize,
    pub lag1: f64,
    /// Lag-1 autocorrelation after merging adjacent batches in pairs.
    pub merged_lag1: Option<f64>,
    pub warning: Option<String>,
}

/// Lag-1 autocorrelation of batch means, with a warning above
/// [`AUTOCORRELATION_WARNING`].
pub fn regeneration_diagnostics(batch_means: &[f64]) -> RegenerationDiagnostics {
    let lag1 = lag1_autocorrelation(batch_means);
    let merged: Vec<f64> = batch_means.chunks_exact(2).map(|p| (p[0] + p[1]) / 2.0).collect();
    let merged_lag1 = (merged.len() >= 3).then(|| lag1_autocorrelation(&merged));
    let warning = (lag1.abs() > AUTOCORRELATION_WARNING).then(|| {
        format!(
            "lag-1 autocorrelation of {} batch means is {lag1:.3}; use longer batches",
            batch_means.len()
        )
    });
    RegenerationDiagnostics { batches: batch_means.len(), lag1, merged_lag1, warning }
}

/// Checks that batches of cycles are close to independent, using the total
/// number of customers at the start of the first glue period of each cycle.
pub fn cycle_regeneration_check(estimate: &SimEstimate) -> RegenerationDiagnostics {
    let ones = vec![1.0; 2 * estimate.stations];
    regeneration_diagnostics(&estimate.embedded_batch_means(Epoch::GlueStart(0), &ones))
}

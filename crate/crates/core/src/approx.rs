//! Interpolation approximation for the mean number of customers at any load.
//!
//! `E[L_i] ~ (c0 + rho c1) / (1 - rho)`, where `c0 = 0` matches light traffic
//! and `c1` is the heavy-traffic limit of `(1 - rho) E[L_i]`.

use std::fmt;

use thiserror::Error;

use crate::branching::BranchingSummary;
use crate::htlimits::arbitrary_time_limit;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ApproxError {
    #[error("load {0} is not below 1; the system is unstable")]
    UnstableLoad(f64),
    #[error("load {0} is not a valid load")]
    InvalidLoad(f64),
}

/// Coefficients of the interpolation for one station.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interpolation {
    pub c0: f64,
    pub c1: f64,
}

impl Interpolation {
    pub fn at(&self, rho: f64) -> Result<f64, ApproxError> {
        check_load(rho)?;
        Ok((self.c0 + rho * self.c1) / (1.0 - rho))
    }
}

fn check_load(rho: f64) -> Result<(), ApproxError> {
    if rho >= 1.0 {
        Err(ApproxError::UnstableLoad(rho))
    } else if rho.is_nan() || rho < 0.0 {
        Err(ApproxError::InvalidLoad(rho))
    } else {
        Ok(())
    }
}

/// `c1 = (b2 / 2 b1) ((alpha + 1) / delta)
///       (sum_j rho_j (u_i^(j) + lambda_i rho_j / 2) - lambda_i rho_i / 2)`.
pub fn c1_coefficient(summary: &BranchingSummary, i: usize) -> f64 {
    let lam = summary.lambda_hat[i];
    let inner: f64 = (0..summary.len())
        .map(|j| {
            let rj = summary.rho_hat[j];
            rj * (summary.u_vectors[j][i] + lam * rj / 2.0)
        })
        .sum::<f64>()
        - lam * summary.rho_hat[i] / 2.0;
    summary.workload_scale() * (summary.alpha + 1.0) / summary.delta * inner
}

/// `c1` as the limiting mean of queue plus orbit of station `i` at an
/// arbitrary moment.
pub fn c1_from_limit(summary: &BranchingSummary, i: usize) -> f64 {
    let means = arbitrary_time_limit(summary).means();
    means[i] + means[summary.len() + i]
}

pub fn interpolation(summary: &BranchingSummary, i: usize) -> Interpolation {
    Interpolation { c0: 0.0, c1: c1_coefficient(summary, i) }
}

/// `E[L_i] ~ rho c1 / (1 - rho)`.
pub fn mean_customers_approx(summary: &BranchingSummary, i: usize, rho: f64) -> Result<f64, ApproxError> {
    interpolation(summary, i).at(rho)
}

/// Sum of the per-station approximations.
pub fn total_customers_approx(summary: &BranchingSummary, rho: f64) -> Result<f64, ApproxError> {
    (0..summary.len()).map(|i| mean_customers_approx(summary, i, rho)).sum()
}

/// `(approx - sim) / sim * 100`, defined only when the simulated mean is
/// positive and its confidence interval excludes zero.
pub fn pct_error(approx: f64, sim_mean: f64, sim_ci95: Option<f64>) -> Option<f64> {
    let half = sim_ci95?;
    (sim_mean > 0.0 && sim_mean - half > 0.0).then(|| (approx - sim_mean) / sim_mean * 100.0)
}

/// Either a single station (zero-based) or the whole system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StationRef {
    Station(usize),
    Total,
}

impl fmt::Display for StationRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StationRef::Station(i) => write!(f, "{}", i + 1),
            StationRef::Total => f.write_str("total"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApproxRow {
    pub rho: f64,
    pub station: StationRef,
    pub approx_mean: f64,
    pub sim_mean: Option<f64>,
    pub sim_ci95: Option<f64>,
    pub pct_error: Option<f64>,
}

impl ApproxRow {
    /// Attaches a simulation estimate and derives the percentage error.
    pub fn with_simulation(mut self, mean: f64, ci95: Option<f64>) -> Self {
        self.sim_mean = Some(mean);
        self.sim_ci95 = ci95;
        self.pct_error = pct_error(self.approx_mean, mean, ci95);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ApproxTable {
    pub rows: Vec<ApproxRow>,
}

impl ApproxTable {
    /// Per-station rows followed by a total row, for each load in order.
    pub fn build(summary: &BranchingSummary, rhos: &[f64]) -> Result<Self, ApproxError> {
        let coeffs: Vec<Interpolation> = (0..summary.len()).map(|i| interpolation(summary, i)).collect();
        let mut rows = Vec::with_capacity(rhos.len() * (summary.len() + 1));
        for &rho in rhos {
            let mut total = 0.0;
            for (i, c) in coeffs.iter().enumerate() {
                let approx_mean = c.at(rho)?;
                total += approx_mean;
                rows.push(ApproxRow {
                    rho,
                    station: StationRef::Station(i),
                    approx_mean,
                    sim_mean: None,
                    sim_ci95: None,
                    pct_error: None,
                });
            }
            rows.push(ApproxRow {
                rho,
                station: StationRef::Total,
                approx_mean: total,
                sim_mean: None,
                sim_ci95: None,
                pct_error: None,
            });
        }
        Ok(Self { rows })
    }
}

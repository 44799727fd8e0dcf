//! Parameterization of the cyclic polling system with retrials and glue periods.
//!
//! A [`PollingConfig`] holds the concrete rates of an `N`-station system. The
//! heavy-traffic analysis scales every arrival rate by a common factor, so the
//! shape of the traffic mix is captured separately by a [`LoadProfile`]: a
//! configuration whose rates sum to unit load, from which the system at any
//! total load `rho` is obtained with [`LoadProfile::materialize`].

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Distribution families with exact samplers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Exponential,
    Deterministic,
    /// Gamma law matched to the first two moments.
    #[serde(alias = "gamma-shaped")]
    Gamma,
    /// Mass at `0` and at `second_moment / mean`.
    TwoPoint,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Family::Exponential => "exponential",
            Family::Deterministic => "deterministic",
            Family::Gamma => "gamma",
            Family::TwoPoint => "two-point",
        };
        f.write_str(name)
    }
}

/// A nonnegative duration law described by its family and first two moments.
///
/// Used for both service times and switch-over times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceDistribution {
    pub family: Family,
    pub mean: f64,
    pub second_moment: f64,
}

impl ServiceDistribution {
    pub fn exponential(mean: f64) -> Self {
        Self { family: Family::Exponential, mean, second_moment: 2.0 * mean * mean }
    }

    pub fn deterministic(mean: f64) -> Self {
        Self { family: Family::Deterministic, mean, second_moment: mean * mean }
    }

    /// Builds a distribution from its squared coefficient of variation:
    /// `second_moment = mean^2 (1 + scv)`.
    pub fn with_scv(family: Family, mean: f64, scv: f64) -> Self {
        Self { family, mean, second_moment: mean * mean * (1.0 + scv) }
    }

    pub fn variance(&self) -> f64 {
        self.second_moment - self.mean * self.mean
    }

    pub fn scv(&self) -> f64 {
        self.variance() / (self.mean * self.mean)
    }

    fn check(&self, station: usize, role: Role, errors: &mut Vec<ValidationError>) {
        if !(self.mean.is_finite() && self.mean > 0.0) {
            errors.push(ValidationError::NonPositiveMean { station, role, mean: self.mean });
            return;
        }
        let m2 = self.mean * self.mean;
        let tol = 1e-12 * m2;
        let ok = self.second_moment.is_finite()
            && match self.family {
                Family::Deterministic => (self.second_moment - m2).abs() <= tol,
                Family::Exponential => (self.second_moment - 2.0 * m2).abs() <= tol,
                Family::Gamma | Family::TwoPoint => self.second_moment > m2 + tol,
            };
        if !ok {
            errors.push(ValidationError::InvalidMoments {
                station,
                role,
                family: self.family,
                mean: self.mean,
                second_moment: self.second_moment,
            });
        }
    }
}

/// Which duration of a station a validation message refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Service,
    Switchover,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Service => "service",
            Role::Switchover => "switchover",
        })
    }
}

/// One station of the polling system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationParams {
    /// Poisson arrival rate `lambda_i`.
    pub arrival_rate: f64,
    pub service: ServiceDistribution,
    /// Switch-over time from this station to the next one.
    pub switchover: ServiceDistribution,
    /// Deterministic glue period preceding each visit.
    pub glue: f64,
    /// Rate of the exponential retrial clock of orbiting customers.
    pub retrial_rate: f64,
}

impl StationParams {
    pub fn load(&self) -> f64 {
        self.arrival_rate * self.service.mean
    }

    /// `exp(-nu_i G_i)`: probability that an orbiting customer does not retry
    /// during one glue period.
    pub fn miss_probability(&self) -> f64 {
        (-self.retrial_rate * self.glue).exp()
    }

    /// `1 - exp(-nu_i G_i)`, computed without cancellation.
    pub fn stick_probability(&self) -> f64 {
        -(-self.retrial_rate * self.glue).exp_m1()
    }
}

/// Full parameterization of an `N`-station cyclic polling system.
#[derive(Debug, Clone, PartialEq)]
pub struct PollingConfig {
    pub stations: Vec<StationParams>,
}

/// Epochs at which the joint queue-length vector is observed.
///
/// Station indices are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Epoch {
    GlueStart(usize),
    VisitStart(usize),
    SwitchStart(usize),
}

impl Epoch {
    pub fn station(&self) -> usize {
        match *self {
            Epoch::GlueStart(i) | Epoch::VisitStart(i) | Epoch::SwitchStart(i) => i,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Epoch::GlueStart(_) => "glue_start",
            Epoch::VisitStart(_) => "visit_start",
            Epoch::SwitchStart(_) => "switch_start",
        }
    }
}

impl PollingConfig {
    pub fn new(stations: Vec<StationParams>) -> Self {
        Self { stations }
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn arrival_rates(&self) -> Vec<f64> {
        self.stations.iter().map(|s| s.arrival_rate).collect()
    }

    pub fn mean_services(&self) -> Vec<f64> {
        self.stations.iter().map(|s| s.service.mean).collect()
    }

    pub fn station_loads(&self) -> Vec<f64> {
        self.stations.iter().map(StationParams::load).collect()
    }

    /// Total load `rho = sum_i lambda_i E[B_i]`.
    pub fn load(&self) -> f64 {
        self.stations.iter().map(StationParams::load).sum()
    }

    /// Rate-weighted service moment `b^(j) = sum lambda_i E[B_i^j] / sum lambda_i`.
    ///
    /// `order` must be 1 or 2. Returns NaN when every rate is zero.
    pub fn service_moment(&self, order: u8) -> f64 {
        let total: f64 = self.stations.iter().map(|s| s.arrival_rate).sum();
        let weighted: f64 = self
            .stations
            .iter()
            .map(|s| {
                let m = match order {
                    1 => s.service.mean,
                    2 => s.service.second_moment,
                    _ => panic!("service_moment order must be 1 or 2, got {order}"),
                };
                s.arrival_rate * m
            })
            .sum();
        weighted / total
    }

    /// `|b| = sum_i E[B_i]`.
    pub fn total_mean_service(&self) -> f64 {
        self.stations.iter().map(|s| s.service.mean).sum()
    }

    /// Mean server vacation per cycle, `r = sum_i (E[S_i] + G_i)`.
    pub fn cycle_overhead(&self) -> f64 {
        self.stations.iter().map(|s| s.switchover.mean + s.glue).sum()
    }

    /// Checks every invariant and reports all violations at once.
    pub fn validate(&self) -> Result<ValidatedConfig, ValidationErrors> {
        let mut errors = Vec::new();
        if self.stations.is_empty() {
            errors.push(ValidationError::EmptySystem);
        }
        for (i, s) in self.stations.iter().enumerate() {
            if !(s.arrival_rate.is_finite() && s.arrival_rate >= 0.0) {
                errors.push(ValidationError::NegativeArrivalRate { station: i, rate: s.arrival_rate });
            }
            if !(s.glue.is_finite() && s.glue > 0.0) {
                errors.push(ValidationError::NonPositiveGlue { station: i, glue: s.glue });
            }
            if !(s.retrial_rate.is_finite() && s.retrial_rate > 0.0) {
                errors.push(ValidationError::NonPositiveRetrialRate { station: i, rate: s.retrial_rate });
            }
            s.service.check(i, Role::Service, &mut errors);
            s.switchover.check(i, Role::Switchover, &mut errors);
        }
        if !errors.is_empty() {
            return Err(ValidationErrors(errors));
        }
        let derived = DerivedQuantities::of(self);
        Ok(ValidatedConfig { config: self.clone(), derived })
    }
}

/// Quantities that are pure functions of a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedQuantities {
    pub station_loads: Vec<f64>,
    pub load: f64,
    pub b1: f64,
    pub b2: f64,
    pub total_mean_service: f64,
    pub cycle_overhead: f64,
}

impl DerivedQuantities {
    fn of(config: &PollingConfig) -> Self {
        Self {
            station_loads: config.station_loads(),
            load: config.load(),
            b1: config.service_moment(1),
            b2: config.service_moment(2),
            total_mean_service: config.total_mean_service(),
            cycle_overhead: config.cycle_overhead(),
        }
    }
}

/// A configuration that passed [`PollingConfig::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedConfig {
    config: PollingConfig,
    derived: DerivedQuantities,
}

impl ValidatedConfig {
    pub fn config(&self) -> &PollingConfig {
        &self.config
    }

    pub fn derived(&self) -> &DerivedQuantities {
        &self.derived
    }

    /// `rho = 1`: admissible for the hatted quantities only.
    pub fn is_critical(&self) -> bool {
        (self.derived.load - 1.0).abs() <= 1e-12
    }

    pub fn is_stable(&self) -> bool {
        self.derived.load < 1.0 && !self.is_critical()
    }

    /// Extracts the traffic mix of this configuration.
    pub fn profile(&self) -> Result<LoadProfile, ValidationError> {
        LoadProfile::normalize(&self.config)
    }

    pub fn into_config(self) -> PollingConfig {
        self.config
    }
}

/// A single invariant violation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("the system has no stations")]
    EmptySystem,
    #[error("station {}: glue period must be positive, got {glue}", .station + 1)]
    NonPositiveGlue { station: usize, glue: f64 },
    #[error("station {}: retrial rate must be positive, got {rate}", .station + 1)]
    NonPositiveRetrialRate { station: usize, rate: f64 },
    #[error("station {}: arrival rate must be a nonnegative number, got {rate}", .station + 1)]
    NegativeArrivalRate { station: usize, rate: f64 },
    #[error("station {}: {role} mean must be positive, got {mean}", .station + 1)]
    NonPositiveMean { station: usize, role: Role, mean: f64 },
    #[error(
        "station {}: {role} moments (mean {mean}, second moment {second_moment}) are not valid for the {family} family",
        .station + 1
    )]
    InvalidMoments { station: usize, role: Role, family: Family, mean: f64, second_moment: f64 },
    #[error("all arrival rates are zero; the load cannot be normalized")]
    ZeroLoad,
}

/// Every violation found by [`PollingConfig::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationErrors(pub Vec<ValidationError>);

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} invalid parameter(s)", self.0.len())?;
        for e in &self.0 {
            write!(f, "\n  - {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationErrors {}

/// The traffic mix of a system at unit load: `lambda_i = rho * lambda_hat_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadProfile {
    /// Configuration carrying the normalized rates `lambda_hat_i`.
    unit: PollingConfig,
    /// Load of the configuration this profile was extracted from.
    source_load: f64,
}

impl LoadProfile {
    /// Divides every rate by the current load.
    pub fn normalize(config: &PollingConfig) -> Result<Self, ValidationError> {
        let load = config.load();
        if !(load > 0.0) {
            return Err(ValidationError::ZeroLoad);
        }
        let stations = config
            .stations
            .iter()
            .map(|s| StationParams { arrival_rate: s.arrival_rate / load, ..*s })
            .collect();
        Ok(Self { unit: PollingConfig { stations }, source_load: load })
    }

    /// Builds the system at total load `rho`.
    pub fn materialize(&self, rho: f64) -> PollingConfig {
        let stations = self
            .unit
            .stations
            .iter()
            .map(|s| StationParams { arrival_rate: rho * s.arrival_rate, ..*s })
            .collect();
        PollingConfig { stations }
    }

    /// The system at `rho = 1`, where all hatted quantities live.
    pub fn unit_config(&self) -> &PollingConfig {
        &self.unit
    }

    pub fn normalized_rates(&self) -> Vec<f64> {
        self.unit.arrival_rates()
    }

    /// `rho_hat_i = lambda_hat_i E[B_i]`; sums to one.
    pub fn normalized_loads(&self) -> Vec<f64> {
        self.unit.station_loads()
    }

    pub fn source_load(&self) -> f64 {
        self.source_load
    }

    pub fn len(&self) -> usize {
        self.unit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unit.is_empty()
    }
}

/// Errors raised while reading a configuration file.
#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{0}")]
    Invalid(#[from] ValidationErrors),
}

/// On-disk representation of a configuration.
///
/// ```toml
/// [[stations]]
/// lambda_hat = 0.1
/// service = { family = "exponential", mean = 1.0 }
/// switchover = { family = "gamma", mean = 2.0, scv = 0.5 }
/// glue = 3.0
/// retrial_rate = 5.0
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub stations: Vec<StationEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationEntry {
    pub lambda_hat: f64,
    pub service: DistributionEntry,
    pub switchover: DistributionEntry,
    pub glue: f64,
    pub retrial_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionEntry {
    pub family: Family,
    pub mean: f64,
    /// Squared coefficient of variation. Defaults to 1 for exponential and 0
    /// for deterministic laws; required for the other families.
    #[serde(default)]
    pub scv: Option<f64>,
}

impl DistributionEntry {
    fn to_distribution(&self) -> ServiceDistribution {
        let scv = self.scv.unwrap_or(match self.family {
            Family::Exponential => 1.0,
            Family::Deterministic => 0.0,
            // Rejected by validation as a degenerate law for these families.
            Family::Gamma | Family::TwoPoint => 0.0,
        });
        ServiceDistribution::with_scv(self.family, self.mean, scv)
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigFileError> {
        Ok(toml::from_str(text)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, ConfigFileError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigFileError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    /// The configuration with `lambda_i = lambda_hat_i`.
    pub fn to_config(&self) -> PollingConfig {
        let stations = self
            .stations
            .iter()
            .map(|e| StationParams {
                arrival_rate: e.lambda_hat,
                service: e.service.to_distribution(),
                switchover: e.switchover.to_distribution(),
                glue: e.glue,
                retrial_rate: e.retrial_rate,
            })
            .collect();
        PollingConfig { stations }
    }

    /// Parses, validates and normalizes in one step.
    pub fn load_profile(path: impl AsRef<Path>) -> Result<LoadProfile, ConfigFileError> {
        let validated = Self::read(path)?.to_config().validate()?;
        validated.profile().map_err(|e| ConfigFileError::Invalid(ValidationErrors(vec![e])))
    }
}

/// The five-station reference system: exponential services with mean 1 and
/// the given switch-over means, glue durations and retrial rates, at load 1.
pub fn five_station_example() -> PollingConfig {
    let rates = [0.1, 0.2, 0.3, 0.1, 0.3];
    let switch = [2.0, 3.0, 1.0, 5.0, 2.0];
    let glue = [3.0, 1.0, 2.0, 1.0, 2.0];
    let retrial = [5.0, 1.0, 3.0, 2.0, 1.0];
    let stations = (0..5)
        .map(|i| StationParams {
            arrival_rate: rates[i],
            service: ServiceDistribution::exponential(1.0),
            switchover: ServiceDistribution::exponential(switch[i]),
            glue: glue[i],
            retrial_rate: retrial[i],
        })
        .collect();
    PollingConfig { stations }
}

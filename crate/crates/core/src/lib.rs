//! Heavy-traffic analysis and simulation of cyclic polling systems whose
//! customers only join a queue when they retry during a short "glue" period
//! before the server's visit.

pub mod approx;
pub mod branching;
pub mod htlimits;
pub mod linalg;
pub mod model;
pub mod simulator;
pub mod stats;

pub use approx::{ApproxError, ApproxRow, ApproxTable, StationRef};
pub use branching::{BranchingError, BranchingSummary};
pub use htlimits::{Coordinate, EmbeddedLimit, GammaLaw, GammaMixtureLimit, WorkloadEpoch};
pub use linalg::SquareMatrix;
pub use model::{
    five_station_example, ConfigFile, ConfigFileError, Epoch, Family, LoadProfile, PollingConfig,
    ServiceDistribution, StationParams, ValidatedConfig, ValidationError, ValidationErrors,
};
pub use simulator::{SimError, SimEstimate, SimMode, SimOptions};

//! Random streams and duration samplers.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma};

use crate::model::{Family, ServiceDistribution};

/// Independent named streams derived from one root seed, so that switching
/// simulation mode does not perturb unrelated streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    Arrivals = 1,
    Services = 2,
    Switchovers = 3,
    Retrials = 4,
}

pub fn stream(seed: u64, kind: StreamKind, station: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((kind as u64) << 32) | station as u64);
    rng
}

/// Seeds for independent replications.
pub fn replication_seeds(seed: u64, reps: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    (0..reps).map(|_| rng.next_u64()).collect()
}

/// Exact sampler for a [`ServiceDistribution`].
#[derive(Debug, Clone, Copy)]
pub enum DurationSampler {
    Exponential(Exp<f64>),
    Deterministic(f64),
    Gamma(Gamma<f64>),
    /// `value` with probability `p`, otherwise zero.
    TwoPoint { value: f64, p: f64 },
}

impl DurationSampler {
    pub fn new(d: &ServiceDistribution) -> Self {
        match d.family {
            Family::Exponential => Self::Exponential(Exp::new(1.0 / d.mean).expect("positive mean")),
            Family::Deterministic => Self::Deterministic(d.mean),
            Family::Gamma => {
                let scv = d.scv();
                Self::Gamma(Gamma::new(1.0 / scv, d.mean * scv).expect("positive variance"))
            }
            Family::TwoPoint => {
                Self::TwoPoint { value: d.second_moment / d.mean, p: d.mean * d.mean / d.second_moment }
            }
        }
    }

    pub fn sample<R: RngCore>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Exponential(e) => e.sample(rng),
            Self::Deterministic(x) => *x,
            Self::Gamma(g) => g.sample(rng),
            Self::TwoPoint { value, p } => {
                let u: f64 = rand::Rng::random(rng);
                if u < *p {
                    *value
                } else {
                    0.0
                }
            }
        }
    }
}

/// Time of the first event of a rate-`rate` Poisson process, conditioned to
/// fall in `(0, horizon)`.
pub fn truncated_exponential<R: RngCore>(rng: &mut R, rate: f64, horizon: f64) -> f64 {
    let u: f64 = rand::Rng::random(rng);
    let mass = -(-rate * horizon).exp_m1();
    -(-u * mass).ln_1p() / rate
}

//! Heavy-traffic limit laws of the scaled queue-length vectors.
//!
//! Every limit is a (mixture of) coefficient vector(s) times a Gamma variable,
//! possibly with a uniformly interpolated correction. The coefficients are the
//! primary objects; sampling is derived from them.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use statrs::distribution::{ContinuousCDF, Gamma as GammaDist};

use crate::branching::BranchingSummary;
use crate::model::Epoch;

/// Relative tolerance for the identity `(1 - exp(-nu_i G_i)) u_i^(i) = lambda_i`.
const KAPPA_TOLERANCE: f64 = 1e-12;

/// Label of one coordinate of a limit vector. Stations are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Coordinate {
    /// Customers glued at the station, waiting for service in this visit.
    Queue(usize),
    /// Customers of the station in orbit.
    Orbit(usize),
    /// All customers of a station whose queue is empty at the epoch.
    Station(usize),
}

impl Coordinate {
    pub fn station(&self) -> usize {
        match *self {
            Coordinate::Queue(i) | Coordinate::Orbit(i) | Coordinate::Station(i) => i,
        }
    }

    /// Position in the joint layout `(queue 1..N, orbit 1..N)`. A
    /// [`Coordinate::Station`] maps to the orbit slot because its queue is
    /// empty.
    pub fn joint_index(&self, n: usize) -> usize {
        match *self {
            Coordinate::Queue(i) => i,
            Coordinate::Orbit(i) | Coordinate::Station(i) => n + i,
        }
    }
}

impl fmt::Display for Coordinate {
    /// One-based: `2q`, `2o`, `2`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Coordinate::Queue(i) => write!(f, "{}q", i + 1),
            Coordinate::Orbit(i) => write!(f, "{}o", i + 1),
            Coordinate::Station(i) => write!(f, "{}", i + 1),
        }
    }
}

/// The joint `(queue 1..N, orbit 1..N)` coordinate labels.
pub fn joint_coordinates(n: usize) -> Vec<Coordinate> {
    (0..n).map(Coordinate::Queue).chain((0..n).map(Coordinate::Orbit)).collect()
}

/// Limit of `(1 - rho)` times the vector at an embedded epoch:
/// `coefficients * Gamma(shape, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedLimit {
    pub epoch: Epoch,
    pub coordinates: Vec<Coordinate>,
    /// Already multiplied by the common scale `b2 / (2 b1 delta)`.
    pub coefficients: Vec<f64>,
    pub shape: f64,
}

impl EmbeddedLimit {
    pub fn coefficient(&self, c: Coordinate) -> Option<f64> {
        self.coordinates.iter().position(|&x| x == c).map(|k| self.coefficients[k])
    }

    pub fn means(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c * self.shape).collect()
    }

    pub fn variances(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c * c * self.shape).collect()
    }

    /// `sum_k coeff_k E[B_{station(k)}]`.
    pub fn workload_coefficient(&self, mean_service: &[f64]) -> f64 {
        self.coordinates.iter().zip(&self.coefficients).map(|(c, x)| x * mean_service[c.station()]).sum()
    }

    /// Coefficients placed in the joint `(queue, orbit)` layout.
    pub fn joint_coefficients(&self) -> Vec<f64> {
        let n = self.coordinates.iter().map(|c| c.station() + 1).max().unwrap_or(0);
        let mut out = vec![0.0; 2 * n];
        for (c, x) in self.coordinates.iter().zip(&self.coefficients) {
            out[c.joint_index(n)] += x;
        }
        out
    }

    /// The same law as a one-component mixture with a unit scale.
    pub fn as_mixture(&self) -> GammaMixtureLimit {
        GammaMixtureLimit {
            coordinates: self.coordinates.clone(),
            components: vec![MixtureComponent {
                probability: 1.0,
                base: self.coefficients.clone(),
                uniform: vec![0.0; self.coefficients.len()],
            }],
            shape: self.shape,
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pub probability: f64,
    pub base: Vec<f64>,
    pub uniform: Vec<f64>,
}

/// `scale (c_C + U d_C) Gamma(shape, 1)` with `C` drawn by the component
/// probabilities and `U` uniform on `[0, 1]`, all independent.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaMixtureLimit {
    pub coordinates: Vec<Coordinate>,
    pub components: Vec<MixtureComponent>,
    pub shape: f64,
    pub scale: f64,
}

impl GammaMixtureLimit {
    pub fn dim(&self) -> usize {
        self.coordinates.len()
    }

    pub fn means(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|k| {
                let m: f64 = self.components.iter().map(|c| c.probability * (c.base[k] + c.uniform[k] / 2.0)).sum();
                self.scale * self.shape * m
            })
            .collect()
    }

    pub fn variances(&self) -> Vec<f64> {
        let means = self.means();
        (0..self.dim())
            .map(|k| {
                let second: f64 = self
                    .components
                    .iter()
                    .map(|c| {
                        let (a, d) = (c.base[k], c.uniform[k]);
                        c.probability * (a * a + a * d + d * d / 3.0)
                    })
                    .sum();
                self.scale * self.scale * self.shape * (self.shape + 1.0) * second - means[k] * means[k]
            })
            .collect()
    }

    /// Law of the linear functional `sum_k weights_k X_k`, as a
    /// one-coordinate mixture.
    pub fn project(&self, weights: &[f64]) -> GammaMixtureLimit {
        assert_eq!(weights.len(), self.dim());
        let dot = |v: &[f64]| v.iter().zip(weights).map(|(a, b)| a * b).sum::<f64>();
        GammaMixtureLimit {
            coordinates: vec![Coordinate::Station(0)],
            components: self
                .components
                .iter()
                .map(|c| MixtureComponent {
                    probability: c.probability,
                    base: vec![dot(&c.base)],
                    uniform: vec![dot(&c.uniform)],
                })
                .collect(),
            shape: self.shape,
            scale: self.scale,
        }
    }

    /// `n` independent draws, reproducible from `seed`.
    pub fn sample(&self, seed: u64, n: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(&mut rng, n)
    }

    pub fn sample_with<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<Vec<f64>> {
        let gamma = Gamma::new(self.shape, 1.0).expect("positive shape");
        let mut cumulative = Vec::with_capacity(self.components.len());
        let mut acc = 0.0;
        for c in &self.components {
            acc += c.probability;
            cumulative.push(acc);
        }
        (0..n)
            .map(|_| {
                let pick: f64 = rng.random::<f64>() * acc;
                let idx = cumulative.iter().position(|&c| pick < c).unwrap_or(self.components.len() - 1);
                let comp = &self.components[idx];
                let u: f64 = rng.random();
                let g = gamma.sample(rng);
                comp.base.iter().zip(&comp.uniform).map(|(c, d)| self.scale * (c + u * d) * g).collect()
            })
            .collect()
    }
}

/// `scale * Gamma(shape, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaLaw {
    pub shape: f64,
    pub scale: f64,
}

impl GammaLaw {
    pub fn mean(&self) -> f64 {
        self.shape * self.scale
    }

    pub fn variance(&self) -> f64 {
        self.shape * self.scale * self.scale
    }

    pub fn cdf(&self, x: f64) -> f64 {
        GammaDist::new(self.shape, 1.0 / self.scale).expect("valid gamma").cdf(x)
    }

    pub fn sample(&self, seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gamma = Gamma::new(self.shape, self.scale).expect("valid gamma");
        (0..n).map(|_| gamma.sample(&mut rng)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkloadEpoch {
    CycleStart,
    Arbitrary,
}

fn check_station(summary: &BranchingSummary, i: usize) {
    assert!(i < summary.len(), "station {i} out of range for {} stations", summary.len());
}

/// Glue-start limit at station `i`: `scale * u^(i) * Gamma(alpha, 1)`.
pub fn glue_start_limit(summary: &BranchingSummary, i: usize) -> EmbeddedLimit {
    check_station(summary, i);
    let scale = summary.limit_scale();
    let u = &summary.u_vectors[i];
    EmbeddedLimit {
        epoch: Epoch::GlueStart(i),
        coordinates: (0..summary.len()).map(Coordinate::Station).collect(),
        coefficients: u.iter().map(|x| scale * x).collect(),
        shape: summary.alpha,
    }
}

/// Labels `(i queue, i orbit, others)` used by the visit-start limit.
fn visit_coordinates(n: usize, i: usize) -> Vec<Coordinate> {
    let mut coords = vec![Coordinate::Queue(i), Coordinate::Orbit(i)];
    coords.extend((0..n).filter(|&j| j != i).map(Coordinate::Station));
    coords
}

/// Visit-start limit at station `i`: the station's mass split into the glued
/// part `(1 - e_i)` and the part left in orbit `e_i`.
pub fn visit_start_limit(summary: &BranchingSummary, i: usize) -> EmbeddedLimit {
    check_station(summary, i);
    let scale = summary.limit_scale();
    let u = &summary.u_vectors[i];
    let coordinates = visit_coordinates(summary.len(), i);
    let coefficients = coordinates
        .iter()
        .map(|c| {
            scale
                * match *c {
                    Coordinate::Queue(_) => summary.stick[i] * u[i],
                    Coordinate::Orbit(_) => summary.miss[i] * u[i],
                    Coordinate::Station(j) => u[j],
                }
        })
        .collect();
    EmbeddedLimit { epoch: Epoch::VisitStart(i), coordinates, coefficients, shape: summary.alpha }
}

/// Switch-over-start limit after station `i`: the glued customers have been
/// served, and each brought `lambda_j E[B_i]` type-`j` arrivals into orbit.
pub fn switch_start_limit(summary: &BranchingSummary, i: usize) -> EmbeddedLimit {
    check_station(summary, i);
    let scale = summary.limit_scale();
    let u = &summary.u_vectors[i];
    let served = summary.stick[i] * u[i];
    let coefficients = (0..summary.len())
        .map(|j| {
            let before = if j == i { summary.miss[i] * u[i] } else { u[j] };
            scale * (before + served * summary.lambda_hat[j] * summary.mean_service[i])
        })
        .collect();
    EmbeddedLimit {
        epoch: Epoch::SwitchStart(i),
        coordinates: (0..summary.len()).map(Coordinate::Station).collect(),
        coefficients,
        shape: summary.alpha,
    }
}

/// Checks `(1 - e_i) u_i^(i) = lambda_i` to relative `1e-12`.
pub fn glued_mass_identity_holds(summary: &BranchingSummary, i: usize) -> bool {
    let glued = summary.stick[i] * summary.u_vectors[i][i];
    let lambda = summary.lambda_hat[i];
    (glued - lambda).abs() <= KAPPA_TOLERANCE * lambda.abs().max(f64::MIN_POSITIVE)
}

/// Base and uniform vectors (unscaled, joint layout) for an arbitrary moment
/// of a visit to station `i`.
fn visit_arbitrary_vectors(summary: &BranchingSummary, i: usize) -> MixtureComponent {
    assert!(
        glued_mass_identity_holds(summary, i),
        "glued mass at station {} differs from its arrival rate",
        i + 1
    );
    let n = summary.len();
    let u = &summary.u_vectors[i];
    let mut base = vec![0.0; 2 * n];
    let mut uniform = vec![0.0; 2 * n];
    base[i] = summary.stick[i] * u[i];
    uniform[i] = -summary.lambda_hat[i];
    for j in 0..n {
        base[n + j] = if j == i { summary.miss[i] * u[i] } else { u[j] };
        uniform[n + j] = summary.lambda_hat[j] * summary.rho_hat[i];
    }
    MixtureComponent { probability: summary.rho_hat[i], base, uniform }
}

/// Limit at an arbitrary moment of a visit to station `i`: the visit is
/// length-biased (shape `alpha + 1`) and a uniform fraction of it has elapsed.
pub fn visit_arbitrary_limit(summary: &BranchingSummary, i: usize) -> GammaMixtureLimit {
    check_station(summary, i);
    let mut component = visit_arbitrary_vectors(summary, i);
    component.probability = 1.0;
    GammaMixtureLimit {
        coordinates: joint_coordinates(summary.len()),
        components: vec![component],
        shape: summary.alpha + 1.0,
        scale: summary.limit_scale(),
    }
}

/// Limit at an arbitrary moment: the visit-arbitrary laws mixed with
/// probabilities `rho_hat_i`.
pub fn arbitrary_time_limit(summary: &BranchingSummary) -> GammaMixtureLimit {
    GammaMixtureLimit {
        coordinates: joint_coordinates(summary.len()),
        components: (0..summary.len()).map(|i| visit_arbitrary_vectors(summary, i)).collect(),
        shape: summary.alpha + 1.0,
        scale: summary.limit_scale(),
    }
}

/// Scaled total workload: `(b2 / 2 b1) Gamma(alpha, 1)` at cycle starts and
/// `(b2 / 2 b1) Gamma(alpha + 1, 1)` at an arbitrary moment.
pub fn workload_limit(summary: &BranchingSummary, at: WorkloadEpoch) -> GammaLaw {
    let shape = match at {
        WorkloadEpoch::CycleStart => summary.alpha,
        WorkloadEpoch::Arbitrary => summary.alpha + 1.0,
    };
    GammaLaw { shape, scale: summary.workload_scale() }
}

/// One row of the flattened limit report.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitRow {
    pub epoch: String,
    pub component: usize,
    pub coordinate: String,
    pub base_coeff: f64,
    pub uniform_coeff: f64,
    pub shape: f64,
    pub probability: f64,
    /// Conditional on the component.
    pub mean: f64,
    /// Conditional on the component.
    pub variance: f64,
}

fn mixture_rows(label: &str, limit: &GammaMixtureLimit, rows: &mut Vec<LimitRow>) {
    for (k, comp) in limit.components.iter().enumerate() {
        let single = GammaMixtureLimit {
            coordinates: limit.coordinates.clone(),
            components: vec![MixtureComponent { probability: 1.0, ..comp.clone() }],
            shape: limit.shape,
            scale: limit.scale,
        };
        let (means, vars) = (single.means(), single.variances());
        for (c, coord) in limit.coordinates.iter().enumerate() {
            rows.push(LimitRow {
                epoch: label.to_string(),
                component: k + 1,
                coordinate: coord.to_string(),
                base_coeff: limit.scale * comp.base[c],
                uniform_coeff: limit.scale * comp.uniform[c],
                shape: limit.shape,
                probability: comp.probability,
                mean: means[c],
                variance: vars[c],
            });
        }
    }
}

/// Every limit law flattened to rows, in a fixed order: embedded epochs per
/// station, visit-arbitrary per station, arbitrary time, then the two workload
/// laws.
pub fn limit_rows(summary: &BranchingSummary) -> Vec<LimitRow> {
    let mut rows = Vec::new();
    for i in 0..summary.len() {
        for limit in [glue_start_limit(summary, i), visit_start_limit(summary, i), switch_start_limit(summary, i)] {
            let label = format!("{}({})", limit.epoch.kind(), i + 1);
            mixture_rows(&label, &limit.as_mixture(), &mut rows);
        }
    }
    for i in 0..summary.len() {
        mixture_rows(&format!("visit_arbitrary({})", i + 1), &visit_arbitrary_limit(summary, i), &mut rows);
    }
    mixture_rows("arbitrary_time", &arbitrary_time_limit(summary), &mut rows);
    for (label, at) in [("workload_cycle_start", WorkloadEpoch::CycleStart), ("workload_arbitrary", WorkloadEpoch::Arbitrary)] {
        let law = workload_limit(summary, at);
        rows.push(LimitRow {
            epoch: label.to_string(),
            component: 1,
            coordinate: "workload".to_string(),
            base_coeff: law.scale,
            uniform_coeff: 0.0,
            shape: law.shape,
            probability: 1.0,
            mean: law.mean(),
            variance: law.variance(),
        });
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{five_station_example, LoadProfile, PollingConfig, ServiceDistribution, StationParams};

    fn five() -> BranchingSummary {
        BranchingSummary::compute(&LoadProfile::normalize(&five_station_example()).unwrap()).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn glue_start_matches_left_eigenvector() {
        let s = five();
        let l = glue_start_limit(&s, 0);
        let want = [0.1000, 0.2964, 0.2107, 0.0557, 0.1370];
        for (c, w) in l.coefficients.iter().zip(want) {
            assert!((c * s.delta - w).abs() < 1e-4);
        }
        assert!((l.shape - 17.5944538563).abs() < 1e-9);
        assert!(close(l.workload_coefficient(&s.mean_service), s.workload_scale(), 1e-12));
    }

    #[test]
    fn single_station_glue_start() {
        let c = PollingConfig::new(vec![StationParams {
            arrival_rate: 1.0,
            service: ServiceDistribution::exponential(1.0),
            switchover: ServiceDistribution::exponential(1.0),
            glue: 1.0,
            retrial_rate: 1.0,
        }]);
        let s = BranchingSummary::compute(&LoadProfile::normalize(&c).unwrap()).unwrap();
        let l = glue_start_limit(&s, 0);
        assert_eq!(l.coefficients.len(), 1);
        assert!(close(l.coefficients[0], s.limit_scale() * s.u_hat()[0], 1e-15));
    }

    #[test]
    fn visit_start_splits_glue_start() {
        let s = five();
        for i in 0..5 {
            let g = glue_start_limit(&s, i);
            let v = visit_start_limit(&s, i);
            assert_eq!(v.coordinates[0], Coordinate::Queue(i));
            let split = v.coefficient(Coordinate::Queue(i)).unwrap() + v.coefficient(Coordinate::Orbit(i)).unwrap();
            assert!(close(split, g.coefficients[i], 1e-12));
            for j in (0..5).filter(|&j| j != i) {
                assert_eq!(v.coefficient(Coordinate::Station(j)), Some(g.coefficients[j]));
            }
        }
        let v = visit_start_limit(&s, 0);
        let q = v.coefficient(Coordinate::Queue(0)).unwrap();
        assert!(close(q, (1.0 - (-15f64).exp()) * s.u_hat()[0] * s.limit_scale(), 1e-12));
    }

    #[test]
    fn switch_start_adds_arrivals_during_visit() {
        let s = five();
        let v = visit_start_limit(&s, 0);
        let w = switch_start_limit(&s, 0);
        let queue = v.coefficient(Coordinate::Queue(0)).unwrap();
        let added = w.coefficients[2] - v.coefficient(Coordinate::Station(2)).unwrap();
        assert!(close(added, queue * 0.3, 1e-12));
        assert!(close(added / s.limit_scale(), 0.1 * 0.3, 1e-6));
        assert!(close(w.workload_coefficient(&s.mean_service), s.workload_scale(), 1e-12));
    }

    #[test]
    fn visit_arbitrary_queue_mean() {
        let s = five();
        let l = visit_arbitrary_limit(&s, 0);
        let m = l.means();
        assert!(close(m[0], s.limit_scale() * (s.alpha + 1.0) * 0.05, 1e-12));
        assert!(l.components[0].base[0] + l.components[0].uniform[0] >= -1e-15);
    }

    #[test]
    fn visit_arbitrary_at_zero_is_visit_start() {
        let s = five();
        for i in 0..5 {
            let a = visit_arbitrary_limit(&s, i);
            let v = visit_start_limit(&s, i).joint_coefficients();
            for (x, y) in a.components[0].base.iter().zip(&v) {
                assert!(close(a.scale * x, *y, 1e-12));
            }
        }
    }

    #[test]
    fn arbitrary_time_workload_is_station_free() {
        let s = five();
        let l = arbitrary_time_limit(&s);
        let total: f64 = l.components.iter().map(|c| c.probability).sum();
        assert!(close(total, 1.0, 1e-14));
        let weights: Vec<f64> = s.mean_service.iter().chain(&s.mean_service).copied().collect();
        let w = l.project(&weights);
        for c in &w.components {
            assert!(close(w.scale * c.base[0], s.workload_scale(), 1e-12));
            assert!(c.uniform[0].abs() < 1e-14);
        }
        assert!(close(w.means()[0], s.workload_scale() * (s.alpha + 1.0), 1e-12));
    }

    #[test]
    fn workload_laws() {
        let s = five();
        let c = workload_limit(&s, WorkloadEpoch::CycleStart);
        let a = workload_limit(&s, WorkloadEpoch::Arbitrary);
        assert!(close(a.mean() / c.mean(), (s.alpha + 1.0) / s.alpha, 1e-14));
        assert!(close(a.mean(), 18.59445385634258, 1e-12));
        assert!(close(c.variance() / (c.mean() * c.mean()), 1.0 / s.alpha, 1e-14));
    }

    #[test]
    fn sampling_is_deterministic_and_unbiased() {
        let s = five();
        let l = arbitrary_time_limit(&s);
        let a = l.sample(7, 200);
        assert_eq!(a, l.sample(7, 200));
        assert_ne!(a, l.sample(8, 200));
        let n = 200_000;
        let draws = l.sample(11, n);
        let means = l.means();
        let vars = l.variances();
        for k in 0..l.dim() {
            let m: f64 = draws.iter().map(|d| d[k]).sum::<f64>() / n as f64;
            let se = (vars[k] / n as f64).sqrt();
            assert!((m - means[k]).abs() <= 4.0 * se + 1e-12, "coordinate {k}: {m} vs {}", means[k]);
        }
    }

    #[test]
    fn sample_variance_matches_closed_form() {
        let s = five();
        let l = visit_arbitrary_limit(&s, 2);
        let n = 200_000;
        let draws = l.sample(3, n);
        let vars = l.variances();
        for k in [2, 5, 7] {
            let m: f64 = draws.iter().map(|d| d[k]).sum::<f64>() / n as f64;
            let v: f64 = draws.iter().map(|d| (d[k] - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!(((v - vars[k]) / vars[k]).abs() < 0.03, "{k}: {v} vs {}", vars[k]);
        }
    }

    #[test]
    fn limit_rows_cover_every_law() {
        let s = five();
        let rows = limit_rows(&s);
        assert_eq!(rows.len(), 5 * (5 + 6 + 5) + 5 * 10 + 5 * 10 + 2);
        assert_eq!(rows[0].epoch, "glue_start(1)");
        assert_eq!(rows.last().unwrap().coordinate, "workload");
    }
}

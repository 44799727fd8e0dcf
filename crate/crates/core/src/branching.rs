//! Branching-process constants of the polling system.
//!
//! The joint number of customers at the start of the glue period of station 1
//! is a multitype branching process with immigration. Its mean matrix is the
//! product of per-station matrices, one for each visit in a cycle. Everything
//! the heavy-traffic limits need (Perron root, eigenvectors, the normalizing
//! constants and the Gamma shape) is computed here, mostly in closed form with
//! an independent second route where one exists.
//!
//! Station indices are zero-based throughout. Quantities at unit load
//! ("hatted") are always computed from a [`LoadProfile`], never from a
//! configuration with a load close to one.

use thiserror::Error;

use crate::linalg::{dot, SquareMatrix};
use crate::model::{LoadProfile, PollingConfig};

/// Maximum number of power iterations.
pub const MAX_POWER_ITERATIONS: usize = 100_000;
/// Stop once successive Perron root estimates differ by at most this much.
pub const POWER_TOLERANCE: f64 = 1e-13;
/// Step of the central difference used to check the derivative of the Perron root.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BranchingError {
    #[error("station index {index} out of range for a {n}-station system")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("power iteration did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("station {}: mean number of immigrants per cycle is {value}; every station needs arrivals", .station + 1)]
    DegenerateImmigration { station: usize, value: f64 },
    #[error("pi(xi) is defined for 0 < xi < 1 only, got {0}")]
    DomainError(f64),
}

/// The matrix describing one visit to station `index`: identity except for
/// row `index`, which holds the mean offspring `f_{i,j}` of a customer present
/// at the start of the glue period.
#[derive(Debug, Clone, PartialEq)]
pub struct StationMatrix {
    pub index: usize,
    pub matrix: SquareMatrix,
}

fn offspring_row(config: &PollingConfig, i: usize) -> Vec<f64> {
    let s = &config.stations[i];
    let stick = s.stick_probability();
    let mut row: Vec<f64> = config.stations.iter().map(|t| stick * t.arrival_rate * s.service.mean).collect();
    row[i] += s.miss_probability();
    row
}

pub fn station_matrix(config: &PollingConfig, index: usize) -> Result<StationMatrix, BranchingError> {
    let n = config.len();
    if index >= n {
        return Err(BranchingError::IndexOutOfRange { index, n });
    }
    let mut matrix = SquareMatrix::identity(n);
    for (j, f) in offspring_row(config, index).into_iter().enumerate() {
        matrix[(index, j)] = f;
    }
    Ok(StationMatrix { index, matrix })
}

/// Mean matrix of one cycle, `M = M_1 M_2 ... M_N`.
pub fn mean_matrix(config: &PollingConfig) -> SquareMatrix {
    let n = config.len();
    let mut m = SquareMatrix::identity(n);
    for i in 0..n {
        let step = station_matrix(config, i).expect("index in range");
        m = &m * &step.matrix;
    }
    m
}

/// Perron root of a nonnegative matrix by power iteration.
///
/// The iterate is kept on the probability simplex. Besides the stop rule on
/// successive estimates, the Collatz-Wielandt bracket `[min (Mv)_i/v_i,
/// max (Mv)_i/v_i]` must have closed to `1e-12` relative, so a slowly mixing
/// matrix does not stop early.
pub fn spectral_radius(m: &SquareMatrix, start: Option<&[f64]>) -> Result<f64, BranchingError> {
    let n = m.dim();
    let mut v: Vec<f64> = match start {
        Some(s) => s.iter().map(|x| x.abs()).collect(),
        None => vec![1.0; n],
    };
    let total: f64 = v.iter().sum();
    if !(total > 0.0) {
        v = vec![1.0; n];
    }
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);

    let mut previous = f64::NAN;
    for _ in 0..MAX_POWER_ITERATIONS {
        let y = m.mul_vec(&v);
        let xi: f64 = y.iter().sum();
        if !(xi.is_finite() && xi > 0.0) {
            break;
        }
        let (lo, hi) = y.iter().zip(&v).filter(|(_, &vi)| vi > 0.0).fold(
            (f64::INFINITY, f64::NEG_INFINITY),
            |(lo, hi), (yi, vi)| {
                let r = yi / vi;
                (lo.min(r), hi.max(r))
            },
        );
        v = y.into_iter().map(|x| x / xi).collect();
        if (xi - previous).abs() <= POWER_TOLERANCE && hi - lo <= 1e-12 * xi {
            return Ok(xi);
        }
        previous = xi;
    }
    Err(BranchingError::NoConvergence { iterations: MAX_POWER_ITERATIONS })
}

/// `xi(rho)`: Perron root of the mean matrix at load `rho`.
pub fn perron_root(profile: &LoadProfile, rho: f64) -> Result<f64, BranchingError> {
    let w = right_eigenvector(profile.unit_config());
    spectral_radius(&mean_matrix(&profile.materialize(rho)), Some(&w))
}

/// `w_hat = b / |b|`.
pub fn right_eigenvector(config: &PollingConfig) -> Vec<f64> {
    let b = config.mean_services();
    let total: f64 = b.iter().sum();
    b.into_iter().map(|x| x / total).collect()
}

/// Left eigenvector `u^(start)` of the unit-load mean matrix when the cycle is
/// taken to begin with the glue period of station `start`.
///
/// `start` ranges over `0..=N`; `start = 0` and `start = N` both give `u_hat`.
pub fn left_eigenvector(config: &PollingConfig, start: usize) -> Vec<f64> {
    let n = config.len();
    assert!(start <= n, "start {start} out of range 0..={n}");
    let loads = config.station_loads();
    config
        .stations
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let base = s.miss_probability() / s.stick_probability();
            let tail: f64 = if start <= j {
                loads[j..].iter().sum::<f64>() + loads[..start].iter().sum::<f64>()
            } else {
                loads[j..start].iter().sum()
            };
            s.arrival_rate * (base + tail)
        })
        .collect()
}

/// Second expression for `u_j` via the exhaustiveness factors
/// `f_j = (1 - exp(-nu_j G_j)) (1 - rho_j)`:
/// `u_j = lambda_j [ (1 - rho_j)(1 - f_j)/f_j + sum_{k>j} rho_k ]`.
///
/// Undefined (non-finite) when some `rho_j = 1`.
pub fn left_eigenvector_from_exhaustiveness(config: &PollingConfig) -> Vec<f64> {
    let loads = config.station_loads();
    let f = exhaustiveness(config);
    config
        .stations
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let tail: f64 = loads[j + 1..].iter().sum();
            s.arrival_rate * ((1.0 - loads[j]) * (1.0 - f[j]) / f[j] + tail)
        })
        .collect()
}

/// Exhaustiveness factors `f_j = (1 - exp(-nu_j G_j)) (1 - rho_j)`.
pub fn exhaustiveness(config: &PollingConfig) -> Vec<f64> {
    config.stations.iter().map(|s| s.stick_probability() * (1.0 - s.load())).collect()
}

/// Eigen quantities of the unit-load mean matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenData {
    pub w_hat: Vec<f64>,
    /// `u_vectors[s]` is the left eigenvector for a cycle starting at the glue
    /// period of station `s`, for `s = 0..=N`.
    pub u_vectors: Vec<Vec<f64>>,
    /// `delta = u_hat . b`, identical for every starting station.
    pub delta: f64,
}

impl EigenData {
    pub fn u_hat(&self) -> &[f64] {
        &self.u_vectors[0]
    }

    /// `v_hat = |b| u_hat / delta`, normalized so that `v_hat . w_hat = 1`.
    pub fn v_hat(&self) -> Vec<f64> {
        // u_hat . w_hat = delta / |b|
        let uw = dot(self.u_hat(), &self.w_hat);
        self.u_hat().iter().map(|u| u / uw).collect()
    }
}

pub fn left_right_eigenvectors(profile: &LoadProfile) -> EigenData {
    let unit = profile.unit_config();
    let n = unit.len();
    let w_hat = right_eigenvector(unit);
    let u_vectors: Vec<Vec<f64>> = (0..=n).map(|s| left_eigenvector(unit, s)).collect();
    let delta = dot(&u_vectors[0], &unit.mean_services());
    EigenData { w_hat, u_vectors, delta }
}

/// Derivative of the Perron root at unit load, analytic and numerical.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerronDerivative {
    /// `1 / delta`.
    pub analytic: f64,
    /// `(xi(1 + h) - xi(1 - h)) / 2h` with `h = FD_STEP`.
    pub finite_difference: f64,
}

impl PerronDerivative {
    pub fn relative_gap(&self) -> f64 {
        ((self.finite_difference - self.analytic) / self.analytic).abs()
    }
}

pub fn xi_prime_at_1(profile: &LoadProfile) -> Result<PerronDerivative, BranchingError> {
    let eig = left_right_eigenvectors(profile);
    let up = perron_root(profile, 1.0 + FD_STEP)?;
    let down = perron_root(profile, 1.0 - FD_STEP)?;
    Ok(PerronDerivative { analytic: 1.0 / eig.delta, finite_difference: (up - down) / (2.0 * FD_STEP) })
}

/// Second-order offspring derivatives `k^(i)_{j,k}` at unit load, stored
/// densely.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondMomentTensor {
    n: usize,
    data: Vec<f64>,
}

impl SecondMomentTensor {
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.n + j) * self.n + k]
    }

    fn slice(&self, i: usize) -> &[f64] {
        &self.data[i * self.n * self.n..(i + 1) * self.n * self.n]
    }

    /// `x^T K^(i) x`
    pub fn quadratic_form(&self, i: usize, x: &[f64]) -> f64 {
        let k = self.slice(i);
        let mut total = 0.0;
        for j in 0..self.n {
            total += x[j] * dot(&k[j * self.n..(j + 1) * self.n], x);
        }
        total
    }

    pub fn dim(&self) -> usize {
        self.n
    }
}

/// Backward recursion over the stations, last station first:
///
/// `k^(i)_{j,k} = E[B_i^2] / (E[B_i]^2 (1 - e_i)) (m_ij - [j=i] e_i)(m_ik - [k=i] e_i)
///              + (1 - e_i) E[B_i] sum_{c>i} lambda_c k^(c)_{j,k}`
///
/// with `e_i = exp(-nu_i G_i)` and `m` the unit-load mean matrix.
pub fn second_moment_tensor(profile: &LoadProfile) -> SecondMomentTensor {
    let unit = profile.unit_config();
    let n = unit.len();
    let m = mean_matrix(unit);
    let mut data = vec![0.0; n * n * n];
    for i in (0..n).rev() {
        let s = &unit.stations[i];
        let miss = s.miss_probability();
        let stick = s.stick_probability();
        let coef = s.service.second_moment / (s.service.mean * s.service.mean * stick);
        let a: Vec<f64> = (0..n).map(|j| m[(i, j)] - if j == i { miss } else { 0.0 }).collect();
        for j in 0..n {
            for k in 0..n {
                let carried: f64 = (i + 1..n)
                    .map(|c| unit.stations[c].arrival_rate * data[(c * n + j) * n + k])
                    .sum();
                data[(i * n + j) * n + k] = coef * a[j] * a[k] + stick * s.service.mean * carried;
            }
        }
    }
    SecondMomentTensor { n, data }
}

/// `A = b2 / (2 delta |b| b1)`.
pub fn variance_constant(profile: &LoadProfile) -> f64 {
    let unit = profile.unit_config();
    let delta = left_right_eigenvectors(profile).delta;
    unit.service_moment(2) / (2.0 * delta * unit.total_mean_service() * unit.service_moment(1))
}

/// `A = 1/2 sum_i v_hat_i (w_hat^T K^(i) w_hat)`, assembled from the tensor.
pub fn variance_constant_from_tensor(profile: &LoadProfile) -> f64 {
    let eig = left_right_eigenvectors(profile);
    let tensor = second_moment_tensor(profile);
    let v_hat = eig.v_hat();
    0.5 * (0..tensor.dim()).map(|i| v_hat[i] * tensor.quadratic_form(i, &eig.w_hat)).sum::<f64>()
}

/// Mean number of type-`i` descendants, at the start of the next cycle, of
/// one type-`k` customer served in the current cycle:
/// `d_{k,i} = E[B_k] (lambda_i [i <= k] + sum_{j>k} lambda_j m_{j,i})`.
///
/// Relates to the mean matrix by `m_{k,i} = (1 - e_k) d_{k,i} + e_k [i = k]`.
pub fn served_descendants(config: &PollingConfig) -> SquareMatrix {
    let n = config.len();
    let m = mean_matrix(config);
    let st = &config.stations;
    let mut d = SquareMatrix::zeros(n);
    for k in 0..n {
        for i in 0..n {
            let own = if i <= k { st[i].arrival_rate } else { 0.0 };
            let later: f64 = (k + 1..n).map(|j| st[j].arrival_rate * m[(j, i)]).sum();
            d[(k, i)] = st[k].service.mean * (own + later);
        }
    }
    d
}

/// Mean number of immigrants of each type per cycle at the configuration's
/// own rates. Sums over an empty index range are zero.
///
/// Immigrants are the customers arriving while the server is not working.
/// Type-`k` arrivals before the glue period of station `k` are in orbit when
/// it starts and contribute `m_{k,i}`; those arriving during it are all
/// served and contribute `d_{k,i}` (see [`served_descendants`]); type-`i`
/// arrivals after the visit to station `i` are carried over as they are.
pub fn immigration_vector(config: &PollingConfig) -> Result<Vec<f64>, BranchingError> {
    let n = config.len();
    let m = mean_matrix(config);
    let d = served_descendants(config);
    let st = &config.stations;
    // before[k] = sum_{j<k} (G_j + E[S_j])
    let mut before = vec![0.0; n + 1];
    for k in 0..n {
        before[k + 1] = before[k] + st[k].glue + st[k].switchover.mean;
    }
    (0..n)
        .map(|i| {
            let pre_visit: f64 = (0..n)
                .map(|k| st[k].arrival_rate * (before[k] * m[(k, i)] + st[k].glue * d[(k, i)]))
                .sum();
            let switch_after: f64 = st[i..].iter().map(|s| s.switchover.mean).sum();
            let glue_after: f64 = st[i + 1..].iter().map(|s| s.glue).sum();
            let g = pre_visit + st[i].arrival_rate * (switch_after + glue_after);
            if g > 0.0 && g.is_finite() {
                Ok(g)
            } else {
                Err(BranchingError::DegenerateImmigration { station: i, value: g })
            }
        })
        .collect()
}

/// Gamma shape `alpha = 2 r delta b1 / b2`.
pub fn alpha(profile: &LoadProfile) -> f64 {
    let unit = profile.unit_config();
    let delta = left_right_eigenvectors(profile).delta;
    2.0 * unit.cycle_overhead() * delta * unit.service_moment(1) / unit.service_moment(2)
}

/// `alpha = g_hat . w_hat / A`, through the immigration vector.
pub fn alpha_from_immigration(profile: &LoadProfile) -> Result<f64, BranchingError> {
    let unit = profile.unit_config();
    let g = immigration_vector(unit)?;
    Ok(dot(&g, &right_eigenvector(unit)) / variance_constant(profile))
}

/// `pi(xi) = 1 / (xi (1 - xi))`, the limit of `pi_n(xi) = sum_{r=1}^n xi^(r-2)`.
pub fn pi_limit(xi: f64) -> Result<f64, BranchingError> {
    if xi > 0.0 && xi < 1.0 {
        Ok(1.0 / (xi * (1.0 - xi)))
    } else {
        Err(BranchingError::DomainError(xi))
    }
}

/// One point of the `(1 - rho) pi(xi(rho)) -> delta` diagnostic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiConvergencePoint {
    pub rho: f64,
    pub xi: f64,
    pub scaled_pi: f64,
    pub relative_gap: f64,
}

pub fn pi_convergence(profile: &LoadProfile, rhos: &[f64]) -> Result<Vec<PiConvergencePoint>, BranchingError> {
    let delta = left_right_eigenvectors(profile).delta;
    rhos.iter()
        .map(|&rho| {
            let xi = perron_root(profile, rho)?;
            let scaled_pi = (1.0 - rho) * pi_limit(xi)?;
            Ok(PiConvergencePoint { rho, xi, scaled_pi, relative_gap: ((scaled_pi - delta) / delta).abs() })
        })
        .collect()
}

/// All branching constants of a profile.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchingSummary {
    pub lambda_hat: Vec<f64>,
    pub rho_hat: Vec<f64>,
    pub mean_service: Vec<f64>,
    /// `exp(-nu_i G_i)`
    pub miss: Vec<f64>,
    /// `1 - exp(-nu_i G_i)`
    pub stick: Vec<f64>,
    /// Mean matrix at unit load.
    pub mean_matrix: SquareMatrix,
    /// Perron root of `mean_matrix` by power iteration (equals 1).
    pub xi: f64,
    pub w_hat: Vec<f64>,
    pub u_vectors: Vec<Vec<f64>>,
    pub delta: f64,
    pub a: f64,
    pub alpha: f64,
    pub g_hat: Vec<f64>,
    pub exhaustiveness: Vec<f64>,
    pub b1: f64,
    pub b2: f64,
    pub abs_b: f64,
    pub r: f64,
}

impl BranchingSummary {
    pub fn compute(profile: &LoadProfile) -> Result<Self, BranchingError> {
        let unit = profile.unit_config();
        let eig = left_right_eigenvectors(profile);
        let mean_matrix = mean_matrix(unit);
        let xi = spectral_radius(&mean_matrix, Some(&eig.w_hat))?;
        Ok(Self {
            lambda_hat: unit.arrival_rates(),
            rho_hat: unit.station_loads(),
            mean_service: unit.mean_services(),
            miss: unit.stations.iter().map(|s| s.miss_probability()).collect(),
            stick: unit.stations.iter().map(|s| s.stick_probability()).collect(),
            mean_matrix,
            xi,
            w_hat: eig.w_hat.clone(),
            u_vectors: eig.u_vectors.clone(),
            delta: eig.delta,
            a: variance_constant(profile),
            alpha: alpha(profile),
            g_hat: immigration_vector(unit)?,
            exhaustiveness: exhaustiveness(unit),
            b1: unit.service_moment(1),
            b2: unit.service_moment(2),
            abs_b: unit.total_mean_service(),
            r: unit.cycle_overhead(),
        })
    }

    pub fn len(&self) -> usize {
        self.lambda_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda_hat.is_empty()
    }

    pub fn u_hat(&self) -> &[f64] {
        &self.u_vectors[0]
    }

    /// `b2 / (2 b1)`: scale of the limiting workload.
    pub fn workload_scale(&self) -> f64 {
        self.b2 / (2.0 * self.b1)
    }

    /// `b2 / (2 b1 delta)`: common scale of every queue-length limit.
    pub fn limit_scale(&self) -> f64 {
        self.workload_scale() / self.delta
    }

    pub fn v_hat(&self) -> Vec<f64> {
        self.u_hat().iter().map(|u| self.abs_b * u / self.delta).collect()
    }
}

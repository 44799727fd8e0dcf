//! Output analysis: batch-means confidence intervals, lag-1 autocorrelation
//! and the Kolmogorov-Smirnov test.

use statrs::distribution::{ContinuousCDF, StudentsT};

/// Confidence intervals are only reported with at least this many batches.
pub const MIN_BATCHES: usize = 20;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two points.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Two-sided Student t quantile, e.g. `t_quantile(0.975, 29)`.
pub fn t_quantile(p: f64, df: usize) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64).expect("positive degrees of freedom").inverse_cdf(p)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub mean: f64,
    /// 95% half-width; `None` with fewer than [`MIN_BATCHES`] batches.
    pub half_width: Option<f64>,
    pub batches: usize,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.half_width.is_some_and(|h| (x - self.mean).abs() <= h)
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        match (self.half_width, other.half_width) {
            (Some(a), Some(b)) => (self.mean - other.mean).abs() <= a + b,
            _ => false,
        }
    }
}

/// 95% t-interval from independent (batch) means.
pub fn batch_interval(batch_means: &[f64]) -> Interval {
    let b = batch_means.len();
    let m = if b == 0 { f64::NAN } else { mean(batch_means) };
    let half_width =
        (b >= MIN_BATCHES).then(|| t_quantile(0.975, b - 1) * (variance(batch_means) / b as f64).sqrt());
    Interval { mean: m, half_width, batches: b }
}

/// 95% t-interval with no minimum count, for pooling a few independent
/// replications.
pub fn replication_interval(means: &[f64]) -> Interval {
    let r = means.len();
    let m = if r == 0 { f64::NAN } else { mean(means) };
    let half_width = (r >= 2).then(|| t_quantile(0.975, r - 1) * (variance(means) / r as f64).sqrt());
    Interval { mean: m, half_width, batches: r }
}

pub fn lag1_autocorrelation(xs: &[f64]) -> f64 {
    if xs.len() < 3 {
        return 0.0;
    }
    let m = mean(xs);
    let denom: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    if denom == 0.0 {
        return 0.0;
    }
    xs.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum::<f64>() / denom
}

/// Two-sided one-sample Kolmogorov-Smirnov statistic `sup |F_n - F|`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(k, &x)| {
            let f = cdf(x);
            (f - k as f64 / n).max((k + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of the Kolmogorov distribution with Stephens'
/// finite-sample correction.
pub fn kolmogorov_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> KsResult {
    let statistic = ks_statistic(samples, cdf);
    KsResult { statistic, p_value: kolmogorov_p_value(statistic, samples.len()), n: samples.len() }
}

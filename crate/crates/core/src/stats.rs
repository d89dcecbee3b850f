//! Small statistics toolbox: log-sum-exp, moments, KS test, bootstrap,
//! Wilson intervals.

use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// `log Σ exp(x_i)`; `-∞` for an empty slice or all `-∞`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log( n^{-1} Σ exp(x_i) )`.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    log_sum_exp(xs) - (xs.len() as f64).ln()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

fn central_moments(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let m = mean(xs);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in xs {
        let d = x - m;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    (m2 / n, m3 / n, m4 / n)
}

/// Moment skewness `m3 / m2^{3/2}`.
pub fn skewness(xs: &[f64]) -> f64 {
    let (m2, m3, _) = central_moments(xs);
    if m2 == 0.0 {
        0.0
    } else {
        m3 / m2.powf(1.5)
    }
}

/// Excess kurtosis `m4 / m2² − 3`.
pub fn excess_kurtosis(xs: &[f64]) -> f64 {
    let (m2, _, m4) = central_moments(xs);
    if m2 == 0.0 {
        0.0
    } else {
        m4 / (m2 * m2) - 3.0
    }
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Linear-interpolation sample quantile (type 7).
pub fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    sorted_quantile(&v, p)
}

fn sorted_quantile(v: &[f64], p: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let h = (v.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample Kolmogorov–Smirnov test against `cdf`.
pub fn ks_test(xs: &[f64], cdf: impl Fn(f64) -> f64) -> KsResult {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in v.iter().enumerate() {
        let f = cdf(*x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sn = n.sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    KsResult { statistic: d, p_value: kolmogorov_survival(lambda) }
}

pub fn ks_normal(xs: &[f64]) -> KsResult {
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    ks_test(xs, |x| n.cdf(x))
}

/// `P[K > λ] = 2 Σ (−1)^{k−1} e^{−2k²λ²}`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Percentile bootstrap interval for `stat` at coverage `level`.
pub fn bootstrap_percentile<R: Rng + ?Sized>(
    xs: &[f64],
    stat: impl Fn(&[f64]) -> f64,
    resamples: usize,
    level: f64,
    rng: &mut R,
) -> Result<Interval> {
    let mut buf = vec![0.0; xs.len()];
    bootstrap_indices(xs.len(), resamples, level, rng, |idx| {
        for (b, &i) in buf.iter_mut().zip(idx) {
            *b = xs[i];
        }
        stat(&buf)
    })
}

/// Percentile bootstrap over resampled index vectors, for statistics that
/// need several aligned columns.
pub fn bootstrap_indices<R: Rng + ?Sized>(
    n: usize,
    resamples: usize,
    level: f64,
    rng: &mut R,
    mut stat: impl FnMut(&[usize]) -> f64,
) -> Result<Interval> {
    if n == 0 || resamples == 0 {
        return Err(Error::invalid("bootstrap needs data and at least one resample"));
    }
    let mut idx = vec![0usize; n];
    let mut stats = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        for i in idx.iter_mut() {
            *i = rng.gen_range(0..n);
        }
        stats.push(stat(&idx));
    }
    stats.sort_by(|a, b| a.total_cmp(b));
    let alpha = 0.5 * (1.0 - level);
    Ok(Interval { lo: sorted_quantile(&stats, alpha), hi: sorted_quantile(&stats, 1.0 - alpha) })
}

/// Unbiased sample covariance.
pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let (mx, my) = (mean(xs), mean(ys));
    xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (n - 1) as f64
}

/// Wilson score interval for `k` successes out of `n` at normal quantile `z`.
pub fn wilson(k: u64, n: u64, z: f64) -> Interval {
    if n == 0 {
        return Interval { lo: 0.0, hi: 1.0 };
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    Interval { lo: (centre - half).max(0.0), hi: (centre + half).min(1.0) }
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn lse_handles_extremes() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, 0.0]), 0.0);
    }

    #[test]
    fn moments_of_known_sample() {
        let xs = [1.0, 2.0, 3.0, 4.0, 10.0];
        assert_eq!(mean(&xs), 4.0);
        assert!((std_dev(&xs) - 12.5f64.sqrt()).abs() < 1e-12);
        assert!(skewness(&xs) > 1.0);
        assert_eq!(median(&xs), 3.0);
        assert_eq!(quantile(&[0.0, 1.0], 0.25), 0.25);
    }

    #[test]
    fn kolmogorov_tail_values() {
        assert!((kolmogorov_survival(1.36) - 0.0494).abs() < 1e-3);
        assert!((kolmogorov_survival(1.63) - 0.0098).abs() < 1e-3);
    }

    #[test]
    fn ks_accepts_normals_and_rejects_shift() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<f64> = (0..2000).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert!(ks_normal(&xs).p_value > 0.01);
        let shifted: Vec<f64> = xs.iter().map(|x| x + 0.3).collect();
        assert!(ks_normal(&shifted).p_value < 1e-6);
        assert!(skewness(&xs).abs() < 0.2 && excess_kurtosis(&xs).abs() < 0.5);
    }

    #[test]
    fn wilson_interval_reference() {
        let w = wilson(0, 100, 1.959963984540054);
        assert!(w.lo < 1e-15);
        assert!((w.hi - 0.036994).abs() < 1e-5);
        let w = wilson(50, 100, 1.959963984540054);
        assert!((w.lo - 0.403832).abs() < 1e-5);
    }

    #[test]
    fn bootstrap_covers_mean() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<f64> = (0..400).map(|_| StandardNormal.sample(&mut rng)).collect();
        let iv = bootstrap_percentile(&xs, mean, 1000, 0.95, &mut rng).unwrap();
        assert!(iv.contains(mean(&xs)));
        assert!(iv.hi - iv.lo < 0.3);
    }
}

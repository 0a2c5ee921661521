//! Descriptive statistics, order statistics, Kolmogorov-Smirnov tests and
//! explicit-edge histograms.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

#[inline]
fn cmp<T: Real>(a: &T, b: &T) -> Ordering {
    a.partial_cmp(b).unwrap_or(Ordering::Equal)
}

pub fn sorted<T: Real>(values: &[T]) -> Vec<T> {
    let mut v = values.to_vec();
    v.sort_by(cmp);
    v
}

pub fn mean<T: Real>(values: &[T]) -> T {
    if values.is_empty() {
        return T::nan();
    }
    values.iter().copied().sum::<T>() / T::of_usize(values.len())
}

/// Population (1/n) variance.
pub fn variance<T: Real>(values: &[T]) -> T {
    if values.is_empty() {
        return T::nan();
    }
    let m = mean(values);
    values.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / T::of_usize(values.len())
}

/// Population (1/n) standard deviation.
pub fn std_dev<T: Real>(values: &[T]) -> T {
    variance(values).sqrt()
}

/// Median with the midpoint convention for even counts.
pub fn median<T: Real>(values: &[T]) -> T {
    let n = values.len();
    if n == 0 {
        return T::nan();
    }
    let mut v = values.to_vec();
    let (_, &mut upper, _) = v.select_nth_unstable_by(n / 2, cmp);
    if n % 2 == 1 {
        upper
    } else {
        let lower = v[..n / 2].iter().copied().fold(T::neg_infinity(), T::max);
        (lower + upper) / T::of(2.0)
    }
}

/// Nearest-rank order statistic: the value at rank `ceil(q * n)` (1-based,
/// clamped to `1..=n`) of the sample, `q` in `[0, 1]`.
pub fn nearest_rank<T: Real>(values: &[T], q: f64) -> T {
    let n = values.len();
    if n == 0 {
        return T::nan();
    }
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    let mut v = values.to_vec();
    let (_, &mut x, _) = v.select_nth_unstable_by(rank - 1, cmp);
    x
}

/// Window percentile used for percentile series: `p = 50` is the midpoint
/// median, every other `p` in `(0, 100]` is nearest-rank (so `p = 100` is
/// the exact maximum).
pub fn percentile<T: Real>(values: &[T], p: f64) -> T {
    if values.is_empty() {
        return T::nan();
    }
    if p == 50.0 {
        median(values)
    } else if p >= 100.0 {
        values.iter().copied().fold(T::neg_infinity(), T::max)
    } else {
        nearest_rank(values, p / 100.0)
    }
}

/// Sample autocorrelation at `lag` (population normalization).
pub fn autocorrelation<T: Real>(values: &[T], lag: usize) -> T {
    let n = values.len();
    if lag >= n {
        return T::nan();
    }
    let m = mean(values);
    let denom: T = values.iter().map(|&v| (v - m) * (v - m)).sum();
    let num: T = (lag..n).map(|i| (values[i] - m) * (values[i - lag] - m)).sum();
    num / denom
}

/// Survival function of the Kolmogorov distribution, `P(K > lambda)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample KS test against `Uniform(0, 1)`.
pub fn ks_uniform(samples: &[f64]) -> KsResult {
    let v = sorted(samples);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let f = x.clamp(0.0, 1.0);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sn = n.sqrt();
    KsResult { statistic: d, p_value: kolmogorov_survival((sn + 0.12 + 0.11 / sn) * d) }
}

/// Two-sample KS test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let a = sorted(a);
    let b = sorted(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = (na * nb / (na + nb)).sqrt();
    KsResult { statistic: d, p_value: kolmogorov_survival((ne + 0.12 + 0.11 / ne) * d) }
}

/// Histogram with explicit bin edges. Bin `i` is `[edges[i], edges[i+1])`,
/// the last bin is closed on the right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Samples outside `[edges[0], edges[last]]` or non-finite.
    pub outside: u64,
}

impl Histogram {
    pub fn with_edges(edges: Vec<f64>, values: impl IntoIterator<Item = f64>) -> Self {
        assert!(edges.len() >= 2, "histogram needs at least one bin");
        let bins = edges.len() - 1;
        let mut counts = vec![0u64; bins];
        let mut outside = 0;
        let (lo, hi) = (edges[0], edges[bins]);
        for v in values {
            if !v.is_finite() || v < lo || v > hi {
                outside += 1;
                continue;
            }
            // partition_point gives the first edge strictly greater than v
            let idx = edges.partition_point(|&e| e <= v).saturating_sub(1).min(bins - 1);
            counts[idx] += 1;
        }
        Histogram { edges, counts, outside }
    }

    /// `bins` equal-width bins spanning `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, bins: usize, values: impl IntoIterator<Item = f64>) -> Self {
        let bins = bins.max(1);
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        let w = (hi - lo) / bins as f64;
        let mut edges: Vec<f64> = (0..bins).map(|i| lo + w * i as f64).collect();
        edges.push(hi);
        Self::with_edges(edges, values)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// CSV with columns `lo,hi,count`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("lo,hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            s.push_str(&format!("{},{},{}\n", self.edges[i], self.edges[i + 1], c));
        }
        s
    }
}

/// Finite min and max over several samples, for shared histogram ranges.
pub fn finite_range<'a>(samples: impl IntoIterator<Item = &'a [f64]>) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in samples {
        for &v in s.iter().filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    (lo <= hi).then_some((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_midpoint_convention() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[7.0f32]), 7.0);
    }

    #[test]
    fn percentile_conventions() {
        let w = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&w, 100.0), 4.0);
        assert_eq!(percentile(&w, 50.0), 2.5);
        // nearest rank: ceil(0.99 * 4) = 4
        assert_eq!(percentile(&w, 99.0), 4.0);
        let w: Vec<f64> = (1..=200).map(f64::from).collect();
        // ceil(0.99 * 200) = 198
        assert_eq!(percentile(&w, 99.0), 198.0);
    }

    #[test]
    fn nearest_rank_clamps() {
        assert_eq!(nearest_rank(&[5.0, 1.0], 0.0), 1.0);
        assert_eq!(nearest_rank(&[5.0, 1.0], 1.0), 5.0);
    }

    #[test]
    fn population_moments() {
        assert_eq!(std_dev(&[0.0, 2.0]), 1.0);
        assert_eq!(variance(&[3.0, 3.0, 3.0]), 0.0);
    }

    #[test]
    fn kolmogorov_known_values() {
        // Q(1.36) ~= 0.049 and Q(1.63) ~= 0.0098 are the classic 5% / 1% points.
        assert!((kolmogorov_survival(1.358) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_survival(1.628) - 0.01).abs() < 1e-3);
    }

    #[test]
    fn ks_detects_nonuniform() {
        let u: Vec<f64> = (0..200).map(|i| (i as f64 + 0.5) / 200.0).collect();
        assert!(ks_uniform(&u).p_value > 0.99);
        let sq: Vec<f64> = u.iter().map(|x| x * x).collect();
        assert!(ks_uniform(&sq).p_value < 1e-3);
        assert!(ks_two_sample(&u, &u).p_value > 0.99);
        assert!(ks_two_sample(&u, &sq).p_value < 1e-3);
    }

    #[test]
    fn histogram_edges_and_overflow() {
        let h = Histogram::with_edges(vec![0.0, 1.0, 2.0], [0.0, 0.5, 1.0, 2.0, 2.5, f64::NAN]);
        assert_eq!(h.counts, vec![2, 2]);
        assert_eq!(h.outside, 2);
        assert_eq!(h.total(), 4);
    }
}

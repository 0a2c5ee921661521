//! Hilbert-Schmidt independence criterion with Gaussian kernels.
//!
//! The statistic is the biased V-statistic `tr(K_c L_c) / n^2` on doubly
//! centered Gram matrices, expanded so it costs `O(n^2)` without forming the
//! centered matrices. Bandwidths are the median pairwise distance of each
//! sample.

use rand::seq::SliceRandom;
use serde::Serialize;
use thiserror::Error;

use crate::rng::stream_rng;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HsicError {
    #[error("samples have different lengths ({a} vs {b})")]
    LengthMismatch { a: usize, b: usize },
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("permutation count must be positive")]
    NoPermutations,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HsicStatistic<T> {
    pub value: T,
    pub n: usize,
    pub bandwidths: (T, T),
    /// The median distance was zero and the bandwidth fell back to 1.
    pub fallback: (bool, bool),
    pub permutation_null: Option<Vec<T>>,
}

/// Median of `|v_i - v_j|` over `i < j`, or `(1, true)` when that is zero.
pub fn median_bandwidth<T: Real>(v: &[T]) -> (T, bool) {
    let n = v.len();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push((v[i] - v[j]).abs());
        }
    }
    let m = if d.is_empty() { T::zero() } else { crate::stats::median(&d) };
    if m > T::zero() && m.is_finite() {
        (m, false)
    } else {
        (T::one(), true)
    }
}

/// Symmetric Gaussian Gram matrix, row-major.
fn gram<T: Real>(v: &[T], sigma: T) -> Vec<T> {
    let n = v.len();
    let inv = T::one() / (T::of(2.0) * sigma * sigma);
    let mut k = vec![T::one(); n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = v[i] - v[j];
            let e = (-(d * d) * inv).exp();
            k[i * n + j] = e;
            k[j * n + i] = e;
        }
    }
    k
}

struct Prepared<T> {
    n: usize,
    k: Vec<T>,
    l: Vec<T>,
    k_rows: Vec<T>,
    l_rows: Vec<T>,
    k_total: T,
    l_total: T,
}

impl<T: Real> Prepared<T> {
    fn new(k: Vec<T>, l: Vec<T>, n: usize) -> Self {
        let rows = |m: &[T]| (0..n).map(|i| m[i * n..(i + 1) * n].iter().copied().sum()).collect::<Vec<T>>();
        let (k_rows, l_rows) = (rows(&k), rows(&l));
        let k_total = k_rows.iter().copied().sum();
        let l_total = l_rows.iter().copied().sum();
        Prepared { n, k, l, k_rows, l_rows, k_total, l_total }
    }

    /// Statistic with the second sample reordered by `perm` (identity when
    /// `None`).
    fn value(&self, perm: Option<&[usize]>) -> T {
        let n = self.n;
        let nf = T::of_usize(n);
        let (mut kl, mut cross) = (T::zero(), T::zero());
        match perm {
            None => {
                kl = crate::scalar::dot(&self.k, &self.l);
                cross = crate::scalar::dot(&self.k_rows, &self.l_rows);
            }
            Some(p) => {
                for i in 0..n {
                    let krow = &self.k[i * n..(i + 1) * n];
                    let lrow = &self.l[p[i] * n..(p[i] + 1) * n];
                    let mut s = T::zero();
                    for j in 0..n {
                        s += krow[j] * lrow[p[j]];
                    }
                    kl += s;
                    cross += self.k_rows[i] * self.l_rows[p[i]];
                }
            }
        }
        let v = (kl - T::of(2.0) / nf * cross + self.k_total * self.l_total / (nf * nf)) / (nf * nf);
        v.max(T::zero())
    }
}

fn prepare<T: Real>(a: &[T], b: &[T]) -> Result<(Prepared<T>, (T, T), (bool, bool)), HsicError> {
    if a.len() != b.len() {
        return Err(HsicError::LengthMismatch { a: a.len(), b: b.len() });
    }
    if a.len() < 2 {
        return Err(HsicError::TooFewSamples(a.len()));
    }
    let (sa, fa) = median_bandwidth(a);
    let (sb, fb) = median_bandwidth(b);
    Ok((Prepared::new(gram(a, sa), gram(b, sb), a.len()), (sa, sb), (fa, fb)))
}

pub fn hsic_statistic<T: Real>(a: &[T], b: &[T]) -> Result<HsicStatistic<T>, HsicError> {
    let (p, bandwidths, fallback) = prepare(a, b)?;
    Ok(HsicStatistic { value: p.value(None), n: a.len(), bandwidths, fallback, permutation_null: None })
}

/// Statistic with a permutation null of `n_perm` reorderings of `b`, and
/// the p-value `(1 + #{null >= observed}) / (1 + n_perm)`.
pub fn hsic_permutation_test<T: Real>(a: &[T], b: &[T], n_perm: usize, seed: u64) -> Result<(HsicStatistic<T>, f64), HsicError> {
    if n_perm == 0 {
        return Err(HsicError::NoPermutations);
    }
    let (p, bandwidths, fallback) = prepare(a, b)?;
    let observed = p.value(None);
    let mut rng = stream_rng(seed, 0x4853);
    let mut perm: Vec<usize> = (0..a.len()).collect();
    let null: Vec<T> = (0..n_perm)
        .map(|_| {
            perm.shuffle(&mut rng);
            p.value(Some(&perm))
        })
        .collect();
    let exceed = null.iter().filter(|&&z| z >= observed).count();
    let pval = (1 + exceed) as f64 / (1 + n_perm) as f64;
    Ok((HsicStatistic { value: observed, n: a.len(), bandwidths, fallback, permutation_null: Some(null) }, pval))
}

pub fn hsic_permutation_pvalue<T: Real>(a: &[T], b: &[T], n_perm: usize, seed: u64) -> Result<f64, HsicError> {
    hsic_permutation_test(a, b, n_perm, seed).map(|r| r.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Uniform};

    fn uniform(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = stream_rng(seed, 5);
        let u = Uniform::new(0.0, 1.0).unwrap();
        (0..n).map(|_| u.sample(&mut rng)).collect()
    }

    /// `tr(H K H L) / n^2` with explicit centering matrices.
    fn naive(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len();
        let (sa, _) = median_bandwidth(a);
        let (sb, _) = median_bandwidth(b);
        let k = |i: usize, j: usize| (-(a[i] - a[j]).powi(2) / (2.0 * sa * sa)).exp();
        let l = |i: usize, j: usize| (-(b[i] - b[j]).powi(2) / (2.0 * sb * sb)).exp();
        let h = |i: usize, j: usize| f64::from(u8::from(i == j)) - 1.0 / n as f64;
        let mut hk = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                hk[i * n + j] = (0..n).map(|m| h(i, m) * k(m, j)).sum();
            }
        }
        let mut hkh = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                hkh[i * n + j] = (0..n).map(|m| hk[i * n + m] * h(m, j)).sum();
            }
        }
        let mut tr = 0.0;
        for i in 0..n {
            for j in 0..n {
                tr += hkh[i * n + j] * l(j, i);
            }
        }
        tr / (n * n) as f64
    }

    #[test]
    fn matches_naive_oracle() {
        for s in 0..10 {
            let n = 10 + 4 * s as usize;
            let a = uniform(s, n);
            let b: Vec<f64> = uniform(100 + s, n).iter().zip(&a).map(|(u, v)| u + v * v).collect();
            let z = hsic_statistic(&a, &b).unwrap().value;
            assert!((z - naive(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn two_point_closed_form() {
        // K_c = L_c = (1 - e^{-1/2}) / 2 * [[1, -1], [-1, 1]]
        let z = hsic_statistic(&[0.0, 1.0], &[5.0, 2.0]).unwrap().value;
        let k = (-0.5f64).exp();
        assert!((z - (1.0 - k).powi(2) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn identical_samples_are_dependent() {
        let a = uniform(1, 200);
        let (st, p) = hsic_permutation_test(&a, &a, 1000, 9).unwrap();
        let null = st.permutation_null.unwrap();
        assert!(null.iter().all(|&z| z >= 0.0));
        assert!(st.value > crate::stats::nearest_rank(&null, 0.999));
        assert!(p <= 0.02);
        assert!(hsic_permutation_pvalue(&a, &a, 100, 3).unwrap() <= 0.02);
    }

    #[test]
    fn independent_pvalues_are_uniform() {
        let ps: Vec<f64> = (0..500)
            .map(|s| hsic_permutation_pvalue(&uniform(2 * s, 40), &uniform(2 * s + 1, 40), 100, s).unwrap())
            .collect();
        assert!(crate::stats::ks_uniform(&ps).p_value > 0.01);
        let below = ps.iter().filter(|&&p| p > 0.01).count();
        assert!(below as f64 / 500.0 > 0.97);
    }

    #[test]
    fn invariances() {
        let a = uniform(3, 500);
        let b: Vec<f64> = uniform(4, 500).iter().zip(&a).map(|(u, v)| 0.3 * u + v.sin()).collect();
        let z = hsic_statistic(&a, &b).unwrap().value;
        let shifted: Vec<f64> = a.iter().map(|v| v + 17.0).collect();
        assert!((hsic_statistic(&shifted, &b).unwrap().value - z).abs() < 1e-10);
        let scaled: Vec<f64> = a.iter().map(|v| v * 10.0).collect();
        assert!((hsic_statistic(&scaled, &b).unwrap().value / z - 1.0).abs() < 0.05);
        let mut idx: Vec<usize> = (0..500).collect();
        idx.shuffle(&mut stream_rng(5, 0));
        let pa: Vec<f64> = idx.iter().map(|&i| a[i]).collect();
        let pb: Vec<f64> = idx.iter().map(|&i| b[i]).collect();
        assert!((hsic_statistic(&pa, &pb).unwrap().value - z).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        let st = hsic_statistic(&[2.0; 12], &uniform(6, 12)).unwrap();
        assert_eq!(st.fallback, (true, false));
        assert!(st.value < 1e-15);
        assert_eq!(hsic_permutation_pvalue(&[1.0, 2.0], &[1.0, 2.0], 0, 0), Err(HsicError::NoPermutations));
        assert!(matches!(hsic_statistic(&[1.0], &[1.0]), Err(HsicError::TooFewSamples(1))));
        assert!(matches!(hsic_statistic(&[1.0, 2.0], &[1.0]), Err(HsicError::LengthMismatch { .. })));
    }
}

//! Least-squares autoregressive fits, nested model comparison and BIC.
//!
//! The design for lag `L` on rows `t` has columns
//! `[1, y(t-1)..y(t-L)]`, optionally followed by exogenous columns
//! `x(t-1)..x(t-L)` or, with the instantaneous option, `x(t)..x(t-L)`.
//! A restricted and a full model are fitted from a single QR factorization of
//! the full design, so the restricted residual sum of squares is the full one
//! plus the extra components of `Q^T y` and nesting holds exactly.

use serde::Serialize;
use thiserror::Error;

use crate::linalg::{HouseholderQr, Matrix};
use crate::scalar::Real;

/// Smallest `|R_kk| / ||a_k||` accepted before falling back to ridge.
pub const RANK_TOLERANCE: f64 = 1e-10;
/// Ridge strength relative to `trace(X^T X) / p`.
pub const RIDGE_SCALE: f64 = 1e-10;
/// Fits with `ssr <= DEGENERATE_SSR * SST` are flagged as perfect fits.
pub const DEGENERATE_SSR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FitError {
    #[error("lag must be at least 1")]
    ZeroLag,
    #[error("series of length {len} too short for lag {lag} (need more than {need})")]
    TooShort { len: usize, lag: usize, need: usize },
    #[error("exogenous series has length {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("design matrix is rank deficient even after ridge regularization")]
    RankDeficient,
}

/// Properties of a fit that make it unsuitable for downstream tallies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FitFlags {
    /// Ridge fallback was used; `ssr` is the penalized objective.
    pub ridge: bool,
    /// Residuals vanish relative to the total variation (or `y` is constant).
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArFit<T> {
    /// Intercept, then autoregressive, then exogenous coefficients.
    pub coefficients: Vec<T>,
    pub ssr: T,
    pub n_obs: usize,
    pub lag: usize,
    pub flags: FitFlags,
}

impl<T: Real> ArFit<T> {
    pub fn num_params(&self) -> usize {
        self.coefficients.len()
    }

    pub fn intercept(&self) -> T {
        self.coefficients[0]
    }

    /// Autoregressive coefficients for lags `1..=L`.
    pub fn ar(&self) -> &[T] {
        &self.coefficients[1..=self.lag]
    }

    /// Exogenous coefficients (empty for a pure autoregression).
    pub fn exogenous(&self) -> &[T] {
        &self.coefficients[1 + self.lag..]
    }

    pub fn bic(&self) -> T {
        bic(self.ssr, self.n_obs, self.num_params())
    }
}

/// Gaussian-likelihood BIC `n ln(ssr / n) + k ln n`; `ssr = 0` gives
/// negative infinity.
pub fn bic<T: Real>(ssr: T, n_obs: usize, num_params: usize) -> T {
    let n = T::of_usize(n_obs);
    if ssr <= T::zero() {
        return T::neg_infinity();
    }
    n * (ssr / n).ln() + T::of_usize(num_params) * n.ln()
}

/// Which exogenous lags enter the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exogenous<'a, T> {
    None,
    /// `x(t-1)..x(t-L)`
    Lagged(&'a [T]),
    /// `x(t)..x(t-L)`
    WithInstant(&'a [T]),
}

impl<T> Exogenous<'_, T> {
    fn columns(&self, lag: usize) -> usize {
        match self {
            Exogenous::None => 0,
            Exogenous::Lagged(_) => lag,
            Exogenous::WithInstant(_) => lag + 1,
        }
    }
}

/// Restricted and full fits sharing one factorization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NestedFit<T> {
    pub restricted: ArFit<T>,
    pub full: ArFit<T>,
}

struct Factored<T> {
    qr: HouseholderQr<T>,
    qty: Vec<T>,
    n_obs: usize,
    ridge: bool,
    sst: T,
}

fn build_design<T: Real>(y: &[T], lag: usize, exo: Exogenous<'_, T>, first_row: usize) -> (Matrix<T>, Vec<T>) {
    let rows = y.len() - first_row;
    let cols = 1 + lag + exo.columns(lag);
    let mut m = Matrix::zeros(rows, cols);
    m.col_mut(0).iter_mut().for_each(|v| *v = T::one());
    for l in 1..=lag {
        m.col_mut(l).copy_from_slice(&y[first_row - l..y.len() - l]);
    }
    match exo {
        Exogenous::None => {}
        Exogenous::Lagged(x) => {
            for l in 1..=lag {
                m.col_mut(lag + l).copy_from_slice(&x[first_row - l..x.len() - l]);
            }
        }
        Exogenous::WithInstant(x) => {
            for l in 0..=lag {
                m.col_mut(lag + 1 + l).copy_from_slice(&x[first_row - l..x.len() - l]);
            }
        }
    }
    (m, y[first_row..].to_vec())
}

fn factor<T: Real>(y: &[T], lag: usize, exo: Exogenous<'_, T>, first_row: usize) -> Result<Factored<T>, FitError> {
    if lag == 0 {
        return Err(FitError::ZeroLag);
    }
    let need = 2 * lag + 2;
    if y.len() <= need || first_row < lag || first_row >= y.len() {
        return Err(FitError::TooShort { len: y.len(), lag, need });
    }
    if let Exogenous::Lagged(x) | Exogenous::WithInstant(x) = exo {
        if x.len() != y.len() {
            return Err(FitError::LengthMismatch { expected: y.len(), got: x.len() });
        }
    }
    let (design, target) = build_design(y, lag, exo, first_row);
    let n_obs = target.len();
    let sst = if target.iter().all(|&v| v == target[0]) {
        T::zero()
    } else {
        let mean = target.iter().copied().sum::<T>() / T::of_usize(n_obs);
        target.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>()
    };
    let p = design.cols();
    let scale = design.frobenius_sq() / T::of_usize(p);
    let qr = HouseholderQr::factor(design.clone()).map_err(|_| FitError::RankDeficient)?;
    let (qr, mut qty, ridge) = if qr.min_independence() < T::of(RANK_TOLERANCE) {
        let aug = design.ridge_augmented(T::of(RIDGE_SCALE) * scale);
        let qr = HouseholderQr::factor(aug).map_err(|_| FitError::RankDeficient)?;
        if qr.min_independence() < T::of(RANK_TOLERANCE) {
            return Err(FitError::RankDeficient);
        }
        let mut t = target;
        t.resize(n_obs + p, T::zero());
        (qr, t, true)
    } else {
        (qr, target, false)
    };
    qr.apply_qt(&mut qty);
    Ok(Factored { qr, qty, n_obs, ridge, sst })
}

impl<T: Real> Factored<T> {
    fn fit(&self, k: usize, lag: usize) -> ArFit<T> {
        let coefficients = self.qr.solve_leading(k, &self.qty);
        let ssr: T = self.qty[k..].iter().map(|&v| v * v).sum();
        let degenerate = self.sst == T::zero() || ssr <= T::of(DEGENERATE_SSR) * self.sst;
        let ssr = if self.sst == T::zero() { T::zero() } else { ssr };
        ArFit { coefficients, ssr, n_obs: self.n_obs, lag, flags: FitFlags { ridge: self.ridge, degenerate } }
    }
}

/// Least-squares fit of `y` on its own lags and optional exogenous lags,
/// over rows `t = L..n`.
pub fn fit_ar<T: Real>(y: &[T], lag: usize, exo: Exogenous<'_, T>) -> Result<ArFit<T>, FitError> {
    let f = factor(y, lag, exo, lag)?;
    Ok(f.fit(f.qr.cols(), lag))
}

/// Restricted `AR(L)` and full model with exogenous terms from one QR.
pub fn fit_nested<T: Real>(y: &[T], lag: usize, exo: Exogenous<'_, T>) -> Result<NestedFit<T>, FitError> {
    let f = factor(y, lag, exo, lag)?;
    Ok(NestedFit { restricted: f.fit(1 + lag, lag), full: f.fit(f.qr.cols(), lag) })
}

/// Classical F statistic and its upper-tail p-value for a nested pair.
/// Diagnostic only; the residuals of windowed market series are far from
/// the assumptions behind it.
pub fn f_test<T: Real>(nested: &NestedFit<T>) -> Option<(f64, f64)> {
    use statrs::distribution::{ContinuousCDF, FisherSnedecor};
    let q = nested.full.num_params() - nested.restricted.num_params();
    let df2 = nested.full.n_obs.checked_sub(nested.full.num_params())?;
    if q == 0 || df2 == 0 || nested.full.ssr <= T::zero() {
        return None;
    }
    let (r, f) = (nested.restricted.ssr.as_f64(), nested.full.ssr.as_f64());
    let stat = ((r - f) / q as f64) / (f / df2 as f64);
    let dist = FisherSnedecor::new(q as f64, df2 as f64).ok()?;
    Some((stat, dist.sf(stat.max(0.0))))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagSelection<T> {
    pub lag: usize,
    /// Median BIC per candidate lag `1..=max_lag`; infinite when every fit
    /// for that lag was skipped.
    pub median_bic: Vec<T>,
    /// Fits skipped because they were degenerate, regularized or too short.
    pub skipped: usize,
}

/// Lag minimizing the median BIC over all series. Every candidate lag is
/// fitted on the same rows `t >= max_lag` so the BIC values are comparable;
/// ties go to the smallest lag.
pub fn select_lag<T: Real>(series: &[&[T]], max_lag: usize) -> LagSelection<T> {
    let mut skipped = 0;
    let mut median_bic = Vec::with_capacity(max_lag);
    for lag in 1..=max_lag {
        let mut vals = Vec::with_capacity(series.len());
        for y in series {
            if y.len() <= 2 * max_lag + 2 {
                skipped += 1;
                continue;
            }
            match factor(y, lag, Exogenous::None, max_lag) {
                Ok(f) => {
                    let fit = f.fit(1 + lag, lag);
                    if fit.flags.degenerate || fit.flags.ridge {
                        skipped += 1;
                    } else {
                        vals.push(fit.bic());
                    }
                }
                Err(_) => skipped += 1,
            }
        }
        median_bic.push(if vals.is_empty() { T::infinity() } else { crate::stats::median(&vals) });
    }
    let mut lag = 1;
    for (i, &b) in median_bic.iter().enumerate() {
        if b < median_bic[lag - 1] {
            lag = i + 1;
        }
    }
    LagSelection { lag, median_bic, skipped }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = stream_rng(seed, 0);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn ar(seed: u64, n: usize, coef: &[f64]) -> Vec<f64> {
        let e = noise(seed, n + 200);
        let mut y = vec![0.0; n + 200];
        for t in 0..y.len() {
            y[t] = e[t] + coef.iter().enumerate().filter(|(l, _)| t > *l).map(|(l, c)| c * y[t - l - 1]).sum::<f64>();
        }
        y.split_off(200)
    }

    /// Normal equations solved by Gauss-Jordan elimination with partial
    /// pivoting on the explicit Gram matrix.
    fn gram_oracle(cols: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
        let p = cols.len();
        let mut a: Vec<Vec<f64>> = (0..p)
            .map(|i| {
                let mut row: Vec<f64> = (0..p).map(|j| cols[i].iter().zip(&cols[j]).map(|(u, v)| u * v).sum()).collect();
                row.push(cols[i].iter().zip(y).map(|(u, v)| u * v).sum());
                row
            })
            .collect();
        for c in 0..p {
            let piv = (c..p).max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap()).unwrap();
            a.swap(c, piv);
            for r in 0..p {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in c..=p {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
        (0..p).map(|i| a[i][p] / a[i][i]).collect()
    }

    #[test]
    fn ar1_coefficient_recovered() {
        let y = ar(1, 10_000, &[0.5]);
        let fit = fit_ar(&y, 1, Exogenous::None).unwrap();
        assert!((fit.ar()[0] - 0.5).abs() < 0.02, "{:?}", fit.ar());
        assert_eq!(fit.n_obs, 9_999);
    }

    #[test]
    fn matches_normal_equations() {
        let y = ar(2, 300, &[0.3, -0.2]);
        let x = noise(3, 300);
        let lag = 3;
        let fit = fit_ar(&y, lag, Exogenous::WithInstant(&x)).unwrap();
        let n = y.len();
        let mut cols = vec![vec![1.0; n - lag]];
        for l in 1..=lag {
            cols.push(y[lag - l..n - l].to_vec());
        }
        for l in 0..=lag {
            cols.push(x[lag - l..n - l].to_vec());
        }
        let expect = gram_oracle(&cols, &y[lag..]);
        assert_eq!(fit.coefficients.len(), expect.len());
        for (a, b) in fit.coefficients.iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-8 * b.abs().max(1e-3), "{a} vs {b}");
        }
        // residuals orthogonal to every regressor
        let resid: Vec<f64> = (0..n - lag)
            .map(|i| y[lag + i] - cols.iter().zip(&fit.coefficients).map(|(c, b)| c[i] * b).sum::<f64>())
            .collect();
        let ssr: f64 = resid.iter().map(|e| e * e).sum();
        assert!((ssr - fit.ssr).abs() < 1e-9 * ssr);
        for c in &cols {
            let scale: f64 = c.iter().map(|v| v * v).sum::<f64>().sqrt() * ssr.sqrt();
            assert!(c.iter().zip(&resid).map(|(u, e)| u * e).sum::<f64>().abs() <= 1e-6 * scale);
        }
    }

    #[test]
    fn constant_series_fits_perfectly() {
        let y = vec![4.2; 50];
        let fit = fit_ar(&y, 2, Exogenous::None).unwrap();
        assert_eq!(fit.ssr, 0.0);
        assert!(fit.flags.degenerate);
        assert!(fit.flags.ridge);
        assert_eq!(fit.bic(), f64::NEG_INFINITY);
    }

    #[test]
    fn nesting_never_increases_ssr() {
        let y = ar(4, 500, &[0.4]);
        let x = noise(5, 500);
        for lag in 1..=5 {
            let n = fit_nested(&y, lag, Exogenous::Lagged(&x)).unwrap();
            assert!(n.full.ssr <= n.restricted.ssr);
            let solo = fit_ar(&y, lag, Exogenous::None).unwrap();
            assert!((solo.ssr - n.restricted.ssr).abs() <= 1e-9 * solo.ssr);
            for (a, b) in solo.coefficients.iter().zip(&n.restricted.coefficients) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn bic_penalty_per_parameter() {
        let n = 400;
        let d = bic(10.0, n, 4) - bic(10.0, n, 3);
        assert!((d - (n as f64).ln()).abs() < 1e-12);
        assert_eq!(bic(0.0, n, 3), f64::NEG_INFINITY);
    }

    #[test]
    fn input_validation() {
        assert_eq!(fit_ar(&[1.0; 10], 0, Exogenous::None), Err(FitError::ZeroLag));
        assert!(matches!(fit_ar(&[1.0; 6], 2, Exogenous::None), Err(FitError::TooShort { .. })));
        assert!(matches!(fit_ar(&[1.0; 20], 2, Exogenous::Lagged(&[1.0; 19])), Err(FitError::LengthMismatch { .. })));
    }

    #[test]
    fn collinear_exogenous_uses_ridge() {
        let y = ar(6, 200, &[0.5]);
        // x equal to y makes x(t-1) duplicate y(t-1)
        let f = fit_nested(&y, 1, Exogenous::Lagged(&y)).unwrap();
        assert!(f.full.flags.ridge);
        assert!(f.full.ssr <= f.restricted.ssr);
    }

    #[test]
    fn ar2_selects_two() {
        let mut hits = 0;
        let trials = 40;
        for s in 0..trials {
            let y = ar(100 + s, 5000, &[0.5, 0.3]);
            hits += usize::from(select_lag(&[&y[..]], 10).lag == 2);
        }
        assert!(hits as f64 >= 0.95 * trials as f64, "{hits}/{trials}");
    }

    #[test]
    fn white_noise_selects_smallest_mostly() {
        let mut hits = 0;
        let trials = 40;
        for s in 0..trials {
            let y = noise(300 + s, 5000);
            hits += usize::from(select_lag(&[&y[..]], 10).lag == 1);
        }
        assert!(hits * 2 > trials as usize, "{hits}/{trials}");
    }

    #[test]
    fn ar3_set_selects_three() {
        let set: Vec<Vec<f64>> = (0..9).map(|s| ar(500 + s, 500, &[0.4, 0.0, 0.35])).collect();
        let refs: Vec<&[f64]> = set.iter().map(|v| &v[..]).collect();
        assert_eq!(select_lag(&refs, 10).lag, 3);
    }

    #[test]
    fn single_series_matches_per_fit_argmin() {
        let y = ar(7, 800, &[0.6]);
        let sel = select_lag(&[&y[..]], 6);
        let bics: Vec<f64> = (1..=6).map(|l| factor(&y, l, Exogenous::None, 6).unwrap().fit(1 + l, l).bic()).collect();
        let best = (0..6).fold(0, |b, i| if bics[i] < bics[b] { i } else { b });
        assert_eq!(sel.lag, best + 1);
        assert_eq!(sel.median_bic, bics);
    }

    #[test]
    fn ties_prefer_smallest_lag() {
        // every fit is degenerate, so all medians tie at infinity
        let flat = vec![2.0; 40];
        assert_eq!(select_lag(&[&flat[..]], 3).lag, 1);
    }

    #[test]
    fn affine_rescaling_scales_coefficients() {
        let y = ar(8, 600, &[0.5]);
        let y2: Vec<f64> = y.iter().map(|v| 3.0 * v + 10.0).collect();
        let a = fit_ar(&y, 2, Exogenous::None).unwrap();
        let b = fit_ar(&y2, 2, Exogenous::None).unwrap();
        assert!((b.ssr / a.ssr - 9.0).abs() < 1e-10);
        for (u, v) in a.ar().iter().zip(b.ar()) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn f_test_is_a_diagnostic() {
        let y = ar(9, 500, &[0.5]);
        let x = noise(10, 500);
        let (f, p) = f_test(&fit_nested(&y, 2, Exogenous::Lagged(&x)).unwrap()).unwrap();
        assert!(f >= 0.0 && (0.0..=1.0).contains(&p));
    }
}

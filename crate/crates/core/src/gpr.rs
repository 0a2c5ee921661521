//! One-dimensional Gaussian-process regression with a squared-exponential
//! kernel plus white noise.
//!
//! Inputs and targets are standardized. With `K` the unit-variance kernel
//! matrix and `lambda` the noise-to-signal ratio, the signal variance has the
//! closed-form maximizer `q / n` with `q = y^T (K + lambda I)^{-1} y`, so the
//! marginal likelihood is searched over `(length_scale, lambda)` only.
//!
//! For a fixed length scale the kernel is factored once as `K ~ G G^T`
//! (pivoted Cholesky) and `G^T G = V S V^T` is diagonalized; every `lambda`
//! is then evaluated in `O(rank)` through the Woodbury identity.

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{pivoted_cholesky, symmetric_eigen, Cholesky};
use crate::rng::stream_rng;
use crate::scalar::{dot, Real};

/// Residual kernel diagonal left by the low-rank factorization.
pub const LOW_RANK_TOLERANCE: f64 = 1e-13;
const LAMBDA_GRID: usize = 41;
const GOLDEN_TOL: f64 = 1e-9;
/// Final step of the length-scale pattern search, in `ln(length_scale)`.
const PATTERN_TOL: f64 = 4e-3;
/// Smallest log-likelihood gain that moves the length-scale search; flat
/// likelihoods (targets unrelated to inputs) stop early instead of drifting
/// toward tiny, expensive length scales.
const MIN_GAIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GpError {
    #[error("need at least 5 points, got {0}")]
    TooFewPoints(usize),
    #[error("inputs have different lengths ({x} vs {y})")]
    LengthMismatch { x: usize, y: usize },
    #[error("non-finite value in inputs")]
    NonFinite,
    #[error("marginal likelihood was not finite from any start")]
    OptimizerFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GpConfig {
    pub starts: usize,
    /// Windows larger than this are fitted on a seeded subsample.
    pub max_points: usize,
    /// Bounds on the length scale in standardized input units.
    pub length_scale_bounds: (f64, f64),
    /// Bounds on the noise-to-signal variance ratio.
    pub noise_ratio_bounds: (f64, f64),
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig { starts: 5, max_points: 1000, length_scale_bounds: (0.05, 20.0), noise_ratio_bounds: (1e-8, 1e4), seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GpFlags {
    /// Target was constant; the model predicts its value everywhere.
    pub constant_target: bool,
    /// Inputs were constant and left unscaled.
    pub constant_input: bool,
    pub subsampled: bool,
}

/// Fitted model. Immutable; predictions are in original target units.
#[derive(Debug, Clone, Serialize)]
pub struct GpModel<T> {
    pub length_scale: T,
    /// Noise variance over signal variance.
    pub noise_ratio: T,
    /// Signal variance in standardized target units.
    pub signal_variance: T,
    pub log_marginal_likelihood: T,
    /// Accepted objective values of each start's search, in order.
    pub trace: Vec<Vec<T>>,
    pub flags: GpFlags,
    x_mean: T,
    x_scale: T,
    y_mean: T,
    y_scale: T,
    x_train: Vec<T>,
    /// `(K + lambda I)^{-1} y` on the standardized training data.
    alpha: Vec<T>,
}

#[inline]
fn kernel<T: Real>(a: T, b: T, inv_two_l2: T) -> T {
    let d = a - b;
    (-(d * d) * inv_two_l2).exp()
}

fn standardize<T: Real>(v: &[T]) -> (T, T, Vec<T>) {
    let m = crate::stats::mean(v);
    let s = crate::stats::std_dev(v);
    let s = if s > T::zero() { s } else { T::one() };
    (m, s, v.iter().map(|&x| (x - m) / s).collect())
}

/// Spectral form of one length scale.
struct Spectrum<T> {
    g: Vec<Vec<T>>,
    /// Eigenvalues of `G^T G`, clamped at zero.
    s: Vec<T>,
    /// Eigenvectors of `G^T G` as columns, row-major `r x r`.
    v: Vec<T>,
    /// `V^T G^T y`
    z: Vec<T>,
    yy: T,
    n: usize,
}

impl<T: Real> Spectrum<T> {
    fn new(x: &[T], y: &[T], length_scale: T) -> Self {
        let n = x.len();
        let inv = T::one() / (T::of(2.0) * length_scale * length_scale);
        let diag = vec![T::one(); n];
        let lr = pivoted_cholesky(
            &diag,
            |j, out: &mut [T]| {
                let xj = x[j];
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = kernel(xi, xj, inv);
                }
            },
            T::of(LOW_RANK_TOLERANCE),
            n,
        );
        let g = lr.columns;
        let r = g.len();
        let mut gtg = vec![T::zero(); r * r];
        for i in 0..r {
            for j in 0..=i {
                let v = dot(&g[i], &g[j]);
                gtg[i * r + j] = v;
                gtg[j * r + i] = v;
            }
        }
        let (s, v) = symmetric_eigen(r, &gtg);
        let s = s.into_iter().map(|e| e.max(T::zero())).collect();
        let w: Vec<T> = g.iter().map(|c| dot(c, y)).collect();
        let z = (0..r).map(|c| (0..r).map(|k| v[k * r + c] * w[k]).sum()).collect();
        Spectrum { g, s, v, z, yy: dot(y, y), n }
    }

    /// Profiled log marginal likelihood at noise ratio `lambda`.
    fn objective(&self, lambda: T) -> T {
        let n = T::of_usize(self.n);
        let mut reduce = T::zero();
        let mut logdet = T::of_usize(self.n - self.s.len()) * lambda.ln();
        for (&s, &z) in self.s.iter().zip(&self.z) {
            reduce += z * z / (s + lambda);
            logdet += (s + lambda).ln();
        }
        let q = (self.yy - reduce) / lambda;
        if !(q > T::zero()) {
            return T::neg_infinity();
        }
        let two_pi = T::of(2.0 * std::f64::consts::PI);
        -T::of(0.5) * (n + n * (q / n).ln() + logdet + n * two_pi.ln())
    }

    /// `q / n`, the profiled signal variance.
    fn signal_variance(&self, lambda: T) -> T {
        let reduce: T = self.s.iter().zip(&self.z).map(|(&s, &z)| z * z / (s + lambda)).sum();
        (self.yy - reduce) / lambda / T::of_usize(self.n)
    }

    /// `(K + lambda I)^{-1} y` with `K = G G^T`.
    fn alpha(&self, y: &[T], lambda: T) -> Vec<T> {
        let r = self.s.len();
        let scaled: Vec<T> = (0..r).map(|i| self.z[i] / (self.s[i] + lambda)).collect();
        let mut out = y.to_vec();
        for k in 0..r {
            let coef: T = (0..r).map(|c| self.v[k * r + c] * scaled[c]).sum();
            crate::scalar::axpy(-coef, &self.g[k], &mut out);
        }
        out.iter_mut().for_each(|v| *v /= lambda);
        out
    }

    /// Maximizes over `ln(lambda)`: a grid, then golden-section refinement
    /// inside the bracket around the best grid point.
    fn best_lambda(&self, bounds: (f64, f64)) -> (T, T) {
        let (lo, hi) = (bounds.0.ln(), bounds.1.ln());
        let step = (hi - lo) / (LAMBDA_GRID - 1) as f64;
        let f = |u: f64| self.objective(T::of(u.exp()));
        let mut best = (0, T::neg_infinity());
        for i in 0..LAMBDA_GRID {
            let v = f(lo + step * i as f64);
            if v > best.1 {
                best = (i, v);
            }
        }
        let centre = lo + step * best.0 as f64;
        let (mut a, mut b) = ((centre - step).max(lo), (centre + step).min(hi));
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = b - phi * (b - a);
        let mut d = a + phi * (b - a);
        let (mut fc, mut fd) = (f(c), f(d));
        while b - a > GOLDEN_TOL {
            if fc >= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - phi * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + phi * (b - a);
                fd = f(d);
            }
        }
        let (u, v) = if fc >= fd { (c, fc) } else { (d, fd) };
        if v >= best.1 {
            (T::of(u.exp()), v)
        } else {
            (T::of(centre.exp()), best.1)
        }
    }
}

struct Search<'a, T> {
    x: &'a [T],
    y: &'a [T],
    config: &'a GpConfig,
    cache: Vec<(u64, T, T)>,
}

impl<T: Real> Search<'_, T> {
    /// Best `(lambda, objective)` at `ln(length_scale) = u`.
    fn eval(&mut self, u: f64) -> (T, T) {
        let key = u.to_bits();
        if let Some(&(_, l, v)) = self.cache.iter().find(|c| c.0 == key) {
            return (l, v);
        }
        let spec = Spectrum::new(self.x, self.y, T::of(u.exp()));
        let (l, v) = spec.best_lambda(self.config.noise_ratio_bounds);
        let v = if v.is_finite() { v } else { T::neg_infinity() };
        self.cache.push((key, l, v));
        (l, v)
    }

    /// Monotone pattern search in `ln(length_scale)` from `u0`.
    fn climb(&mut self, u0: f64) -> (f64, T, Vec<T>) {
        let (lo, hi) = (self.config.length_scale_bounds.0.ln(), self.config.length_scale_bounds.1.ln());
        let mut u = u0.clamp(lo, hi);
        let (mut l, mut v) = self.eval(u);
        let mut trace = vec![v];
        let mut step = 0.5;
        // at the noise bound the fit is flat and the length scale unidentified
        let ceiling = T::of(self.config.noise_ratio_bounds.1 * (1.0 - 1e-6));
        while step > PATTERN_TOL && l < ceiling {
            let mut moved = false;
            for cand in [u + step, u - step] {
                if cand < lo || cand > hi {
                    continue;
                }
                let (cl, cv) = self.eval(cand);
                if cv > v + T::of(MIN_GAIN) {
                    u = cand;
                    v = cv;
                    l = cl;
                    trace.push(v);
                    moved = true;
                    break;
                }
            }
            if !moved {
                step *= 0.5;
            }
        }
        (u, v, trace)
    }
}

/// Profiled log marginal likelihood by a dense jittered Cholesky of
/// `K + lambda I`, on already standardized data.
pub fn dense_log_marginal_likelihood<T: Real>(x: &[T], y: &[T], length_scale: T, noise_ratio: T) -> Option<T> {
    let n = x.len();
    let inv = T::one() / (T::of(2.0) * length_scale * length_scale);
    let mut a = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = kernel(x[i], x[j], inv) + if i == j { noise_ratio } else { T::zero() };
        }
    }
    let c = Cholesky::factor_with_jitter(n, &a).ok()?;
    let q = dot(y, &c.solve(y));
    let nf = T::of_usize(n);
    let two_pi = T::of(2.0 * std::f64::consts::PI);
    Some(-T::of(0.5) * (nf + nf * (q / nf).ln() + c.log_det() + nf * two_pi.ln()))
}

/// Fits the hyperparameters by maximizing the marginal likelihood from
/// `config.starts` seeded length-scale starts.
pub fn gp_fit<T: Real>(x: &[T], y: &[T], config: &GpConfig) -> Result<GpModel<T>, GpError> {
    if x.len() != y.len() {
        return Err(GpError::LengthMismatch { x: x.len(), y: y.len() });
    }
    if x.len() < 5 {
        return Err(GpError::TooFewPoints(x.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(GpError::NonFinite);
    }
    let mut rng = stream_rng(config.seed, 0x6770);
    let mut flags = GpFlags::default();
    let (xs, ys): (Vec<T>, Vec<T>) = if x.len() > config.max_points {
        flags.subsampled = true;
        let mut idx: Vec<usize> = rand::seq::index::sample(&mut rng, x.len(), config.max_points).into_vec();
        idx.sort_unstable();
        (idx.iter().map(|&i| x[i]).collect(), idx.iter().map(|&i| y[i]).collect())
    } else {
        (x.to_vec(), y.to_vec())
    };
    let (x_mean, x_scale, xz) = standardize(&xs);
    let (y_mean, y_scale, yz) = standardize(&ys);
    flags.constant_input = crate::stats::std_dev(&xs) == T::zero();
    if ys.iter().all(|&v| v == ys[0]) {
        flags.constant_target = true;
        return Ok(GpModel {
            length_scale: T::one(),
            noise_ratio: T::one(),
            signal_variance: T::zero(),
            log_marginal_likelihood: T::nan(),
            trace: Vec::new(),
            flags,
            x_mean,
            x_scale,
            y_mean: ys[0],
            y_scale: T::one(),
            alpha: vec![T::zero(); xz.len()],
            x_train: xz,
        });
    }
    let (lo, hi) = (config.length_scale_bounds.0.ln(), config.length_scale_bounds.1.ln());
    let mut search = Search { x: &xz, y: &yz, config, cache: Vec::new() };
    let mut traces = Vec::with_capacity(config.starts);
    let mut best: Option<(f64, T)> = None;
    for _ in 0..config.starts.max(1) {
        // starts drawn in the central third of the log range
        let span = hi - lo;
        let u0 = lo + span * (1.0 / 3.0 + rng.random::<f64>() / 3.0);
        let (u, v, trace) = search.climb(u0);
        traces.push(trace);
        if v.is_finite() && best.is_none_or(|(_, bv)| v > bv) {
            best = Some((u, v));
        }
    }
    let (u, lml) = best.ok_or(GpError::OptimizerFailed)?;
    let length_scale = T::of(u.exp());
    let spec = Spectrum::new(&xz, &yz, length_scale);
    let (noise_ratio, _) = spec.best_lambda(config.noise_ratio_bounds);
    let alpha = spec.alpha(&yz, noise_ratio);
    Ok(GpModel {
        length_scale,
        noise_ratio,
        signal_variance: spec.signal_variance(noise_ratio),
        log_marginal_likelihood: lml,
        trace: traces,
        flags,
        x_mean,
        x_scale,
        y_mean,
        y_scale,
        x_train: xz,
        alpha,
    })
}

impl<T: Real> GpModel<T> {
    /// Noise variance in standardized target units.
    pub fn noise_variance(&self) -> T {
        self.noise_ratio * self.signal_variance
    }

    /// Posterior mean in standardized target units.
    fn mean_standardized(&self, x: &[T]) -> Vec<T> {
        let inv = T::one() / (T::of(2.0) * self.length_scale * self.length_scale);
        x.iter()
            .map(|&v| {
                let xs = (v - self.x_mean) / self.x_scale;
                self.x_train.iter().zip(&self.alpha).map(|(&t, &a)| kernel(xs, t, inv) * a).sum()
            })
            .collect()
    }

    /// Posterior mean in original target units.
    pub fn predict(&self, x: &[T]) -> Vec<T> {
        self.mean_standardized(x).into_iter().map(|m| self.y_mean + self.y_scale * m).collect()
    }

    /// `y - f(x)` in standardized target units.
    pub fn residuals(&self, x: &[T], y: &[T]) -> Vec<T> {
        self.mean_standardized(x)
            .into_iter()
            .zip(y)
            .map(|(m, &v)| (v - self.y_mean) / self.y_scale - m)
            .collect()
    }
}

/// Fits on `(x, y)` and returns the standardized residuals at the same points.
pub fn gp_residuals<T: Real>(x: &[T], y: &[T], config: &GpConfig) -> Result<(GpModel<T>, Vec<T>), GpError> {
    let model = gp_fit(x, y, config)?;
    let r = model.residuals(x, y);
    Ok((model, r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal, Uniform};

    fn sample(seed: u64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        let mut rng = stream_rng(seed, 1);
        let u = Uniform::new(lo, hi).unwrap();
        (0..n).map(|_| u.sample(&mut rng)).collect()
    }

    fn noise(seed: u64, n: usize, sd: f64) -> Vec<f64> {
        let mut rng = stream_rng(seed, 2);
        let d = Normal::new(0.0, sd).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn spectral_likelihood_matches_dense() {
        let x = sample(1, 120, -2.0, 2.0);
        let e = noise(2, 120, 0.2);
        let y: Vec<f64> = x.iter().zip(&e).map(|(a, b)| a.sin() + b).collect();
        let (_, _, xz) = standardize(&x);
        let (_, _, yz) = standardize(&y);
        for &ell in &[0.1, 0.5, 2.0] {
            let spec = Spectrum::new(&xz, &yz, ell);
            for &lam in &[1e-3, 0.1, 3.0] {
                let dense = dense_log_marginal_likelihood(&xz, &yz, ell, lam).unwrap();
                let fast = spec.objective(lam);
                assert!((dense - fast).abs() < 1e-6 * dense.abs().max(1.0), "{ell} {lam}: {dense} vs {fast}");
            }
        }
    }

    #[test]
    fn noise_free_linear_interpolates() {
        let x = sample(3, 50, -3.0, 3.0);
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let (m, r) = gp_residuals(&x, &y, &GpConfig::default()).unwrap();
        // compared in standardized target units, the scale the model works in
        let sd = crate::stats::std_dev(&y);
        let pred = m.predict(&x);
        for (p, t) in pred.iter().zip(&y) {
            assert!((p - t).abs() / sd < 1e-4, "{p} vs {t}");
        }
        assert!(r.iter().all(|v| v.abs() <= 1e-3));
    }

    #[test]
    fn constant_target() {
        let x = sample(4, 30, 0.0, 1.0);
        let y = vec![1.5; 30];
        let m = gp_fit(&x, &y, &GpConfig::default()).unwrap();
        assert!(m.flags.constant_target);
        assert!(m.predict(&[0.2, 7.0]).iter().all(|&v| v == 1.5));
        assert!(m.residuals(&x, &y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sine_regression_quality() {
        let x = sample(5, 200, -3.0, 3.0);
        let e = noise(6, 200, 0.1);
        let y: Vec<f64> = x.iter().zip(&e).map(|(a, b)| a.sin() + b).collect();
        let m = gp_fit(&x, &y, &GpConfig::default()).unwrap();
        let held = sample(7, 300, -2.9, 2.9);
        let pred = m.predict(&held);
        let rmse = (held.iter().zip(&pred).map(|(h, p)| (h.sin() - p).powi(2)).sum::<f64>() / held.len() as f64).sqrt();
        assert!(rmse <= 0.05, "rmse {rmse}");
    }

    #[test]
    fn residual_variance_tracks_noise() {
        let x = sample(8, 500, -2.0, 2.0);
        let e = noise(9, 500, 0.3);
        let y: Vec<f64> = x.iter().zip(&e).map(|(a, b)| a * a + b).collect();
        let (m, r) = gp_residuals(&x, &y, &GpConfig::default()).unwrap();
        // back to original units
        let sd = crate::stats::std_dev(&y);
        let var = crate::stats::variance(&r) * sd * sd;
        assert!((var / 0.09 - 1.0).abs() < 0.2, "var {var}");
        assert!(m.noise_variance() > 0.0);
    }

    #[test]
    fn independent_target_collapses_to_mean() {
        let x = sample(10, 300, 0.0, 1.0);
        let y = noise(11, 300, 2.0);
        let (_, r) = gp_residuals(&x, &y, &GpConfig::default()).unwrap();
        let (_, _, yz) = standardize(&y);
        let dev = r.iter().zip(&yz).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 300.0;
        assert!(dev < 0.05, "{dev}");
    }

    #[test]
    fn likelihood_trace_is_monotone() {
        let x = sample(12, 150, -2.0, 2.0);
        let e = noise(13, 150, 0.2);
        let y: Vec<f64> = x.iter().zip(&e).map(|(a, b)| (2.0 * a).cos() + b).collect();
        let m = gp_fit(&x, &y, &GpConfig::default()).unwrap();
        assert_eq!(m.trace.len(), 5);
        for t in &m.trace {
            assert!(t.windows(2).all(|w| w[1] >= w[0]));
        }
        let best = m.trace.iter().flat_map(|t| t.last()).fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        assert_eq!(best, m.log_marginal_likelihood);
    }

    #[test]
    fn translation_and_affine_target_equivariance() {
        let x = sample(14, 120, -2.0, 2.0);
        let e = noise(15, 120, 0.2);
        let y: Vec<f64> = x.iter().zip(&e).map(|(a, b)| a.sin() + b).collect();
        let cfg = GpConfig { seed: 3, ..GpConfig::default() };
        let base = gp_fit(&x, &y, &cfg).unwrap().predict(&x);
        let xs: Vec<f64> = x.iter().map(|v| v + 4.0).collect();
        let ya: Vec<f64> = y.iter().map(|v| 3.0 * v - 2.0).collect();
        let moved = gp_fit(&xs, &ya, &cfg).unwrap().predict(&xs);
        for (b, m) in base.iter().zip(&moved) {
            assert!(((3.0 * b - 2.0) - m).abs() < 1e-8 * 3.0, "{b} {m}");
        }
    }

    #[test]
    fn subsamples_large_windows_deterministically() {
        let x = sample(16, 1500, -2.0, 2.0);
        let y: Vec<f64> = x.iter().map(|v| v.sin()).collect();
        let cfg = GpConfig { max_points: 200, ..GpConfig::default() };
        let a = gp_fit(&x, &y, &cfg).unwrap();
        let b = gp_fit(&x, &y, &cfg).unwrap();
        assert!(a.flags.subsampled);
        assert_eq!(a.predict(&x[..10]), b.predict(&x[..10]));
    }

    #[test]
    fn input_errors() {
        let c = GpConfig::default();
        assert_eq!(gp_fit(&[1.0; 4], &[1.0; 4], &c).unwrap_err(), GpError::TooFewPoints(4));
        assert!(matches!(gp_fit(&[1.0; 6], &[1.0; 5], &c), Err(GpError::LengthMismatch { .. })));
        assert_eq!(gp_fit(&[1.0, 2.0, f64::NAN, 4.0, 5.0], &[1.0; 5], &c).unwrap_err(), GpError::NonFinite);
    }
}

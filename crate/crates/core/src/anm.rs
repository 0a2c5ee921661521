//! Additive-noise-model causal scores.
//!
//! For a pair `(x, y)` both directions are regressed with a Gaussian process
//! and the dependence of each residual on its regressor is measured with
//! HSIC: `Z_xy = HSIC(x, y - f(x))`, `Z_yx = HSIC(y, x - g(y))`. The score
//! `S = Z_yx - Z_xy` is positive when the residuals of `x -> y` are the more
//! independent ones. Both regressions use the same seed, so swapping the
//! arguments negates `S` exactly.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::gpr::{gp_residuals, GpConfig, GpError};
use crate::hsic::{hsic_statistic, HsicError};
use crate::rng::substream;
use crate::scalar::Real;
use crate::surrogate::PairTest;

/// Fewest lagged pairs a window must keep to be scored.
pub const MIN_PAIRS: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnmError {
    #[error("regression failed: {0}")]
    Gp(#[from] GpError),
    #[error("independence statistic failed: {0}")]
    Hsic(#[from] HsicError),
    #[error("window keeps {pairs} pairs after lag trimming, need {min}")]
    TooShort { pairs: usize, min: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnmScore<T> {
    pub s: T,
    pub z_xy: T,
    pub z_yx: T,
}

pub fn anm_score<T: Real>(x: &[T], y: &[T], gp: &GpConfig) -> Result<AnmScore<T>, AnmError> {
    let (_, ry) = gp_residuals(x, y, gp)?;
    let (_, rx) = gp_residuals(y, x, gp)?;
    let z_xy = hsic_statistic(x, &ry)?.value;
    let z_yx = hsic_statistic(y, &rx)?.value;
    Ok(AnmScore { s: z_yx - z_xy, z_xy, z_yx })
}

/// ANM test on disjoint windows of `tau_tilde` steps pairing `x(k)` with
/// `y(k + lag)` inside each window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LaggedAnm {
    pub lag: usize,
    pub tau_tilde: usize,
    pub gp: GpConfig,
}

impl LaggedAnm {
    pub fn window_score<T: Real>(&self, x: &[T], y: &[T], window: usize, stream: u64) -> Result<AnmScore<T>, AnmError> {
        let start = window * self.tau_tilde;
        let pairs = self.tau_tilde.saturating_sub(self.lag);
        if pairs < MIN_PAIRS {
            return Err(AnmError::TooShort { pairs, min: MIN_PAIRS });
        }
        let xs = &x[start..start + pairs];
        let ys = &y[start + self.lag..start + self.lag + pairs];
        let gp = GpConfig { seed: substream(self.gp.seed, stream), ..self.gp.clone() };
        anm_score(xs, ys, &gp)
    }
}

impl<T: Real> PairTest<T> for LaggedAnm {
    fn windows(&self, len: usize) -> usize {
        len.checked_div(self.tau_tilde).unwrap_or(0)
    }

    fn score(&self, x: &[T], y: &[T], window: usize, stream: u64) -> Option<T> {
        self.window_score(x, y, window, stream).ok().map(|a| a.s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnmResult<T> {
    pub x: String,
    pub y: String,
    pub lag: usize,
    pub window: usize,
    pub s: T,
    pub z_xy: T,
    pub z_yx: T,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AnmBatch<T> {
    pub results: Vec<AnmResult<T>>,
    /// `(window, reason)`
    pub excluded: Vec<(usize, String)>,
}

/// One score per window of `(x, y)`. Window `w` seeds its regressions from
/// stream `w`.
pub fn lagged_anm<T: Real>(x: &[T], y: &[T], test: &LaggedAnm, x_id: &str, y_id: &str) -> AnmBatch<T> {
    let len = x.len().min(y.len());
    let windows = PairTest::<T>::windows(test, len);
    let out: Vec<_> = (0..windows).into_par_iter().map(|w| (w, test.window_score(x, y, w, w as u64))).collect();
    let mut batch = AnmBatch { results: Vec::new(), excluded: Vec::new() };
    for (window, r) in out {
        match r {
            Ok(a) => batch.results.push(AnmResult {
                x: x_id.to_string(),
                y: y_id.to_string(),
                lag: test.lag,
                window,
                s: a.s,
                z_xy: a.z_xy,
                z_yx: a.z_yx,
            }),
            Err(e) => batch.excluded.push((window, e.to_string())),
        }
    }
    batch
}

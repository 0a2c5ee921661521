//! Windowed cross-correlation between a returns series and lagged gap series.
//!
//! The returns series is cut into disjoint windows of `tau_tilde` steps.
//! Window `j` starts at `max_lag + j * tau_tilde` so that every gap window
//! shifted by `l` in `-max_lag..=max_lag` stays in bounds. `C(l)` pairs
//! `R(i)` with `G(i + l)`: a peak at positive `l` means present returns go
//! with future gaps.

use serde::Serialize;
use thiserror::Error;

use crate::scalar::Real;
use crate::stats;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum XcorrError {
    #[error("window length must be positive")]
    EmptyWindow,
    #[error("window at {start} with lag {max_lag} runs past series length {len}")]
    OutOfBounds { start: usize, max_lag: usize, len: usize },
    #[error("zero variance in window at {start}")]
    ZeroVariance { start: usize },
    #[error("no valid windows ({excluded} excluded for zero variance)")]
    NoValidWindows { excluded: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationFunction<T> {
    /// `-max_lag..=max_lag`
    pub lags: Vec<i64>,
    pub values: Vec<T>,
    pub tau_tilde: usize,
    /// Windows averaged.
    pub num_windows: usize,
    /// Windows dropped because a returns or gap window was constant.
    pub excluded: usize,
}

impl<T: Real> CorrelationFunction<T> {
    pub fn at(&self, lag: i64) -> Option<T> {
        self.lags.iter().position(|&l| l == lag).map(|i| self.values[i])
    }

    pub fn argmax(&self) -> i64 {
        let mut best = 0;
        for i in 1..self.values.len() {
            if self.values[i] > self.values[best] {
                best = i;
            }
        }
        self.lags[best]
    }

    /// CSV with columns `lag,C,J`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("lag,C,J\n");
        for (l, c) in self.lags.iter().zip(&self.values) {
            s.push_str(&format!("{l},{c},{}\n", self.num_windows));
        }
        s
    }
}

/// Start offsets of the returns windows that fit in a series of length `len`.
pub fn window_starts(len: usize, tau_tilde: usize, max_lag: usize) -> Vec<usize> {
    if tau_tilde == 0 {
        return Vec::new();
    }
    (0..)
        .map(|j| max_lag + j * tau_tilde)
        .take_while(|&t| t + tau_tilde + max_lag <= len)
        .collect()
}

fn centered<T: Real>(w: &[T]) -> Option<Vec<T>> {
    let m = stats::mean(w);
    let sd = stats::std_dev(w);
    if sd <= T::zero() || !sd.is_finite() {
        return None;
    }
    Some(w.iter().map(|&v| (v - m) / sd).collect())
}

/// Correlation function of the returns window starting at `start`, one
/// value per lag in `-max_lag..=max_lag`.
pub fn local_correlation<T: Real>(r: &[T], g: &[T], start: usize, tau_tilde: usize, max_lag: usize) -> Result<Vec<T>, XcorrError> {
    if tau_tilde == 0 {
        return Err(XcorrError::EmptyWindow);
    }
    let len = r.len().min(g.len());
    if start < max_lag || start + tau_tilde + max_lag > len {
        return Err(XcorrError::OutOfBounds { start, max_lag, len });
    }
    let zr = centered(&r[start..start + tau_tilde]).ok_or(XcorrError::ZeroVariance { start })?;
    let n = T::of_usize(tau_tilde);
    let mut out = Vec::with_capacity(2 * max_lag + 1);
    for lag in -(max_lag as i64)..=max_lag as i64 {
        let s = (start as i64 + lag) as usize;
        let zg = centered(&g[s..s + tau_tilde]).ok_or(XcorrError::ZeroVariance { start })?;
        out.push(crate::scalar::dot(&zr, &zg) / n);
    }
    Ok(out)
}

/// Mean of the local correlation functions over all valid windows.
pub fn average_correlation<T: Real>(r: &[T], g: &[T], tau_tilde: usize, max_lag: usize) -> Result<CorrelationFunction<T>, XcorrError> {
    if tau_tilde == 0 {
        return Err(XcorrError::EmptyWindow);
    }
    let width = 2 * max_lag + 1;
    let mut sum = vec![T::zero(); width];
    let (mut used, mut excluded) = (0usize, 0usize);
    for start in window_starts(r.len().min(g.len()), tau_tilde, max_lag) {
        match local_correlation(r, g, start, tau_tilde, max_lag) {
            Ok(c) => {
                sum.iter_mut().zip(c).for_each(|(s, v)| *s += v);
                used += 1;
            }
            Err(XcorrError::ZeroVariance { .. }) => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(XcorrError::NoValidWindows { excluded });
    }
    let n = T::of_usize(used);
    Ok(CorrelationFunction {
        lags: (-(max_lag as i64)..=max_lag as i64).collect(),
        values: sum.into_iter().map(|s| s / n).collect(),
        tau_tilde,
        num_windows: used,
        excluded,
    })
}

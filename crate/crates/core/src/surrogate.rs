//! Shuffle surrogates, empirical null ensembles and significance tables.
//!
//! A null score is the test applied to one window of independently shuffled
//! copies of both series; shuffle `i` scores window `i mod J`. Critical
//! values are order statistics of the null scores at rank
//! `ceil((1 - p) (N + 1))` (capped at `N`), so with exchangeable scores the
//! chance that a null score exceeds the threshold is at most `p`.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::rng::{stream_rng, substream, StreamRng};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SurrogateError {
    #[error("ensemble needs at least {min} shuffles, got {got}")]
    TooFewShuffles { min: usize, got: usize },
    #[error("series too short for a single test window")]
    NoWindows,
    #[error("every surrogate score was excluded")]
    AllExcluded,
    #[error("no null ensemble for `{0}`")]
    MissingEnsemble(String),
}

/// Minimum ensemble size.
pub const MIN_SHUFFLES: usize = 100;

/// A windowed score test on an ordered pair of series.
pub trait PairTest<T>: Sync {
    /// Number of test windows in series of length `len`.
    fn windows(&self, len: usize) -> usize;

    /// Score of window `window`; `stream` keys any randomness inside the
    /// test. `None` means the window is excluded.
    fn score(&self, x: &[T], y: &[T], window: usize, stream: u64) -> Option<T>;
}

/// Uniform random permutation drawn from `rng`.
pub fn shuffle_with<T: Clone>(series: &[T], rng: &mut StreamRng) -> Vec<T> {
    let mut v = series.to_vec();
    v.shuffle(rng);
    v
}

/// Uniform random permutation keyed by `(seed, stream)`.
pub fn shuffle<T: Clone>(series: &[T], seed: u64, stream: u64) -> Vec<T> {
    shuffle_with(series, &mut stream_rng(seed, stream))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    /// Significant when the score exceeds the upper critical value.
    Upper,
    /// Significant beyond either critical value at `p / 2` each side.
    Two,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurrogateEnsemble<T> {
    /// Null scores in shuffle order (excluded shuffles omitted).
    pub scores: Vec<T>,
    pub n_shuffles: usize,
    pub excluded: usize,
    pub seed: u64,
}

/// 1-based rank of the upper critical value among `n` sorted scores.
pub fn upper_rank(n: usize, p: f64) -> usize {
    (((1.0 - p) * (n as f64 + 1.0)).ceil() as usize).clamp(1, n)
}

impl<T: Real> SurrogateEnsemble<T> {
    fn sorted(&self) -> Vec<T> {
        crate::stats::sorted(&self.scores)
    }

    /// Upper one-tailed critical value at level `p`.
    pub fn upper_threshold(&self, p: f64) -> T {
        let s = self.sorted();
        s[upper_rank(s.len(), p) - 1]
    }

    /// Lower critical value at level `p` (mirror rank of the upper one).
    pub fn lower_threshold(&self, p: f64) -> T {
        let s = self.sorted();
        s[s.len() - upper_rank(s.len(), p)]
    }

    /// `(lower, upper)` critical values for the given tail.
    pub fn thresholds(&self, p: f64, tail: Tail) -> (Option<T>, T) {
        match tail {
            Tail::Upper => (None, self.upper_threshold(p)),
            Tail::Two => (Some(self.lower_threshold(p / 2.0)), self.upper_threshold(p / 2.0)),
        }
    }

    pub fn is_significant(&self, score: T, p: f64, tail: Tail) -> bool {
        let (lo, hi) = self.thresholds(p, tail);
        score > hi || lo.is_some_and(|l| score < l)
    }

    /// CSV with columns `shuffle,score`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("shuffle,score\n");
        for (i, v) in self.scores.iter().enumerate() {
            s.push_str(&format!("{i},{v}\n"));
        }
        s
    }
}

/// Scores of `test` on `n_shuffles` independently shuffled copies of
/// `(x, y)`. Shuffle `i` draws its permutations from streams derived from
/// `(seed, i)` and its score from window `i mod J`.
pub fn null_ensemble<T: Real, P: PairTest<T>>(test: &P, x: &[T], y: &[T], n_shuffles: usize, seed: u64) -> Result<SurrogateEnsemble<T>, SurrogateError> {
    if n_shuffles < MIN_SHUFFLES {
        return Err(SurrogateError::TooFewShuffles { min: MIN_SHUFFLES, got: n_shuffles });
    }
    let len = x.len().min(y.len());
    let windows = test.windows(len);
    if windows == 0 {
        return Err(SurrogateError::NoWindows);
    }
    let (x, y) = (&x[..len], &y[..len]);
    let raw: Vec<Option<T>> = (0..n_shuffles)
        .into_par_iter()
        .map(|i| {
            let key = substream(seed, i as u64);
            let xs = shuffle(x, seed, substream(key, 0));
            let ys = shuffle(y, seed, substream(key, 1));
            test.score(&xs, &ys, i % windows, substream(key, 2))
        })
        .collect();
    let excluded = raw.iter().filter(|s| s.is_none()).count();
    let scores: Vec<T> = raw.into_iter().flatten().collect();
    if scores.is_empty() {
        return Err(SurrogateError::AllExcluded);
    }
    Ok(SurrogateEnsemble { scores, n_shuffles, excluded, seed })
}

/// Scores of `test` on every window of the data; `None` for excluded windows.
pub fn data_scores<T: Real, P: PairTest<T>>(test: &P, x: &[T], y: &[T], seed: u64) -> Vec<Option<T>> {
    let len = x.len().min(y.len());
    let (x, y) = (&x[..len], &y[..len]);
    (0..test.windows(len))
        .into_par_iter()
        .map(|w| test.score(x, y, w, substream(seed ^ 0xDA7A, w as u64)))
        .collect()
}

/// Scores of one configuration and the tail rule that applies to them.
#[derive(Debug, Clone)]
pub struct ScoreGroup<'a, T> {
    pub key: String,
    pub scores: &'a [Option<T>],
    pub tail: Tail,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignificanceRow {
    pub key: String,
    pub tail: Tail,
    /// Scored windows (excluded ones not counted).
    pub total: usize,
    pub significant: usize,
    pub fraction: f64,
    pub excluded: usize,
    pub lower_threshold: Option<f64>,
    pub upper_threshold: f64,
}

/// Fraction of significant scores per configuration, each against the
/// ensemble stored under the same key.
pub fn significance_table<T: Real>(
    groups: &[ScoreGroup<'_, T>],
    ensembles: &std::collections::BTreeMap<String, SurrogateEnsemble<T>>,
    p: f64,
) -> Result<Vec<SignificanceRow>, SurrogateError> {
    groups
        .iter()
        .map(|g| {
            let ens = ensembles.get(&g.key).ok_or_else(|| SurrogateError::MissingEnsemble(g.key.clone()))?;
            let (lo, hi) = ens.thresholds(p, g.tail);
            let valid: Vec<T> = g.scores.iter().flatten().copied().collect();
            let significant = valid.iter().filter(|&&s| ens.is_significant(s, p, g.tail)).count();
            let total = valid.len();
            Ok(SignificanceRow {
                key: g.key.clone(),
                tail: g.tail,
                total,
                significant,
                fraction: if total == 0 { 0.0 } else { significant as f64 / total as f64 },
                excluded: g.scores.len() - total,
                lower_threshold: lo.map(Real::as_f64),
                upper_threshold: hi.as_f64(),
            })
        })
        .collect()
}

/// CSV with columns `key,tail,total,significant,fraction,excluded,lower,upper`.
pub fn table_to_csv(rows: &[SignificanceRow]) -> String {
    let mut s = String::from("key,tail,total,significant,fraction,excluded,lower,upper\n");
    for r in rows {
        let tail = match r.tail {
            Tail::Upper => "upper",
            Tail::Two => "two",
        };
        let lo = r.lower_threshold.map(|v| v.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{tail},{},{},{},{},{lo},{}\n", r.key, r.total, r.significant, r.fraction, r.excluded, r.upper_threshold));
    }
    s
}

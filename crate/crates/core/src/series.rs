//! Gap, return and volatility series, and their reduction to per-window
//! percentile series.
//!
//! Gaps are log-ratios of adjacent price levels on one side of the book.
//! Both sides are reported as nonnegative sizes: asks use
//! `ln(a[l+1] / a[l])` and bids `ln(b[l] / b[l+1])`.
//!
//! Windows are disjoint blocks of `tau` steps; a trailing partial block is
//! dropped, so a series of length `n` reduces to `n / tau` values.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{BookSnapshot, Decimal, SnapshotSequence, LEVELS};
use crate::scalar::Real;
use crate::stats;

/// Gaps per side.
pub const GAP_LEVELS: usize = LEVELS - 1;
const STEP: usize = 2 * GAP_LEVELS;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SeriesError {
    #[error("window size must be at least {min}, got {tau}")]
    WindowTooSmall { tau: usize, min: usize },
    #[error("window of {tau} steps exceeds series length {len}")]
    WindowTooLarge { tau: usize, len: usize },
    #[error("need at least {need} snapshots, got {got}")]
    TooShort { need: usize, got: usize },
}

/// Log-gaps indexed by `(t, side, level)`; side 0 is asks, side 1 is bids,
/// level 0 is the gap between the first and second price.
#[derive(Debug, Clone, PartialEq)]
pub struct GapSeries<T> {
    values: Vec<T>,
    len: usize,
    resolution: i64,
}

/// Gap vector for one book state: 19 ask gaps followed by 19 bid gaps.
/// Equal adjacent prices give a zero gap.
pub fn gaps_from_levels<T: Real>(asks: &[Decimal], bids: &[Decimal]) -> Vec<T> {
    let gap = |near: Decimal, far: Decimal| {
        let (near, far) = (near.units() as f64, far.units() as f64);
        T::of(((far - near).abs() / near.min(far)).ln_1p())
    };
    let mut out = Vec::with_capacity(STEP);
    out.extend(asks.windows(2).map(|w| gap(w[0], w[1])));
    out.extend(bids.windows(2).map(|w| gap(w[0], w[1])));
    out
}

impl<T: Real> GapSeries<T> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn resolution(&self) -> i64 {
        self.resolution
    }

    /// `side` 0 = ask, 1 = bid; `level` 0-based.
    pub fn get(&self, t: usize, side: usize, level: usize) -> T {
        self.values[t * STEP + side * GAP_LEVELS + level]
    }

    /// All 38 gaps at step `t`.
    pub fn step(&self, t: usize) -> &[T] {
        &self.values[t * STEP..(t + 1) * STEP]
    }

    /// First ask and first bid gap at step `t`.
    pub fn first_gaps(&self, t: usize) -> [T; 2] {
        [self.get(t, 0, 0), self.get(t, 1, 0)]
    }

    /// Steps `range` as a new series.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        GapSeries { values: self.values[range.start * STEP..range.end * STEP].to_vec(), len: range.len(), resolution: self.resolution }
    }
}

pub fn compute_gaps<T: Real>(snapshots: &[BookSnapshot], resolution: i64) -> GapSeries<T> {
    let mut values = Vec::with_capacity(snapshots.len() * STEP);
    let mut asks = [Decimal::ZERO; LEVELS];
    let mut bids = [Decimal::ZERO; LEVELS];
    for s in snapshots {
        for i in 0..LEVELS {
            asks[i] = s.asks()[i].price;
            bids[i] = s.bids()[i].price;
        }
        values.extend(gaps_from_levels::<T>(&asks, &bids));
    }
    GapSeries { values, len: snapshots.len(), resolution }
}

pub fn gaps_of<T: Real>(seq: &SnapshotSequence) -> GapSeries<T> {
    compute_gaps(seq.snapshots(), seq.resolution())
}

/// Log-returns of the mid-price; `values[i]` is the return from state `i`
/// to state `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSeries<T> {
    pub values: Vec<T>,
    pub mid_prices: Vec<T>,
}

pub fn compute_returns<T: Real>(snapshots: &[BookSnapshot]) -> Result<ReturnSeries<T>, SeriesError> {
    if snapshots.len() < 2 {
        return Err(SeriesError::TooShort { need: 2, got: snapshots.len() });
    }
    let doubled: Vec<i64> = snapshots.iter().map(|s| s.mid_doubled().units()).collect();
    let values = doubled
        .windows(2)
        .map(|w| T::of(((w[1] - w[0]) as f64 / w[0] as f64).ln_1p()))
        .collect();
    let mid_prices = snapshots.iter().map(|s| T::of(s.mid_price())).collect();
    Ok(ReturnSeries { values, mid_prices })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GapScope {
    /// All 2 x 19 gaps.
    All,
    /// Only the first gap of each side.
    First,
}

impl std::str::FromStr for GapScope {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(GapScope::All),
            "first" => Ok(GapScope::First),
            o => Err(format!("unknown gap scope `{o}` (expected all or first)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesSource {
    GapsAll,
    GapsFirst,
    Returns,
    /// `|r(t)|`, the absolute-return option of the return percentiles.
    AbsReturns,
}

impl fmt::Display for SeriesSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SeriesSource::GapsAll => "gaps_all",
            SeriesSource::GapsFirst => "gaps_first",
            SeriesSource::Returns => "returns",
            SeriesSource::AbsReturns => "abs_returns",
        })
    }
}

/// Per-window reduction that produced a [`PercentileSeries`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowStatistic {
    Percentile(f64),
    AbsMean,
    Std,
}

impl fmt::Display for WindowStatistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WindowStatistic::Percentile(p) => write!(f, "p{p}"),
            WindowStatistic::AbsMean => f.write_str("absmean"),
            WindowStatistic::Std => f.write_str("std"),
        }
    }
}

/// One value per disjoint window of `tau` steps, indexed by window `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PercentileSeries<T> {
    pub values: Vec<T>,
    pub tau: usize,
    pub statistic: WindowStatistic,
    pub source: SeriesSource,
}

impl<T: Real> PercentileSeries<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// CSV with columns `k,value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,value\n");
        for (k, v) in self.values.iter().enumerate() {
            s.push_str(&format!("{k},{v}\n"));
        }
        s
    }
}

fn check_tau(tau: usize, len: usize, min: usize) -> Result<usize, SeriesError> {
    if tau < min {
        return Err(SeriesError::WindowTooSmall { tau, min });
    }
    if tau > len {
        return Err(SeriesError::WindowTooLarge { tau, len });
    }
    Ok(len / tau)
}

/// Percentile `p` of every in-scope gap inside each window, flattened over
/// side, level and time.
pub fn reduce_gaps<T: Real>(gaps: &GapSeries<T>, tau: usize, p: f64, scope: GapScope) -> Result<PercentileSeries<T>, SeriesError> {
    let windows = check_tau(tau, gaps.len(), 1)?;
    let per_step = match scope {
        GapScope::All => STEP,
        GapScope::First => 2,
    };
    let mut buf = Vec::with_capacity(tau * per_step);
    let mut values = Vec::with_capacity(windows);
    for k in 0..windows {
        buf.clear();
        for t in k * tau..(k + 1) * tau {
            match scope {
                GapScope::All => buf.extend_from_slice(gaps.step(t)),
                GapScope::First => buf.extend(gaps.first_gaps(t)),
            }
        }
        values.push(stats::percentile(&buf, p));
    }
    let source = match scope {
        GapScope::All => SeriesSource::GapsAll,
        GapScope::First => SeriesSource::GapsFirst,
    };
    Ok(PercentileSeries { values, tau, statistic: WindowStatistic::Percentile(p), source })
}

/// Percentile `p` of the returns in each window. `absolute` reduces `|r|`
/// instead of the signed returns.
pub fn reduce_returns<T: Real>(returns: &ReturnSeries<T>, tau: usize, p: f64, absolute: bool) -> Result<PercentileSeries<T>, SeriesError> {
    let windows = check_tau(tau, returns.values.len(), 1)?;
    let mut buf = Vec::with_capacity(tau);
    let values = (0..windows)
        .map(|k| {
            buf.clear();
            buf.extend(returns.values[k * tau..(k + 1) * tau].iter().map(|&r| if absolute { r.abs() } else { r }));
            stats::percentile(&buf, p)
        })
        .collect();
    let source = if absolute { SeriesSource::AbsReturns } else { SeriesSource::Returns };
    Ok(PercentileSeries { values, tau, statistic: WindowStatistic::Percentile(p), source })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolatilityKind {
    /// Mean of `|r|` over the window.
    AbsMean,
    /// Population standard deviation of `r` over the window.
    Std,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolatilitySeries<T> {
    pub series: PercentileSeries<T>,
    /// Windows whose returns were all equal (value 0 for `Std`).
    pub degenerate: Vec<usize>,
}

pub fn compute_volatility<T: Real>(returns: &ReturnSeries<T>, tau: usize, kind: VolatilityKind) -> Result<VolatilitySeries<T>, SeriesError> {
    let min = match kind {
        VolatilityKind::AbsMean => 1,
        VolatilityKind::Std => 2,
    };
    let windows = check_tau(tau, returns.values.len(), min)?;
    let mut degenerate = Vec::new();
    let values = (0..windows)
        .map(|k| {
            let w = &returns.values[k * tau..(k + 1) * tau];
            if w.iter().all(|&r| r == w[0]) {
                degenerate.push(k);
            }
            match kind {
                VolatilityKind::AbsMean => w.iter().map(|r| r.abs()).sum::<T>() / T::of_usize(tau),
                VolatilityKind::Std => stats::std_dev(w),
            }
        })
        .collect();
    let statistic = match kind {
        VolatilityKind::AbsMean => WindowStatistic::AbsMean,
        VolatilityKind::Std => WindowStatistic::Std,
    };
    Ok(VolatilitySeries { series: PercentileSeries { values, tau, statistic, source: SeriesSource::Returns }, degenerate })
}

/// Distribution of where the window maximum gap sits. Positions are signed
/// levels: `+l` for the `l`-th ask gap, `-l` for the `l`-th bid gap. Ties
/// split the window's unit mass evenly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionHistogram {
    /// `-19..=-1, 1..=19`
    pub positions: Vec<i32>,
    pub mass: Vec<f64>,
    pub windows: usize,
}

impl PositionHistogram {
    pub fn probability(&self, position: i32) -> f64 {
        self.positions
            .iter()
            .position(|&p| p == position)
            .map_or(0.0, |i| self.mass[i] / self.windows as f64)
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.mass.iter().map(|m| m / self.windows as f64).collect()
    }

    /// CSV with columns `position,probability`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("position,probability\n");
        for (p, q) in self.positions.iter().zip(self.probabilities()) {
            s.push_str(&format!("{p},{q}\n"));
        }
        s
    }
}

fn position_index(side: usize, level: usize) -> usize {
    // bids -19..-1 occupy 0..19, asks 1..19 occupy 19..38
    if side == 1 {
        GAP_LEVELS - 1 - level
    } else {
        GAP_LEVELS + level
    }
}

pub fn max_gap_position_histogram<T: Real>(gaps: &GapSeries<T>, tau: usize) -> Result<PositionHistogram, SeriesError> {
    let windows = check_tau(tau, gaps.len(), 1)?;
    let mut positions: Vec<i32> = (1..=GAP_LEVELS as i32).rev().map(|l| -l).collect();
    positions.extend(1..=GAP_LEVELS as i32);
    let mut mass = vec![0.0; STEP];
    let mut hit = [false; STEP];
    for k in 0..windows {
        let mut best = T::neg_infinity();
        for t in k * tau..(k + 1) * tau {
            best = gaps.step(t).iter().copied().fold(best, T::max);
        }
        hit.iter_mut().for_each(|h| *h = false);
        for t in k * tau..(k + 1) * tau {
            for (i, &g) in gaps.step(t).iter().enumerate() {
                if g == best {
                    hit[position_index(i / GAP_LEVELS, i % GAP_LEVELS)] = true;
                }
            }
        }
        let share = 1.0 / hit.iter().filter(|&&h| h).count() as f64;
        for (m, &h) in mass.iter_mut().zip(&hit) {
            if h {
                *m += share;
            }
        }
    }
    Ok(PositionHistogram { positions, mass, windows })
}

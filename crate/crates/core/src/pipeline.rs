//! End-to-end runs: configuration, staged execution and the run report.
//!
//! Stages run in order (ingest, series, xcorr, granger, anm, surrogate) and
//! exchange only in-memory values. Every file written under the output
//! directory is listed in `report.json` with its SHA-256 digest. Nothing
//! time- or host-dependent is recorded, so identical inputs, configuration
//! and seed reproduce every byte.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::anm::LaggedAnm;
use crate::gpr::GpConfig;
use crate::granger::{GrangerTest, Variant};
use crate::ingest::{audit_coverage, parse_snapshots, Decimal, Format, IngestConfig, IngestError, SnapshotSequence};
use crate::linmodel::select_lag;
use crate::rng::{label_stream, substream, RNG_NAME};
use crate::series::{
    compute_gaps, compute_returns, compute_volatility, max_gap_position_histogram, reduce_gaps, reduce_returns, GapScope, GapSeries,
    ReturnSeries, SeriesError, VolatilityKind, GAP_LEVELS,
};
use crate::stats::{finite_range, Histogram};
use crate::surrogate::{null_ensemble, significance_table, table_to_csv, ScoreGroup, SignificanceRow, SurrogateEnsemble, Tail, MIN_SHUFFLES};
use crate::synthgen::{generate, GeneratorKind, GeneratorSpec, Generated};
use crate::xcorr::{average_correlation, CorrelationFunction, XcorrError};

pub const TOOL_NAME: &str = "gapflow";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Bins of every score histogram (data and control share edges).
pub const SCORE_BINS: usize = 30;
/// Bins of the gap-size histograms; fine enough to show tick quantization.
pub const GAP_SIZE_BINS: usize = 200;
/// Name of the marker written into a stage directory that produced nothing.
pub const EMPTY_MARKER: &str = "no valid windows";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("reading {path}: {source}")]
    Ingest { path: String, source: IngestError },
    #[error("io on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("synthetic input: {0}")]
    Synth(String),
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String },
    #[error("bad report: {0}")]
    Report(String),
}

impl PipelineError {
    /// Short machine-readable kind, used in CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::Ingest { .. } => "ingest",
            PipelineError::Io { .. } => "io",
            PipelineError::Synth(_) => "synth",
            PipelineError::Stage { .. } => "stage",
            PipelineError::Report(_) => "report",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

fn fmt_percentile(p: f64) -> String {
    if p.fract() == 0.0 {
        format!("{}", p as u64)
    } else {
        p.to_string()
    }
}

/// Name of a derived series: `g{p}` / `gf{p}` for percentiles of all or
/// first gaps, `r{p}` / `ra{p}` for signed or absolute returns, `vabs` and
/// `vstd` for the volatility variants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SeriesId {
    Gaps { scope: GapScope, p: f64 },
    Returns { p: f64, absolute: bool },
    Volatility(VolatilityKind),
}

impl fmt::Display for SeriesId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            SeriesId::Gaps { scope: GapScope::All, p } => write!(f, "g{}", fmt_percentile(p)),
            SeriesId::Gaps { scope: GapScope::First, p } => write!(f, "gf{}", fmt_percentile(p)),
            SeriesId::Returns { p, absolute: false } => write!(f, "r{}", fmt_percentile(p)),
            SeriesId::Returns { p, absolute: true } => write!(f, "ra{}", fmt_percentile(p)),
            SeriesId::Volatility(VolatilityKind::AbsMean) => f.write_str("vabs"),
            SeriesId::Volatility(VolatilityKind::Std) => f.write_str("vstd"),
        }
    }
}

impl FromStr for SeriesId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vabs" => return Ok(SeriesId::Volatility(VolatilityKind::AbsMean)),
            "vstd" => return Ok(SeriesId::Volatility(VolatilityKind::Std)),
            _ => {}
        }
        let (rest, make): (&str, fn(f64) -> SeriesId) = if let Some(r) = s.strip_prefix("gf") {
            (r, |p| SeriesId::Gaps { scope: GapScope::First, p })
        } else if let Some(r) = s.strip_prefix('g') {
            (r, |p| SeriesId::Gaps { scope: GapScope::All, p })
        } else if let Some(r) = s.strip_prefix("ra") {
            (r, |p| SeriesId::Returns { p, absolute: true })
        } else if let Some(r) = s.strip_prefix('r') {
            (r, |p| SeriesId::Returns { p, absolute: false })
        } else {
            return Err(format!("unknown series `{s}` (expected g<p>, gf<p>, r<p>, ra<p>, vabs or vstd)"));
        };
        let p: f64 = rest.parse().map_err(|_| format!("bad percentile in series `{s}`"))?;
        if !(p > 0.0 && p <= 100.0) {
            return Err(format!("percentile {p} in `{s}` outside (0, 100]"));
        }
        Ok(make(p))
    }
}

/// Ordered pair of series written `a:b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPair {
    pub first: SeriesId,
    pub second: SeriesId,
}

impl fmt::Display for SeriesPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.first, self.second)
    }
}

impl FromStr for SeriesPair {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s.split_once(':').ok_or_else(|| format!("pair `{s}` must look like a:b"))?;
        Ok(SeriesPair { first: a.trim().parse()?, second: b.trim().parse()? })
    }
}

/// Parses a comma-separated pair list.
pub fn parse_pairs(s: &str) -> Result<Vec<SeriesPair>, String> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(|p| p.trim().parse()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct XcorrConfig {
    pub enabled: bool,
    pub tau_tilde: usize,
    pub max_lag: usize,
    /// `returns:gaps` pairs; empty selects the defaults.
    pub pairs: Vec<String>,
}

impl Default for XcorrConfig {
    fn default() -> Self {
        XcorrConfig { enabled: true, tau_tilde: 100, max_lag: 10, pairs: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrangerConfig {
    pub enabled: bool,
    pub tau_tilde: usize,
    /// Fixed lag; `None` selects it by median BIC per effect series.
    pub lag: Option<usize>,
    pub max_lag: usize,
    pub variants: Vec<Variant>,
    pub shuffles: usize,
    /// Each pair is tested in both directions; empty selects the defaults.
    pub pairs: Vec<String>,
}

impl Default for GrangerConfig {
    fn default() -> Self {
        GrangerConfig {
            enabled: true,
            tau_tilde: 500,
            lag: None,
            max_lag: 10,
            variants: vec![Variant::Standard, Variant::Instantaneous],
            shuffles: 1000,
            pairs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnmConfig {
    pub enabled: bool,
    pub tau_tilde: usize,
    pub lags: Vec<usize>,
    /// Window sizes to test; empty uses the run's list.
    pub taus: Vec<usize>,
    pub shuffles: usize,
    /// `x:y` pairs. Lag 0 is one two-tailed test; positive lags test both
    /// directions one-tailed.
    pub pairs: Vec<String>,
    pub starts: usize,
    pub max_points: usize,
}

impl Default for AnmConfig {
    fn default() -> Self {
        AnmConfig {
            enabled: true,
            tau_tilde: 500,
            lags: vec![0, 1, 3, 7],
            taus: vec![60],
            shuffles: 200,
            pairs: vec!["g100:r100".into()],
            starts: 5,
            max_points: 1000,
        }
    }
}

/// Run configuration, read from TOML and overridable field by field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub inputs: Vec<PathBuf>,
    /// Input format; inferred from each file's extension when absent.
    pub format: Option<Format>,
    pub tick: Decimal,
    pub resolution: i64,
    /// Synthetic book used when `inputs` is empty.
    pub synth: Option<GeneratorSpec>,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub taus: Vec<usize>,
    pub percentiles: Vec<f64>,
    pub gap_scopes: Vec<GapScope>,
    pub significance: f64,
    pub xcorr: XcorrConfig,
    pub granger: GrangerConfig,
    pub anm: AnmConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            inputs: Vec::new(),
            format: None,
            tick: Decimal::from_units(1_000_000),
            resolution: 10,
            synth: None,
            seed: None,
            out_dir: PathBuf::from("gapflow-out"),
            taus: vec![30, 60, 90, 120],
            percentiles: vec![50.0, 99.0, 100.0],
            gap_scopes: vec![GapScope::All, GapScope::First],
            significance: 0.01,
            xcorr: XcorrConfig::default(),
            granger: GrangerConfig::default(),
            anm: AnmConfig::default(),
        }
    }
}

fn gap_id(scope: GapScope, p: f64) -> SeriesId {
    SeriesId::Gaps { scope, p }
}

fn returns_id(p: f64) -> SeriesId {
    SeriesId::Returns { p, absolute: false }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn seed(&self) -> Result<u64, PipelineError> {
        self.seed.ok_or_else(|| PipelineError::Config("a seed is required".into()))
    }

    fn has_percentile(&self, p: f64) -> bool {
        self.percentiles.contains(&p)
    }

    /// Configured or default `returns:gaps` pairs.
    pub fn xcorr_pairs(&self) -> Result<Vec<SeriesPair>, PipelineError> {
        if !self.xcorr.pairs.is_empty() {
            return parse_list(&self.xcorr.pairs);
        }
        let mut out = Vec::new();
        for &scope in &self.gap_scopes {
            for &p in &self.percentiles {
                out.push(SeriesPair { first: returns_id(p), second: gap_id(scope, p) });
            }
            if self.has_percentile(50.0) && self.has_percentile(100.0) {
                out.push(SeriesPair { first: returns_id(50.0), second: gap_id(scope, 100.0) });
            }
        }
        Ok(out)
    }

    /// Configured or default Granger pairs.
    pub fn granger_pairs(&self) -> Result<Vec<SeriesPair>, PipelineError> {
        if !self.granger.pairs.is_empty() {
            return parse_list(&self.granger.pairs);
        }
        let mut out = Vec::new();
        for &scope in &self.gap_scopes {
            for &p in &self.percentiles {
                out.push(SeriesPair { first: gap_id(scope, p), second: returns_id(p) });
            }
        }
        if self.has_percentile(100.0) {
            for kind in [VolatilityKind::AbsMean, VolatilityKind::Std] {
                out.push(SeriesPair { first: gap_id(GapScope::All, 100.0), second: SeriesId::Volatility(kind) });
            }
        }
        Ok(out)
    }

    pub fn anm_pairs(&self) -> Result<Vec<SeriesPair>, PipelineError> {
        parse_list(&self.anm.pairs)
    }

    pub fn anm_taus(&self) -> &[usize] {
        if self.anm.taus.is_empty() {
            &self.taus
        } else {
            &self.anm.taus
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        self.seed()?;
        if self.inputs.is_empty() {
            match &self.synth {
                None => return bad("no inputs and no synthetic book configured".into()),
                Some(s) if s.kind != GeneratorKind::SyntheticBook => {
                    return bad(format!("synthetic input must be synthetic_book, got {}", s.kind));
                }
                Some(s) => s.validate().map_err(|e| PipelineError::Config(e.to_string()))?,
            }
        }
        if self.tick <= Decimal::ZERO || self.resolution <= 0 {
            return bad("tick and resolution must be positive".into());
        }
        if self.taus.is_empty() || self.taus.iter().chain(self.anm_taus()).any(|&t| t < 2) {
            return bad("window sizes must be at least 2".into());
        }
        if self.percentiles.iter().any(|&p| !(p > 0.0 && p <= 100.0)) || self.percentiles.is_empty() {
            return bad("percentiles must lie in (0, 100]".into());
        }
        if !(self.significance > 0.0 && self.significance < 1.0) {
            return bad(format!("significance level {} outside (0, 1)", self.significance));
        }
        if self.xcorr.enabled && (self.xcorr.tau_tilde < 2 || self.xcorr.tau_tilde <= 2 * self.xcorr.max_lag) {
            return bad(format!("xcorr window {} must exceed twice the max lag {}", self.xcorr.tau_tilde, self.xcorr.max_lag));
        }
        let g = &self.granger;
        if g.enabled {
            if g.tau_tilde < 2 || g.lag == Some(0) || g.max_lag == 0 || g.variants.is_empty() {
                return bad("granger needs a window of at least 2, positive lags and a variant".into());
            }
            if g.shuffles < MIN_SHUFFLES {
                return bad(format!("granger needs at least {MIN_SHUFFLES} shuffles"));
            }
        }
        let a = &self.anm;
        if a.enabled {
            if a.tau_tilde < 2 || a.lags.is_empty() || a.starts == 0 || a.max_points < 5 {
                return bad("anm needs a window of at least 2, a lag list, a start and 5 points".into());
            }
            if a.shuffles < MIN_SHUFFLES {
                return bad(format!("anm needs at least {MIN_SHUFFLES} shuffles"));
            }
        }
        self.xcorr_pairs()?;
        self.granger_pairs()?;
        self.anm_pairs()?;
        Ok(())
    }
}

fn parse_list(items: &[String]) -> Result<Vec<SeriesPair>, PipelineError> {
    items.iter().map(|s| s.parse().map_err(PipelineError::Config)).collect()
}

/// One hole-free stretch of snapshots, reduced to gaps and returns.
#[derive(Debug, Clone)]
pub struct Segment {
    pub label: String,
    pub gaps: GapSeries<f64>,
    pub returns: ReturnSeries<f64>,
}

/// Splits sequences into hole-free segments of at least two snapshots.
pub fn segments_of(seqs: &[SnapshotSequence]) -> Vec<Segment> {
    let mut out = Vec::new();
    for seq in seqs {
        for (i, r) in seq.segments().into_iter().enumerate() {
            let snaps = &seq.snapshots()[r];
            if let Ok(returns) = compute_returns(snaps) {
                out.push(Segment { label: format!("{}#{i}", seq.label()), gaps: compute_gaps(snaps, seq.resolution()), returns });
            }
        }
    }
    out
}

fn derive(seg: &Segment, id: SeriesId, tau: usize) -> Result<Vec<f64>, SeriesError> {
    Ok(match id {
        SeriesId::Gaps { scope, p } => reduce_gaps(&seg.gaps, tau, p, scope)?.values,
        SeriesId::Returns { p, absolute } => reduce_returns(&seg.returns, tau, p, absolute)?.values,
        SeriesId::Volatility(kind) => compute_volatility(&seg.returns, tau, kind)?.series.values,
    })
}

/// Every requested series for every segment and window size.
#[derive(Debug, Clone)]
pub struct SeriesBank {
    pub segments: Vec<Segment>,
    values: BTreeMap<(usize, usize, String), Vec<f64>>,
    /// `(segment, tau, id, reason)` for series that could not be formed.
    pub missing: Vec<(usize, usize, String, String)>,
}

impl SeriesBank {
    pub fn build(segments: Vec<Segment>, taus: &[usize], ids: &[SeriesId]) -> Self {
        let mut unique: BTreeMap<String, SeriesId> = BTreeMap::new();
        for &id in ids {
            unique.insert(id.to_string(), id);
        }
        let taus: BTreeSet<usize> = taus.iter().copied().collect();
        let mut jobs: Vec<(usize, usize, &String, SeriesId)> = Vec::new();
        for s in 0..segments.len() {
            for &t in &taus {
                jobs.extend(unique.iter().map(|(k, &id)| (s, t, k, id)));
            }
        }
        let done: Vec<_> = jobs.par_iter().map(|&(s, t, k, id)| ((s, t, k.clone()), derive(&segments[s], id, t))).collect();
        let mut values = BTreeMap::new();
        let mut missing = Vec::new();
        for (key, r) in done {
            match r {
                Ok(v) => {
                    values.insert(key, v);
                }
                Err(e) => missing.push((key.0, key.1, key.2, e.to_string())),
            }
        }
        SeriesBank { segments, values, missing }
    }

    pub fn get(&self, segment: usize, tau: usize, id: SeriesId) -> Option<&[f64]> {
        self.values.get(&(segment, tau, id.to_string())).map(Vec::as_slice)
    }

    /// Stored series as `(segment, tau, id, values)` in key order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &str, &[f64])> {
        self.values.iter().map(|((s, t, k), v)| (*s, *t, k.as_str(), v.as_slice()))
    }

    /// Both series of a pair per segment, cut to their common length.
    /// Segments lacking either series are skipped.
    pub fn aligned(&self, tau: usize, pair: SeriesPair) -> Vec<(&[f64], &[f64])> {
        (0..self.segments.len())
            .filter_map(|s| {
                let a = self.get(s, tau, pair.first)?;
                let b = self.get(s, tau, pair.second)?;
                let n = a.len().min(b.len());
                Some((&a[..n], &b[..n]))
            })
            .collect()
    }
}

/// Correlation function of one pair averaged over every segment's windows.
#[derive(Debug, Clone, Serialize)]
pub struct XcorrEntry {
    pub pair: String,
    pub tau: usize,
    pub function: CorrelationFunction<f64>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct XcorrOutcome {
    pub entries: Vec<XcorrEntry>,
    pub notes: Vec<String>,
}

pub fn xcorr_analysis(bank: &SeriesBank, taus: &[usize], pairs: &[SeriesPair], cfg: &XcorrConfig) -> XcorrOutcome {
    let mut out = XcorrOutcome::default();
    for &tau in taus {
        for &pair in pairs {
            let width = 2 * cfg.max_lag + 1;
            let mut sum = vec![0.0; width];
            let (mut used, mut excluded) = (0usize, 0usize);
            for (r, g) in bank.aligned(tau, pair) {
                match average_correlation(r, g, cfg.tau_tilde, cfg.max_lag) {
                    Ok(cf) => {
                        for (s, v) in sum.iter_mut().zip(&cf.values) {
                            *s += v * cf.num_windows as f64;
                        }
                        used += cf.num_windows;
                        excluded += cf.excluded;
                    }
                    Err(XcorrError::NoValidWindows { excluded: e }) => excluded += e,
                    Err(e) => out.notes.push(format!("xcorr {pair} tau={tau}: {e}")),
                }
            }
            if used == 0 {
                out.notes.push(format!("{EMPTY_MARKER}: xcorr {pair} tau={tau} ({excluded} excluded)"));
                continue;
            }
            let function = CorrelationFunction {
                lags: (-(cfg.max_lag as i64)..=cfg.max_lag as i64).collect(),
                values: sum.into_iter().map(|s| s / used as f64).collect(),
                tau_tilde: cfg.tau_tilde,
                num_windows: used,
                excluded,
            };
            out.entries.push(XcorrEntry { pair: pair.to_string(), tau, function });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrangerRow {
    pub pair: String,
    pub direction: String,
    pub variant: Variant,
    pub tau: usize,
    /// Window index counted across segments.
    pub window: usize,
    pub lag: usize,
    /// `None` for excluded (degenerate or unfittable) windows.
    pub s: Option<f64>,
    pub significant: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagChoice {
    pub series: String,
    pub tau: usize,
    pub lag: usize,
    pub median_bic: Vec<f64>,
    pub skipped: usize,
}

#[derive(Debug, Clone, Default)]
pub struct GrangerOutcome {
    pub rows: Vec<GrangerRow>,
    pub table: Vec<SignificanceRow>,
    pub ensembles: BTreeMap<String, SurrogateEnsemble<f64>>,
    /// Data scores per key, aligned with `table`.
    pub scores: BTreeMap<String, Vec<Option<f64>>>,
    pub lags: Vec<LagChoice>,
    pub notes: Vec<String>,
}

impl GrangerOutcome {
    /// CSV with columns `pair,direction,variant,tau,window,s,significant`
    /// (excluded windows leave the last two empty).
    pub fn rows_csv(&self) -> String {
        let mut s = String::from("pair,direction,variant,tau,window,s,significant\n");
        for r in &self.rows {
            let v = r.s.map(|v| v.to_string()).unwrap_or_default();
            let sig = r.significant.map(|b| b.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{},{},{v},{sig}\n", r.pair, r.direction, r.variant, r.tau, r.window));
        }
        s
    }
}

pub fn granger_key(cause: SeriesId, effect: SeriesId, variant: Variant, tau: usize) -> String {
    format!("{cause}_to_{effect}_{variant}_tau{tau}")
}

/// Windowed Granger tests of every pair in both directions, each key
/// judged against its own shuffle ensemble (upper tail).
pub fn granger_analysis(bank: &SeriesBank, taus: &[usize], pairs: &[SeriesPair], cfg: &GrangerConfig, p: f64, seed: u64) -> GrangerOutcome {
    let mut out = GrangerOutcome::default();
    let mut lag_cache: BTreeMap<(String, usize), usize> = BTreeMap::new();
    for &tau in taus {
        for &pair in pairs {
            for (cause, effect) in [(pair.first, pair.second), (pair.second, pair.first)] {
                let aligned = bank.aligned(tau, SeriesPair { first: cause, second: effect });
                let lag = match cfg.lag {
                    Some(l) => l,
                    None => *lag_cache.entry((effect.to_string(), tau)).or_insert_with(|| {
                        let windows: Vec<&[f64]> = aligned.iter().flat_map(|(_, e)| e.chunks_exact(cfg.tau_tilde)).collect();
                        let sel = select_lag(&windows, cfg.max_lag);
                        out.lags.push(LagChoice {
                            series: effect.to_string(),
                            tau,
                            lag: sel.lag,
                            median_bic: sel.median_bic,
                            skipped: sel.skipped,
                        });
                        sel.lag
                    }),
                };
                for &variant in &cfg.variants {
                    let key = granger_key(cause, effect, variant, tau);
                    let test = GrangerTest { lag, variant, tau_tilde: cfg.tau_tilde };
                    let mut scores = Vec::new();
                    for (c, e) in &aligned {
                        scores.extend(crate::surrogate::data_scores(&test, c, e, 0));
                    }
                    if scores.is_empty() {
                        out.notes.push(format!("{EMPTY_MARKER}: granger {key}"));
                        continue;
                    }
                    let cat_c: Vec<f64> = aligned.iter().flat_map(|(c, _)| c.iter().copied()).collect();
                    let cat_e: Vec<f64> = aligned.iter().flat_map(|(_, e)| e.iter().copied()).collect();
                    let ens = match null_ensemble(&test, &cat_c, &cat_e, cfg.shuffles, substream(seed, label_stream(&key))) {
                        Ok(e) => e,
                        Err(e) => {
                            out.notes.push(format!("granger {key}: {e}"));
                            continue;
                        }
                    };
                    for (window, s) in scores.iter().enumerate() {
                        out.rows.push(GrangerRow {
                            pair: pair.to_string(),
                            direction: format!("{cause}->{effect}"),
                            variant,
                            tau,
                            window,
                            lag,
                            s: *s,
                            significant: s.map(|v| ens.is_significant(v, p, Tail::Upper)),
                        });
                    }
                    out.ensembles.insert(key.clone(), ens);
                    out.scores.insert(key, scores);
                }
            }
        }
    }
    let groups: Vec<ScoreGroup<'_, f64>> =
        out.scores.iter().map(|(k, v)| ScoreGroup { key: k.clone(), scores: v, tail: Tail::Upper }).collect();
    out.table = significance_table(&groups, &out.ensembles, p).expect("every scored key has an ensemble");
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnmRow {
    /// `x:y`; positive `s` favours `x -> y`.
    pub pair: String,
    pub lag: usize,
    pub tau: usize,
    pub window: usize,
    pub s: Option<f64>,
    pub z_xy: Option<f64>,
    pub z_yx: Option<f64>,
    pub significant: Option<bool>,
}

#[derive(Debug, Clone, Default)]
pub struct AnmOutcome {
    pub rows: Vec<AnmRow>,
    pub table: Vec<SignificanceRow>,
    pub ensembles: BTreeMap<String, SurrogateEnsemble<f64>>,
    pub scores: BTreeMap<String, Vec<Option<f64>>>,
    pub tails: BTreeMap<String, Tail>,
    pub notes: Vec<String>,
}

impl AnmOutcome {
    /// CSV with columns `pair,lag,window,S,Zxy,Zyx,significant` plus `tau`.
    pub fn rows_csv(&self) -> String {
        let mut s = String::from("pair,lag,window,S,Zxy,Zyx,significant,tau\n");
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            let sig = r.significant.map(|b| b.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{},{},{},{sig},{}\n", r.pair, r.lag, r.window, opt(r.s), opt(r.z_xy), opt(r.z_yx), r.tau));
        }
        s
    }
}

pub fn anm_key(x: SeriesId, y: SeriesId, lag: usize, tau: usize) -> String {
    format!("{x}_{y}_L{lag}_tau{tau}")
}

/// Lagged ANM scores. Lag 0 gives one two-tailed test per pair (the sign
/// names the direction); positive lags test both orders, upper tail only,
/// since a negative score would point from the future to the past.
pub fn anm_analysis(bank: &SeriesBank, taus: &[usize], pairs: &[SeriesPair], cfg: &AnmConfig, p: f64, seed: u64) -> AnmOutcome {
    let mut out = AnmOutcome::default();
    for &tau in taus {
        for &pair in pairs {
            for &lag in &cfg.lags {
                let orders = if lag == 0 {
                    vec![(pair.first, pair.second, Tail::Two)]
                } else {
                    vec![(pair.first, pair.second, Tail::Upper), (pair.second, pair.first, Tail::Upper)]
                };
                for (x, y, tail) in orders {
                    let key = anm_key(x, y, lag, tau);
                    let kseed = substream(seed, label_stream(&key));
                    let gp = GpConfig { starts: cfg.starts, max_points: cfg.max_points, seed: kseed, ..GpConfig::default() };
                    let test = LaggedAnm { lag, tau_tilde: cfg.tau_tilde, gp };
                    let aligned = bank.aligned(tau, SeriesPair { first: x, second: y });
                    let jobs: Vec<(usize, usize)> = aligned
                        .iter()
                        .enumerate()
                        .flat_map(|(s, (a, _))| (0..a.len() / cfg.tau_tilde).map(move |w| (s, w)))
                        .collect();
                    if jobs.is_empty() {
                        out.notes.push(format!("{EMPTY_MARKER}: anm {key}"));
                        continue;
                    }
                    let data: Vec<_> = jobs
                        .par_iter()
                        .map(|&(s, w)| {
                            let (a, b) = aligned[s];
                            test.window_score(a, b, w, substream(kseed ^ 0xDA7A, ((s as u64) << 32) | w as u64)).ok()
                        })
                        .collect();
                    let cat_x: Vec<f64> = aligned.iter().flat_map(|(a, _)| a.iter().copied()).collect();
                    let cat_y: Vec<f64> = aligned.iter().flat_map(|(_, b)| b.iter().copied()).collect();
                    let ens = match null_ensemble(&test, &cat_x, &cat_y, cfg.shuffles, kseed) {
                        Ok(e) => e,
                        Err(e) => {
                            out.notes.push(format!("anm {key}: {e}"));
                            continue;
                        }
                    };
                    let scores: Vec<Option<f64>> = data.iter().map(|d| d.map(|a| a.s)).collect();
                    for (window, d) in data.iter().enumerate() {
                        out.rows.push(AnmRow {
                            pair: format!("{x}:{y}"),
                            lag,
                            tau,
                            window,
                            s: d.map(|a| a.s),
                            z_xy: d.map(|a| a.z_xy),
                            z_yx: d.map(|a| a.z_yx),
                            significant: d.map(|a| ens.is_significant(a.s, p, tail)),
                        });
                    }
                    out.ensembles.insert(key.clone(), ens);
                    out.scores.insert(key.clone(), scores);
                    out.tails.insert(key, tail);
                }
            }
        }
    }
    let groups: Vec<ScoreGroup<'_, f64>> =
        out.scores.iter().map(|(k, v)| ScoreGroup { key: k.clone(), scores: v, tail: out.tails[k] }).collect();
    out.table = significance_table(&groups, &out.ensembles, p).expect("every scored key has an ensemble");
    out
}

/// CSV with columns `key,n_shuffles,excluded,tail,lower,upper` at level `p`.
pub fn thresholds_csv(ensembles: &BTreeMap<String, SurrogateEnsemble<f64>>, tails: &dyn Fn(&str) -> Tail, p: f64) -> String {
    let mut s = String::from("key,n_shuffles,excluded,tail,lower,upper\n");
    for (k, e) in ensembles {
        let tail = tails(k);
        let (lo, hi) = e.thresholds(p, tail);
        let name = match tail {
            Tail::Upper => "upper",
            Tail::Two => "two",
        };
        let lo = lo.map(|v| v.to_string()).unwrap_or_default();
        s.push_str(&format!("{k},{},{},{name},{lo},{hi}\n", e.n_shuffles, e.excluded));
    }
    s
}

/// Histogram columns sharing one set of edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRecord {
    pub name: String,
    pub file: String,
    pub edges: Vec<f64>,
    pub columns: BTreeMap<String, Vec<f64>>,
}

impl HistogramRecord {
    /// Equal-width bins over the joint finite range of every sample.
    pub fn shared(name: &str, file: &str, bins: usize, samples: &[(&str, &[f64])]) -> Self {
        let (lo, hi) = finite_range(samples.iter().map(|s| s.1)).unwrap_or((0.0, 1.0));
        let mut edges = Vec::new();
        let mut columns = BTreeMap::new();
        for (label, data) in samples {
            let h = Histogram::uniform(lo, hi, bins, data.iter().copied());
            edges = h.edges;
            columns.insert(label.to_string(), h.counts.iter().map(|&c| c as f64).collect());
        }
        HistogramRecord { name: name.into(), file: file.into(), edges, columns }
    }

    /// CSV with columns `lo,hi` and one per sample, in label order.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("lo,hi");
        for k in self.columns.keys() {
            s.push(',');
            s.push_str(k);
        }
        s.push('\n');
        for i in 0..self.edges.len().saturating_sub(1) {
            s.push_str(&format!("{},{}", self.edges[i], self.edges[i + 1]));
            for col in self.columns.values() {
                s.push_str(&format!(",{}", col[i]));
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Complete,
    Empty,
    Disabled,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub name: String,
    pub status: StageStatus,
    pub notes: Vec<String>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSummary {
    pub label: String,
    pub records: u64,
    pub snapshots: usize,
    pub rejected: usize,
    pub holes: usize,
    pub missing_states: u64,
    pub hole_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub rng: String,
    pub config: RunConfig,
    pub inputs: Vec<InputSummary>,
    pub segments: Vec<String>,
    pub stages: Vec<StageReport>,
    pub lag_selection: Vec<LagChoiceRecord>,
    pub granger: Vec<SignificanceRecord>,
    pub anm: Vec<SignificanceRecord>,
    pub histograms: Vec<HistogramRecord>,
    pub files: Vec<FileEntry>,
    pub error: Option<String>,
}

/// Serializable mirror of [`LagChoice`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagChoiceRecord {
    pub series: String,
    pub tau: usize,
    pub lag: usize,
    /// Infinite entries (no usable fit) are recorded as null.
    pub median_bic: Vec<Option<f64>>,
    pub skipped: usize,
}

/// Serializable mirror of [`SignificanceRow`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceRecord {
    pub key: String,
    pub tail: String,
    pub total: usize,
    pub significant: usize,
    pub fraction: f64,
    pub excluded: usize,
    pub lower_threshold: Option<f64>,
    pub upper_threshold: f64,
}

impl From<&SignificanceRow> for SignificanceRecord {
    fn from(r: &SignificanceRow) -> Self {
        SignificanceRecord {
            key: r.key.clone(),
            tail: match r.tail {
                Tail::Upper => "upper".into(),
                Tail::Two => "two".into(),
            },
            total: r.total,
            significant: r.significant,
            fraction: r.fraction,
            excluded: r.excluded,
            lower_threshold: r.lower_threshold,
            upper_threshold: r.upper_threshold,
        }
    }
}

impl RunReport {
    pub fn stage(&self, name: &str) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Report(e.to_string()))
    }
}

/// Output tree writer that records a digest for every file.
struct Artifacts {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl Artifacts {
    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<String, PipelineError> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        std::fs::write(&path, bytes).map_err(io_err(&path))?;
        self.files.push(FileEntry { path: rel.to_string(), sha256: hex::encode(Sha256::digest(bytes)), bytes: bytes.len() as u64 });
        Ok(rel.to_string())
    }
}

/// Format from the extension: `.jsonl`/`.json` are JSONL, anything else CSV.
pub fn infer_format(path: &Path) -> Format {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("jsonl" | "json") => Format::Jsonl,
        _ => Format::Csv,
    }
}

/// Parses snapshot files, labelled by file stem.
pub fn load_inputs(
    paths: &[PathBuf],
    format: Option<Format>,
    tick: Decimal,
    resolution: i64,
) -> Result<Vec<(crate::ingest::ParseReport, InputSummary)>, PipelineError> {
    paths
        .iter()
        .map(|path| {
            let file = std::fs::File::open(path).map_err(io_err(path))?;
            let label = path.file_stem().and_then(|s| s.to_str()).unwrap_or("input").to_string();
            let cfg = IngestConfig { tick, resolution, label: label.clone() };
            let fmt = format.unwrap_or_else(|| infer_format(path));
            let report = parse_snapshots(std::io::BufReader::new(file), fmt, &cfg)
                .map_err(|source| PipelineError::Ingest { path: path.display().to_string(), source })?;
            let summary = summarize(&label, &report.sequence, report.records, report.rejected.len());
            Ok((report, summary))
        })
        .collect()
}

fn summarize(label: &str, seq: &SnapshotSequence, records: u64, rejected: usize) -> InputSummary {
    let cov = audit_coverage(seq);
    InputSummary {
        label: label.to_string(),
        records,
        snapshots: seq.len(),
        rejected,
        holes: cov.holes.len(),
        missing_states: cov.missing_states,
        hole_fraction: cov.hole_fraction,
    }
}

/// Every series id the run derives: gap percentiles per scope, return
/// percentiles, volatility, and anything named in a pair.
pub fn run_series_ids(cfg: &RunConfig) -> Result<Vec<SeriesId>, PipelineError> {
    let mut ids = Vec::new();
    for &p in &cfg.percentiles {
        for &scope in &cfg.gap_scopes {
            ids.push(gap_id(scope, p));
        }
        ids.push(returns_id(p));
    }
    ids.push(SeriesId::Volatility(VolatilityKind::AbsMean));
    ids.push(SeriesId::Volatility(VolatilityKind::Std));
    for pair in cfg.xcorr_pairs()?.into_iter().chain(cfg.granger_pairs()?).chain(cfg.anm_pairs()?) {
        ids.push(pair.first);
        ids.push(pair.second);
    }
    Ok(ids)
}

struct Run<'a> {
    cfg: &'a RunConfig,
    seed: u64,
    art: Artifacts,
    report: RunReport,
}

impl Run<'_> {
    fn stage(&mut self, name: &str) -> usize {
        self.report.stages.push(StageReport { name: name.into(), status: StageStatus::Complete, notes: Vec::new(), files: Vec::new() });
        self.report.stages.len() - 1
    }

    fn write(&mut self, stage: usize, rel: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        let rel = self.art.write(rel, bytes)?;
        self.report.stages[stage].files.push(rel);
        Ok(())
    }

    fn finish_stage(&mut self, stage: usize, dir: &str, notes: Vec<String>) -> Result<(), PipelineError> {
        self.report.stages[stage].notes.extend(notes);
        if self.report.stages[stage].files.is_empty() {
            self.report.stages[stage].status = StageStatus::Empty;
            self.write(stage, &format!("{dir}/empty.txt"), format!("{EMPTY_MARKER}\n").as_bytes())?;
        }
        Ok(())
    }

    fn ingest(&mut self) -> Result<Vec<SnapshotSequence>, PipelineError> {
        let st = self.stage("ingest");
        let mut seqs = Vec::new();
        let mut rejections = String::from("input,line,reason\n");
        if self.cfg.inputs.is_empty() {
            let spec = self.cfg.synth.as_ref().expect("validated");
            let g = generate(spec).map_err(|e| PipelineError::Synth(e.to_string()))?;
            let Generated::Book(seq) = g.data else {
                return Err(PipelineError::Synth("generator did not produce a book".into()));
            };
            self.report.inputs.push(summarize(seq.label(), &seq, seq.len() as u64, 0));
            seqs.push(seq);
        } else {
            for (rep, summary) in load_inputs(&self.cfg.inputs, self.cfg.format, self.cfg.tick, self.cfg.resolution)? {
                for r in &rep.rejected {
                    rejections.push_str(&format!("{},{},\"{}\"\n", summary.label, r.line, r.reason.to_string().replace('"', "'")));
                }
                self.report.inputs.push(summary);
                seqs.push(rep.sequence);
            }
        }
        let mut cov = String::from("input,records,snapshots,rejected,holes,missing_states,hole_fraction\n");
        for s in &self.report.inputs {
            cov.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.label, s.records, s.snapshots, s.rejected, s.holes, s.missing_states, s.hole_fraction
            ));
        }
        self.write(st, "ingest/coverage.csv", cov.as_bytes())?;
        self.write(st, "ingest/rejections.csv", rejections.as_bytes())?;
        Ok(seqs)
    }

    fn series(&mut self, seqs: &[SnapshotSequence]) -> Result<SeriesBank, PipelineError> {
        let st = self.stage("series");
        let segments = segments_of(seqs);
        self.report.segments = segments.iter().map(|s| s.label.clone()).collect();
        let bank = SeriesBank::build(segments, &self.all_taus(), &run_series_ids(self.cfg)?);
        let mut notes: Vec<String> = bank.missing.iter().map(|(s, t, k, e)| format!("segment {s} tau={t} {k}: {e}")).collect();
        let files: Vec<(String, String)> = bank
            .iter()
            .map(|(s, t, k, v)| {
                let mut csv = String::from("k,value\n");
                for (i, x) in v.iter().enumerate() {
                    csv.push_str(&format!("{i},{x}\n"));
                }
                (format!("series/seg{s}/tau{t}/{k}.csv"), csv)
            })
            .collect();
        for (path, csv) in files {
            self.write(st, &path, csv.as_bytes())?;
        }
        for &tau in &self.cfg.taus.clone() {
            self.position_histogram(st, &bank, tau, &mut notes)?;
            self.gap_size_histogram(st, &bank, tau)?;
        }
        self.finish_stage(st, "series", notes)?;
        Ok(bank)
    }

    fn all_taus(&self) -> Vec<usize> {
        let mut t: BTreeSet<usize> = self.cfg.taus.iter().copied().collect();
        if self.cfg.anm.enabled {
            t.extend(self.cfg.anm_taus().iter().copied());
        }
        t.into_iter().collect()
    }

    fn position_histogram(&mut self, st: usize, bank: &SeriesBank, tau: usize, notes: &mut Vec<String>) -> Result<(), PipelineError> {
        let mut mass = vec![0.0; 2 * GAP_LEVELS];
        let mut windows = 0;
        let mut positions = Vec::new();
        for seg in &bank.segments {
            match max_gap_position_histogram(&seg.gaps, tau) {
                Ok(h) => {
                    mass.iter_mut().zip(&h.mass).for_each(|(m, v)| *m += v);
                    windows += h.windows;
                    positions = h.positions;
                }
                Err(e) => notes.push(format!("max gap position {} tau={tau}: {e}", seg.label)),
            }
        }
        if windows == 0 {
            return Ok(());
        }
        // contiguous unit bins centred on -19..=19; the bin at 0 stays empty
        let edges: Vec<f64> = (0..=2 * GAP_LEVELS + 1).map(|i| i as f64 - GAP_LEVELS as f64 - 0.5).collect();
        let mut column = vec![0.0; 2 * GAP_LEVELS + 1];
        let mut csv = String::from("position,lo,hi,mass,probability\n");
        for (&pos, &m) in positions.iter().zip(&mass) {
            let bin = (pos + GAP_LEVELS as i32) as usize;
            column[bin] = m;
            csv.push_str(&format!("{pos},{},{},{m},{}\n", edges[bin], edges[bin + 1], m / windows as f64));
        }
        let file = format!("figures/max_gap_position_tau{tau}.csv");
        self.write(st, &file, csv.as_bytes())?;
        let columns = BTreeMap::from([("mass".to_string(), column)]);
        self.report.histograms.push(HistogramRecord { name: format!("max_gap_position_tau{tau}"), file, edges, columns });
        Ok(())
    }

    fn gap_size_histogram(&mut self, st: usize, bank: &SeriesBank, tau: usize) -> Result<(), PipelineError> {
        let mut samples: Vec<(String, Vec<f64>)> = Vec::new();
        for &scope in &self.cfg.gap_scopes {
            for &p in &self.cfg.percentiles {
                let id = gap_id(scope, p);
                let v: Vec<f64> = (0..bank.segments.len()).filter_map(|s| bank.get(s, tau, id)).flatten().copied().collect();
                if !v.is_empty() {
                    samples.push((id.to_string(), v));
                }
            }
        }
        if samples.is_empty() {
            return Ok(());
        }
        let refs: Vec<(&str, &[f64])> = samples.iter().map(|(k, v)| (k.as_str(), v.as_slice())).collect();
        let file = format!("figures/gap_sizes_tau{tau}.csv");
        let rec = HistogramRecord::shared(&format!("gap_sizes_tau{tau}"), &file, GAP_SIZE_BINS, &refs);
        self.write(st, &file, rec.to_csv().as_bytes())?;
        self.report.histograms.push(rec);
        Ok(())
    }

    fn xcorr(&mut self, bank: &SeriesBank) -> Result<(), PipelineError> {
        let st = self.stage("xcorr");
        if !self.cfg.xcorr.enabled {
            self.report.stages[st].status = StageStatus::Disabled;
            return Ok(());
        }
        let outcome = xcorr_analysis(bank, &self.cfg.taus, &self.cfg.xcorr_pairs()?, &self.cfg.xcorr);
        for e in &outcome.entries {
            let name = e.pair.replace(':', "_");
            self.write(st, &format!("xcorr/tau{}/{name}.csv", e.tau), e.function.to_csv().as_bytes())?;
        }
        self.finish_stage(st, "xcorr", outcome.notes)
    }

    fn score_histograms(&mut self, st: usize, test: &str, scores: &BTreeMap<String, Vec<Option<f64>>>, ens: &BTreeMap<String, SurrogateEnsemble<f64>>) -> Result<(), PipelineError> {
        for (key, s) in scores {
            let data: Vec<f64> = s.iter().flatten().copied().collect();
            let control = &ens[key].scores;
            let file = format!("figures/{test}/{key}.csv");
            let rec = HistogramRecord::shared(&format!("{test}_{key}"), &file, SCORE_BINS, &[("data", &data), ("control", control)]);
            self.write(st, &file, rec.to_csv().as_bytes())?;
            self.report.histograms.push(rec);
        }
        Ok(())
    }

    fn granger(&mut self, bank: &SeriesBank) -> Result<Option<GrangerOutcome>, PipelineError> {
        let st = self.stage("granger");
        if !self.cfg.granger.enabled {
            self.report.stages[st].status = StageStatus::Disabled;
            return Ok(None);
        }
        let o = granger_analysis(bank, &self.cfg.taus, &self.cfg.granger_pairs()?, &self.cfg.granger, self.cfg.significance, self.seed);
        if !o.rows.is_empty() {
            self.write(st, "granger/results.csv", o.rows_csv().as_bytes())?;
            self.write(st, "granger/significance.csv", table_to_csv(&o.table).as_bytes())?;
            self.score_histograms(st, "granger", &o.scores, &o.ensembles)?;
        }
        self.report.granger = o.table.iter().map(SignificanceRecord::from).collect();
        self.report.lag_selection = o
            .lags
            .iter()
            .map(|l| LagChoiceRecord {
                series: l.series.clone(),
                tau: l.tau,
                lag: l.lag,
                median_bic: l.median_bic.iter().map(|&b| b.is_finite().then_some(b)).collect(),
                skipped: l.skipped,
            })
            .collect();
        self.finish_stage(st, "granger", o.notes.clone())?;
        Ok(Some(o))
    }

    fn anm(&mut self, bank: &SeriesBank) -> Result<Option<AnmOutcome>, PipelineError> {
        let st = self.stage("anm");
        if !self.cfg.anm.enabled {
            self.report.stages[st].status = StageStatus::Disabled;
            return Ok(None);
        }
        let taus = self.cfg.anm_taus().to_vec();
        let o = anm_analysis(bank, &taus, &self.cfg.anm_pairs()?, &self.cfg.anm, self.cfg.significance, self.seed);
        if !o.rows.is_empty() {
            self.write(st, "anm/results.csv", o.rows_csv().as_bytes())?;
            self.write(st, "anm/significance.csv", table_to_csv(&o.table).as_bytes())?;
            self.score_histograms(st, "anm", &o.scores, &o.ensembles)?;
        }
        self.report.anm = o.table.iter().map(SignificanceRecord::from).collect();
        self.finish_stage(st, "anm", o.notes.clone())?;
        Ok(Some(o))
    }

    fn surrogate(&mut self, granger: Option<&GrangerOutcome>, anm: Option<&AnmOutcome>) -> Result<(), PipelineError> {
        let st = self.stage("surrogate");
        let p = self.cfg.significance;
        if let Some(g) = granger.filter(|g| !g.ensembles.is_empty()) {
            self.write(st, "surrogate/granger_thresholds.csv", thresholds_csv(&g.ensembles, &|_| Tail::Upper, p).as_bytes())?;
            for (k, e) in &g.ensembles {
                self.write(st, &format!("surrogate/granger/{k}.csv"), e.to_csv().as_bytes())?;
            }
        }
        if let Some(a) = anm.filter(|a| !a.ensembles.is_empty()) {
            self.write(st, "surrogate/anm_thresholds.csv", thresholds_csv(&a.ensembles, &|k| a.tails[k], p).as_bytes())?;
            for (k, e) in &a.ensembles {
                self.write(st, &format!("surrogate/anm/{k}.csv"), e.to_csv().as_bytes())?;
            }
        }
        self.finish_stage(st, "surrogate", Vec::new())
    }

    fn execute(&mut self) -> Result<(), PipelineError> {
        let seqs = self.ingest()?;
        let bank = self.series(&seqs)?;
        drop(seqs);
        self.xcorr(&bank)?;
        let g = self.granger(&bank)?;
        let a = self.anm(&bank)?;
        self.surrogate(g.as_ref(), a.as_ref())
    }
}

/// Executes every stage and writes `report.json` into the output
/// directory. A failing stage still leaves a report listing the files
/// written so far, the failed stage and the error.
pub fn run(cfg: &RunConfig) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    let seed = cfg.seed()?;
    let root = cfg.out_dir.clone();
    std::fs::create_dir_all(&root).map_err(io_err(&root))?;
    let report = RunReport {
        tool: TOOL_NAME.into(),
        version: TOOL_VERSION.into(),
        seed,
        rng: RNG_NAME.into(),
        config: cfg.clone(),
        inputs: Vec::new(),
        segments: Vec::new(),
        stages: Vec::new(),
        lag_selection: Vec::new(),
        granger: Vec::new(),
        anm: Vec::new(),
        histograms: Vec::new(),
        files: Vec::new(),
        error: None,
    };
    let mut run = Run { cfg, seed, art: Artifacts { root: root.clone(), files: Vec::new() }, report };
    let outcome = run.execute();
    let mut report = run.report;
    report.files = run.art.files;
    report.files.sort_by(|a, b| a.path.cmp(&b.path));
    let failure = outcome.err().map(|e| {
        let stage = report.stages.last().map(|s| s.name.clone()).unwrap_or_else(|| "ingest".into());
        if let Some(s) = report.stages.last_mut() {
            s.status = StageStatus::Failed;
        }
        report.error = Some(e.to_string());
        PipelineError::Stage { stage, message: e.to_string() }
    });
    let path = root.join("report.json");
    std::fs::write(&path, report.to_json()).map_err(io_err(&path))?;
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

/// Files whose digest or size no longer matches the report.
pub fn verify_report(dir: &Path, report: &RunReport) -> Vec<String> {
    report
        .files
        .iter()
        .filter(|f| match std::fs::read(dir.join(&f.path)) {
            Ok(bytes) => hex::encode(Sha256::digest(&bytes)) != f.sha256 || bytes.len() as u64 != f.bytes,
            Err(_) => true,
        })
        .map(|f| f.path.clone())
        .collect()
}

pub fn load_report(dir: &Path) -> Result<RunReport, PipelineError> {
    let path = dir.join("report.json");
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    RunReport::from_json(&text)
}

//! Seeded generators with known causal structure.
//!
//! Every generator burns in autoregressive state before recording, draws
//! each series from its own labelled stream, and reports the ground truth it
//! was built with. Output is `f64`; callers cast when testing `f32` paths.

use rand::Rng;
use rand_distr::{Distribution, Geometric, Normal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{BookSnapshot, Decimal, Level, SnapshotSequence, LEVELS};
use crate::rng::{label_stream, stream_rng, StreamRng};

/// Steps discarded before an autoregressive series is recorded.
pub const BURN_IN: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    IidNoise,
    Ar1,
    VarCoupled,
    ContemporaneousCoupled,
    AnmPair,
    LaggedAnmPair,
    SyntheticBook,
}

impl GeneratorKind {
    pub const ALL: [GeneratorKind; 7] = [
        GeneratorKind::IidNoise,
        GeneratorKind::Ar1,
        GeneratorKind::VarCoupled,
        GeneratorKind::ContemporaneousCoupled,
        GeneratorKind::AnmPair,
        GeneratorKind::LaggedAnmPair,
        GeneratorKind::SyntheticBook,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GeneratorKind::IidNoise => "iid_noise",
            GeneratorKind::Ar1 => "ar1",
            GeneratorKind::VarCoupled => "var_coupled",
            GeneratorKind::ContemporaneousCoupled => "contemporaneous_coupled",
            GeneratorKind::AnmPair => "anm_pair",
            GeneratorKind::LaggedAnmPair => "lagged_anm_pair",
            GeneratorKind::SyntheticBook => "synthetic_book",
        }
    }
}

impl std::fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for GeneratorKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GeneratorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown generator kind `{s}`"))
    }
}

/// Order-book generator settings. Gap sizes are in ticks, drawn fresh every
/// step as `1 + Geometric`, so they carry no memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BookParams {
    pub tick: Decimal,
    pub start_price: Decimal,
    pub spread_ticks: i64,
    pub first_gap_mean: f64,
    pub deep_gap_mean: f64,
    /// Chance per step that one side (fair coin) loses its best level.
    pub consume_probability: f64,
    pub resolution: i64,
    pub start_time: i64,
}

impl Default for BookParams {
    fn default() -> Self {
        BookParams {
            tick: Decimal::from_units(1_000_000),
            start_price: Decimal::from_units(500 * 100_000_000),
            spread_ticks: 2,
            first_gap_mean: 3.0,
            deep_gap_mean: 2.0,
            consume_probability: 0.5,
            resolution: 10,
            start_time: 0,
        }
    }
}

/// Which parameters matter depends on `kind`:
///
/// | kind | model |
/// |---|---|
/// | iid_noise | `x, y ~ N(0, sigma^2)` independent |
/// | ar1 | `x(t) = phi x(t-1) + e` |
/// | var_coupled | `x` as ar1, `y(t) = phi y(t-1) + beta x(t-1) + e` |
/// | contemporaneous_coupled | `x` i.i.d., `y(t) = phi y(t-1) + beta x(t) + e` |
/// | anm_pair | `x ~ U(-1, 1)`, `y = x^3 + e` |
/// | lagged_anm_pair | `x` as ar1, `y(t) = x(t-lag)^3 + e` |
/// | synthetic_book | see [`BookParams`] |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub length: usize,
    pub seed: u64,
    #[serde(default = "default_phi")]
    pub phi: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_lag")]
    pub lag: usize,
    #[serde(default)]
    pub book: BookParams,
}

fn default_phi() -> f64 {
    0.5
}
fn default_sigma() -> f64 {
    1.0
}
fn default_lag() -> usize {
    2
}

impl GeneratorSpec {
    /// Spec with the usual defaults for `kind` (`phi` 0.3 for the lagged
    /// ANM cause, 0.5 otherwise; `sigma` 0.1 for ANM pairs, 1 otherwise).
    pub fn new(kind: GeneratorKind, length: usize, seed: u64) -> Self {
        let (phi, sigma) = match kind {
            GeneratorKind::AnmPair => (0.0, 0.1),
            GeneratorKind::LaggedAnmPair => (0.3, 0.1),
            _ => (0.5, 1.0),
        };
        GeneratorSpec { kind, length, seed, phi, beta: 0.0, sigma, lag: 2, book: BookParams::default() }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_phi(mut self, phi: f64) -> Self {
        self.phi = phi;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_lag(mut self, lag: usize) -> Self {
        self.lag = lag;
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let k = self.kind;
        if self.length < 2 {
            return Err(SynthError::TooShort(self.length));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(SynthError::BadNoise(self.sigma));
        }
        if !self.beta.is_finite() {
            return Err(SynthError::BadParameter(format!("beta {}", self.beta)));
        }
        // the coupled VAR is lower triangular: both eigenvalues equal phi
        let autoregressive = matches!(
            k,
            GeneratorKind::Ar1 | GeneratorKind::VarCoupled | GeneratorKind::ContemporaneousCoupled | GeneratorKind::LaggedAnmPair
        );
        if autoregressive && !(self.phi.abs() < 1.0) {
            return Err(SynthError::Unstable { spectral_radius: self.phi.abs() });
        }
        if k == GeneratorKind::LaggedAnmPair && self.lag >= self.length {
            return Err(SynthError::BadParameter(format!("lag {} not below length {}", self.lag, self.length)));
        }
        if k == GeneratorKind::SyntheticBook {
            let b = &self.book;
            if b.tick <= Decimal::ZERO || !b.start_price.is_multiple_of(b.tick) {
                return Err(SynthError::BadParameter(format!("tick {} / start price {}", b.tick, b.start_price)));
            }
            if b.spread_ticks < 1 || b.resolution < 1 {
                return Err(SynthError::BadParameter("spread and resolution must be positive".into()));
            }
            if !(b.first_gap_mean >= 1.0 && b.deep_gap_mean >= 1.0) || !b.first_gap_mean.is_finite() || !b.deep_gap_mean.is_finite() {
                return Err(SynthError::BadParameter("gap means must be at least one tick".into()));
            }
            if !(0.0..=1.0).contains(&b.consume_probability) {
                return Err(SynthError::BadParameter(format!("consume probability {}", b.consume_probability)));
            }
        }
        Ok(())
    }

    pub fn ground_truth(&self) -> GroundTruth {
        let edge = |lag| GroundTruth { cause: Some("x".into()), effect: Some("y".into()), lag: Some(lag) };
        match self.kind {
            GeneratorKind::IidNoise | GeneratorKind::Ar1 => GroundTruth::NONE,
            GeneratorKind::VarCoupled if self.beta == 0.0 => GroundTruth::NONE,
            GeneratorKind::ContemporaneousCoupled if self.beta == 0.0 => GroundTruth::NONE,
            GeneratorKind::VarCoupled => edge(1),
            GeneratorKind::ContemporaneousCoupled | GeneratorKind::AnmPair => edge(0),
            GeneratorKind::LaggedAnmPair => edge(self.lag),
            GeneratorKind::SyntheticBook => GroundTruth { cause: Some("first_gap".into()), effect: Some("return".into()), lag: Some(0) },
        }
    }
}

/// True causal edge, or all `None` when the generator has none.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub cause: Option<String>,
    pub effect: Option<String>,
    pub lag: Option<usize>,
}

impl GroundTruth {
    pub const NONE: GroundTruth = GroundTruth { cause: None, effect: None, lag: None };
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("length {0} too short, need at least 2")]
    TooShort(usize),
    #[error("noise scale must be positive and finite, got {0}")]
    BadNoise(f64),
    #[error("unstable autoregression: spectral radius {spectral_radius} >= 1")]
    Unstable { spectral_radius: f64 },
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("price walk left the positive range at step {0}")]
    PriceExhausted(usize),
}

#[derive(Debug, Clone)]
pub enum Generated {
    Single(Vec<f64>),
    Pair { x: Vec<f64>, y: Vec<f64> },
    Book(SnapshotSequence),
}

#[derive(Debug, Clone)]
pub struct Generation {
    pub data: Generated,
    pub truth: GroundTruth,
}

impl Generation {
    /// The `(x, y)` pair, if the generator produced one.
    pub fn pair(&self) -> Option<(&[f64], &[f64])> {
        match &self.data {
            Generated::Pair { x, y } => Some((x, y)),
            _ => None,
        }
    }

    /// Writes `k,x` or `k,x,y` rows, or the snapshot CSV for books.
    pub fn write_csv(&self, out: impl std::io::Write) -> std::io::Result<()> {
        match &self.data {
            Generated::Book(seq) => crate::ingest::write_csv(seq, out),
            Generated::Single(x) => {
                let mut w = csv::Writer::from_writer(out);
                w.write_record(["k", "x"])?;
                for (k, v) in x.iter().enumerate() {
                    w.write_record([k.to_string(), v.to_string()])?;
                }
                w.flush()
            }
            Generated::Pair { x, y } => {
                let mut w = csv::Writer::from_writer(out);
                w.write_record(["k", "x", "y"])?;
                for (k, (a, b)) in x.iter().zip(y).enumerate() {
                    w.write_record([k.to_string(), a.to_string(), b.to_string()])?;
                }
                w.flush()
            }
        }
    }
}

fn rng_for(spec: &GeneratorSpec, label: &str) -> StreamRng {
    stream_rng(spec.seed, label_stream(label))
}

fn gaussian(rng: &mut StreamRng, n: usize, sigma: f64) -> Vec<f64> {
    let d = Normal::new(0.0, sigma).expect("validated noise scale");
    (0..n).map(|_| d.sample(rng)).collect()
}

/// AR(1) path of `n` recorded steps after burn-in.
fn ar1_path(rng: &mut StreamRng, n: usize, phi: f64, sigma: f64) -> Vec<f64> {
    let e = gaussian(rng, n + BURN_IN, sigma);
    let mut x = 0.0;
    let mut out = Vec::with_capacity(n);
    for (t, &noise) in e.iter().enumerate() {
        x = phi * x + noise;
        if t >= BURN_IN {
            out.push(x);
        }
    }
    out
}

pub fn generate(spec: &GeneratorSpec) -> Result<Generation, SynthError> {
    spec.validate()?;
    let n = spec.length;
    let (phi, sigma, beta) = (spec.phi, spec.sigma, spec.beta);
    let data = match spec.kind {
        GeneratorKind::IidNoise => Generated::Pair {
            x: gaussian(&mut rng_for(spec, "x"), n, sigma),
            y: gaussian(&mut rng_for(spec, "y"), n, sigma),
        },
        GeneratorKind::Ar1 => Generated::Single(ar1_path(&mut rng_for(spec, "x"), n, phi, sigma)),
        GeneratorKind::VarCoupled => {
            let ex = gaussian(&mut rng_for(spec, "x"), n + BURN_IN, sigma);
            let ey = gaussian(&mut rng_for(spec, "y"), n + BURN_IN, sigma);
            let (mut x, mut y) = (0.0, 0.0);
            let (mut xs, mut ys) = (Vec::with_capacity(n), Vec::with_capacity(n));
            for t in 0..n + BURN_IN {
                let nx = phi * x + ex[t];
                y = phi * y + beta * x + ey[t];
                x = nx;
                if t >= BURN_IN {
                    xs.push(x);
                    ys.push(y);
                }
            }
            Generated::Pair { x: xs, y: ys }
        }
        GeneratorKind::ContemporaneousCoupled => {
            let ex = gaussian(&mut rng_for(spec, "x"), n + BURN_IN, sigma);
            let ey = gaussian(&mut rng_for(spec, "y"), n + BURN_IN, sigma);
            let mut y = 0.0;
            let mut ys = Vec::with_capacity(n);
            for t in 0..n + BURN_IN {
                y = phi * y + beta * ex[t] + ey[t];
                if t >= BURN_IN {
                    ys.push(y);
                }
            }
            Generated::Pair { x: ex[BURN_IN..].to_vec(), y: ys }
        }
        GeneratorKind::AnmPair => {
            let u = Uniform::new(-1.0, 1.0).expect("fixed bounds");
            let mut rx = rng_for(spec, "x");
            let x: Vec<f64> = (0..n).map(|_| u.sample(&mut rx)).collect();
            let e = gaussian(&mut rng_for(spec, "y"), n, sigma);
            let y = x.iter().zip(&e).map(|(v, e)| v * v * v + e).collect();
            Generated::Pair { x, y }
        }
        GeneratorKind::LaggedAnmPair => {
            // the cause has unit stationary variance so the cube stays comparable to the noise
            let innovation = (1.0 - phi * phi).sqrt();
            let lag = spec.lag;
            let x_full = ar1_path(&mut rng_for(spec, "x"), n + lag, phi, innovation);
            let e = gaussian(&mut rng_for(spec, "y"), n, sigma);
            let y = (0..n).map(|t| x_full[t].powi(3) + e[t]).collect();
            Generated::Pair { x: x_full[lag..].to_vec(), y }
        }
        GeneratorKind::SyntheticBook => Generated::Book(book(spec)?),
    };
    Ok(Generation { data, truth: spec.ground_truth() })
}

/// Order book on the tick grid with a fixed spread. At each step the gaps
/// are redrawn; with probability `q` one side's best level is consumed and
/// the mid moves by that side's first gap of the step being left, so returns
/// follow gaps within the step and never later.
fn book(spec: &GeneratorSpec) -> Result<SnapshotSequence, SynthError> {
    let p = &spec.book;
    let tick = p.tick.units();
    let mut rng = rng_for(spec, "book");
    let first = Geometric::new(1.0 / p.first_gap_mean).map_err(|e| SynthError::BadParameter(e.to_string()))?;
    let deep = Geometric::new(1.0 / p.deep_gap_mean).map_err(|e| SynthError::BadParameter(e.to_string()))?;
    let mut best_bid = p.start_price.units() / tick;
    let mut snapshots = Vec::with_capacity(spec.length);
    let ladder = |rng: &mut StreamRng, start: i64, dir: i64| -> [Level; LEVELS] {
        let mut price = start;
        std::array::from_fn(|i| {
            if i > 0 {
                let d = if i == 1 { first.sample(rng) } else { deep.sample(rng) };
                price += dir * (1 + d as i64);
            }
            let volume = Decimal::from_units(rng.random_range(1..=200i64) * 1_000_000);
            Level { price: Decimal::from_units(price * tick), volume }
        })
    };
    for t in 0..spec.length {
        let asks = ladder(&mut rng, best_bid + p.spread_ticks, 1);
        let bids = ladder(&mut rng, best_bid, -1);
        if bids[LEVELS - 1].price <= Decimal::ZERO {
            return Err(SynthError::PriceExhausted(t));
        }
        let ts = p.start_time + t as i64 * p.resolution;
        let snap = BookSnapshot::new(ts, asks, bids, p.tick).map_err(|e| SynthError::BadParameter(e.to_string()))?;
        if rng.random_bool(p.consume_probability) {
            let first_gap = |l: &[Level; LEVELS]| (l[1].price.units() - l[0].price.units()).abs() / tick;
            if rng.random_bool(0.5) {
                best_bid += first_gap(snap.asks());
            } else {
                best_bid -= first_gap(snap.bids());
            }
        }
        snapshots.push(snap);
    }
    SnapshotSequence::new(snapshots, p.resolution, "synthetic_book").map_err(|e| SynthError::BadParameter(e.to_string()))
}

//! Order-book snapshot ingestion.
//!
//! Snapshot files carry the first [`LEVELS`] price levels of each side of the
//! book at a fixed sampling resolution. Two layouts are accepted:
//!
//! * CSV, one snapshot per row, header
//!   `ts,a1,av1,...,a20,av20,b1,bv1,...,b20,bv20`
//! * JSONL, one object per line,
//!   `{"ts":int,"asks":[[p,v],...],"bids":[[p,v],...]}`
//!
//! Prices and volumes are parsed as exact decimals (scaled integers) and
//! checked against the book invariants and the tick grid. Every data line
//! ends up either as an accepted snapshot or as a [`Rejection`] carrying its
//! line number, so `lines = accepted + rejected` always holds.

use std::fmt;
use std::io::{Read, Write};
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Price levels per side.
pub const LEVELS: usize = 20;

/// Decimal places carried by [`Decimal`].
pub const DECIMAL_PLACES: u32 = 8;
const SCALE: i64 = 100_000_000;

/// Fixed-point decimal with 8 fractional digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Decimal(i64);

impl Serialize for Decimal {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Accepts decimal text, integers, or floats (through their shortest
/// round-trip text, so `0.01` stays exact).
impl<'de> Deserialize<'de> for Decimal {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct Visitor;
        impl serde::de::Visitor<'_> for Visitor {
            type Value = Decimal;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a decimal number or numeric string")
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<Decimal, E> {
                v.parse().map_err(E::custom)
            }
            fn visit_i64<E: serde::de::Error>(self, v: i64) -> Result<Decimal, E> {
                self.visit_str(&v.to_string())
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<Decimal, E> {
                self.visit_str(&v.to_string())
            }
            fn visit_f64<E: serde::de::Error>(self, v: f64) -> Result<Decimal, E> {
                self.visit_str(&v.to_string())
            }
        }
        d.deserialize_any(Visitor)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecimalError {
    #[error("empty number")]
    Empty,
    #[error("invalid character in number")]
    InvalidChar,
    #[error("more than {DECIMAL_PLACES} decimal places")]
    TooPrecise,
    #[error("number out of range")]
    Overflow,
}

impl Decimal {
    pub const ZERO: Decimal = Decimal(0);

    pub const fn from_units(units: i64) -> Self {
        Decimal(units)
    }

    /// Raw value in units of `1e-8`.
    pub const fn units(self) -> i64 {
        self.0
    }

    /// Parses `[-]digits[.digits]`; trailing zeros beyond 8 places are allowed.
    pub fn parse_bytes(s: &[u8]) -> Result<Self, DecimalError> {
        let s = s.trim_ascii();
        let (neg, body) = match s.first() {
            Some(b'-') => (true, &s[1..]),
            Some(b'+') => (false, &s[1..]),
            Some(_) => (false, s),
            None => return Err(DecimalError::Empty),
        };
        if body.is_empty() {
            return Err(DecimalError::Empty);
        }
        let (int_part, frac_part) = match body.iter().position(|&b| b == b'.') {
            Some(p) => (&body[..p], &body[p + 1..]),
            None => (body, &body[..0]),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(DecimalError::Empty);
        }
        let mut units: i64 = 0;
        for &b in int_part {
            if !b.is_ascii_digit() {
                return Err(DecimalError::InvalidChar);
            }
            units = units
                .checked_mul(10)
                .and_then(|u| u.checked_add(i64::from(b - b'0')))
                .ok_or(DecimalError::Overflow)?;
        }
        units = units.checked_mul(SCALE).ok_or(DecimalError::Overflow)?;
        let mut place = SCALE / 10;
        for &b in frac_part {
            if !b.is_ascii_digit() {
                return Err(DecimalError::InvalidChar);
            }
            let d = i64::from(b - b'0');
            if place == 0 {
                if d != 0 {
                    return Err(DecimalError::TooPrecise);
                }
                continue;
            }
            units += d * place;
            place /= 10;
        }
        Ok(Decimal(if neg { -units } else { units }))
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / SCALE as f64
    }

    /// True when `self` is an integer multiple of `step`.
    pub fn is_multiple_of(self, step: Decimal) -> bool {
        step.0 > 0 && self.0 % step.0 == 0
    }
}

impl FromStr for Decimal {
    type Err = DecimalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Decimal::parse_bytes(s.as_bytes())
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        let int = abs / SCALE as u64;
        let frac = abs % SCALE as u64;
        if frac == 0 {
            return write!(f, "{sign}{int}");
        }
        let digits = format!("{frac:08}");
        write!(f, "{sign}{int}.{}", digits.trim_end_matches('0'))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Level {
    pub price: Decimal,
    pub volume: Decimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Ask,
    Bid,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Ask => "ask",
            Side::Bid => "bid",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InvariantViolation {
    #[error("crossed book: best ask {ask} <= best bid {bid}")]
    CrossedBook { ask: Decimal, bid: Decimal },
    #[error("{side} levels not strictly monotone at level {level}")]
    Unsorted { side: Side, level: usize },
    #[error("non-positive {side} price at level {level}")]
    NonPositivePrice { side: Side, level: usize },
    #[error("negative {side} volume at level {level}")]
    NegativeVolume { side: Side, level: usize },
    #[error("{side} price {price} at level {level} is off the {tick} tick grid")]
    OffTick { side: Side, level: usize, price: Decimal, tick: Decimal },
}

/// One timestamped order-book state. Asks ascend and bids descend from the
/// best level; the spread is positive and every price sits on the tick grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BookSnapshot {
    timestamp: i64,
    asks: [Level; LEVELS],
    bids: [Level; LEVELS],
}

impl BookSnapshot {
    pub fn new(
        timestamp: i64,
        asks: [Level; LEVELS],
        bids: [Level; LEVELS],
        tick: Decimal,
    ) -> Result<Self, InvariantViolation> {
        for (side, levels) in [(Side::Ask, &asks), (Side::Bid, &bids)] {
            for (i, l) in levels.iter().enumerate() {
                let level = i + 1;
                if l.price <= Decimal::ZERO {
                    return Err(InvariantViolation::NonPositivePrice { side, level });
                }
                if l.volume < Decimal::ZERO {
                    return Err(InvariantViolation::NegativeVolume { side, level });
                }
                if !l.price.is_multiple_of(tick) {
                    return Err(InvariantViolation::OffTick { side, level, price: l.price, tick });
                }
            }
        }
        if asks[0].price <= bids[0].price {
            return Err(InvariantViolation::CrossedBook { ask: asks[0].price, bid: bids[0].price });
        }
        for i in 1..LEVELS {
            if asks[i].price <= asks[i - 1].price {
                return Err(InvariantViolation::Unsorted { side: Side::Ask, level: i + 1 });
            }
            if bids[i].price >= bids[i - 1].price {
                return Err(InvariantViolation::Unsorted { side: Side::Bid, level: i + 1 });
            }
        }
        Ok(BookSnapshot { timestamp, asks, bids })
    }

    pub fn timestamp(&self) -> i64 {
        self.timestamp
    }

    pub fn asks(&self) -> &[Level; LEVELS] {
        &self.asks
    }

    pub fn bids(&self) -> &[Level; LEVELS] {
        &self.bids
    }

    /// Best ask plus best bid, exact (twice the mid-price).
    pub fn mid_doubled(&self) -> Decimal {
        Decimal(self.asks[0].price.0 + self.bids[0].price.0)
    }

    pub fn mid_price(&self) -> f64 {
        self.mid_doubled().to_f64() / 2.0
    }
}

/// Stretch of missing states between `after` and `after + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hole {
    /// Index of the last snapshot before the hole.
    pub after: usize,
    /// Timestamp difference across the hole, seconds.
    pub delta: i64,
    /// Grid states absent between the two snapshots.
    pub missing_states: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SequenceError {
    #[error("timestamps not strictly increasing at index {index}")]
    NotIncreasing { index: usize },
    #[error("resolution must be positive")]
    BadResolution,
}

/// Time-ordered snapshots with a declared sampling resolution. Deltas that
/// differ from the resolution are recorded as holes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotSequence {
    snapshots: Vec<BookSnapshot>,
    resolution: i64,
    label: String,
    holes: Vec<Hole>,
}

impl SnapshotSequence {
    pub fn new(snapshots: Vec<BookSnapshot>, resolution: i64, label: impl Into<String>) -> Result<Self, SequenceError> {
        if resolution <= 0 {
            return Err(SequenceError::BadResolution);
        }
        let mut holes = Vec::new();
        for (i, w) in snapshots.windows(2).enumerate() {
            let delta = w[1].timestamp - w[0].timestamp;
            if delta <= 0 {
                return Err(SequenceError::NotIncreasing { index: i + 1 });
            }
            if delta != resolution {
                holes.push(Hole { after: i, delta, missing_states: ((delta - 1) / resolution) as u64 });
            }
        }
        Ok(SnapshotSequence { snapshots, resolution, label: label.into(), holes })
    }

    pub fn snapshots(&self) -> &[BookSnapshot] {
        &self.snapshots
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn resolution(&self) -> i64 {
        self.resolution
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn holes(&self) -> &[Hole] {
        &self.holes
    }

    pub fn has_holes(&self) -> bool {
        !self.holes.is_empty()
    }

    /// Maximal hole-free index ranges, in order.
    pub fn segments(&self) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for h in &self.holes {
            out.push(start..h.after + 1);
            start = h.after + 1;
        }
        if start < self.snapshots.len() {
            out.push(start..self.snapshots.len());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub holes: Vec<Hole>,
    pub present_states: u64,
    pub missing_states: u64,
    /// `missing / (present + missing)`.
    pub hole_fraction: f64,
}

/// Summarizes coverage holes of a sequence.
pub fn audit_coverage(seq: &SnapshotSequence) -> CoverageReport {
    let missing: u64 = seq.holes.iter().map(|h| h.missing_states).sum();
    let present = seq.len() as u64;
    let total = present + missing;
    CoverageReport {
        holes: seq.holes.clone(),
        present_states: present,
        missing_states: missing,
        hole_fraction: if total == 0 { 0.0 } else { missing as f64 / total as f64 },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "jsonl" | "json" => Ok(Format::Jsonl),
            other => Err(format!("unknown format `{other}` (expected csv or jsonl)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IngestConfig {
    pub tick: Decimal,
    /// Seconds per state.
    pub resolution: i64,
    pub label: String,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig { tick: Decimal(SCALE / 100), resolution: 10, label: String::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordError {
    #[error("expected {expected} fields, got {got}")]
    FieldCount { expected: usize, got: usize },
    #[error("field `{field}`: {source}")]
    BadNumber { field: String, source: DecimalError },
    #[error("bad timestamp `{0}`")]
    BadTimestamp(String),
    #[error("{0}")]
    Invariant(#[from] InvariantViolation),
    #[error("timestamp {ts} not after previous {prev}")]
    NotIncreasing { prev: i64, ts: i64 },
    #[error("malformed json: {0}")]
    Json(String),
    #[error("unreadable record: {0}")]
    Unreadable(String),
}

/// A data line that did not become a snapshot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    /// 1-based line number in the source.
    pub line: u64,
    pub reason: RecordError,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("empty input")]
    Empty,
    #[error("bad csv header: {0}")]
    BadHeader(String),
    #[error("no valid records ({} rejected)", rejected.len())]
    NoValidRecords { rejected: Vec<Rejection> },
    #[error("invalid tick size {0}")]
    BadTick(Decimal),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ParseReport {
    pub sequence: SnapshotSequence,
    pub rejected: Vec<Rejection>,
    /// Data lines seen (excluding header and blank lines).
    pub records: u64,
}

/// Expected CSV header fields.
pub fn csv_header() -> Vec<String> {
    let mut h = vec!["ts".to_string()];
    for (p, v) in [("a", "av"), ("b", "bv")] {
        for i in 1..=LEVELS {
            h.push(format!("{p}{i}"));
            h.push(format!("{v}{i}"));
        }
    }
    h
}

const CSV_FIELDS: usize = 1 + 4 * LEVELS;

/// Parses a snapshot stream into a validated sequence plus diagnostics.
pub fn parse_snapshots(source: impl Read, format: Format, config: &IngestConfig) -> Result<ParseReport, IngestError> {
    if config.tick <= Decimal::ZERO {
        return Err(IngestError::BadTick(config.tick));
    }
    let mut acc = Accumulator::new(config);
    match format {
        Format::Csv => parse_csv(source, &mut acc)?,
        Format::Jsonl => parse_jsonl(source, &mut acc)?,
    }
    acc.finish(config)
}

struct Accumulator<'c> {
    config: &'c IngestConfig,
    snapshots: Vec<BookSnapshot>,
    rejected: Vec<Rejection>,
    records: u64,
}

impl<'c> Accumulator<'c> {
    fn new(config: &'c IngestConfig) -> Self {
        Accumulator { config, snapshots: Vec::new(), rejected: Vec::new(), records: 0 }
    }

    fn push(&mut self, line: u64, parsed: Result<(i64, [Level; LEVELS], [Level; LEVELS]), RecordError>) {
        self.records += 1;
        let result = parsed.and_then(|(ts, asks, bids)| {
            let snap = BookSnapshot::new(ts, asks, bids, self.config.tick)?;
            if let Some(prev) = self.snapshots.last() {
                if prev.timestamp >= ts {
                    return Err(RecordError::NotIncreasing { prev: prev.timestamp, ts });
                }
            }
            Ok(snap)
        });
        match result {
            Ok(s) => self.snapshots.push(s),
            Err(reason) => self.rejected.push(Rejection { line, reason }),
        }
    }

    fn finish(self, config: &IngestConfig) -> Result<ParseReport, IngestError> {
        if self.records == 0 {
            return Err(IngestError::Empty);
        }
        if self.snapshots.is_empty() {
            return Err(IngestError::NoValidRecords { rejected: self.rejected });
        }
        let sequence = SnapshotSequence::new(self.snapshots, config.resolution, config.label.clone())?;
        Ok(ParseReport { sequence, rejected: self.rejected, records: self.records })
    }
}

fn parse_csv(source: impl Read, acc: &mut Accumulator<'_>) -> Result<(), IngestError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(source);
    let mut record = csv::ByteRecord::new();
    let mut header_seen = false;
    let expected = csv_header();
    loop {
        let line = reader.position().line();
        match reader.read_byte_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                if !header_seen {
                    return Err(IngestError::BadHeader(e.to_string()));
                }
                acc.push(line, Err(RecordError::Unreadable(e.to_string())));
                continue;
            }
        }
        if record.len() == 1 && record[0].trim_ascii().is_empty() {
            continue;
        }
        if !header_seen {
            let got: Vec<String> = record.iter().map(|f| String::from_utf8_lossy(f.trim_ascii()).into_owned()).collect();
            if got != expected {
                return Err(IngestError::BadHeader(format!(
                    "expected `{}`, got `{}`",
                    truncate(&expected.join(","), 60),
                    truncate(&got.join(","), 60)
                )));
            }
            header_seen = true;
            continue;
        }
        let line = record.position().map_or(line, |p| p.line());
        acc.push(line, csv_record(&record));
    }
    if !header_seen {
        return Err(IngestError::Empty);
    }
    Ok(())
}

fn truncate(s: &str, n: usize) -> String {
    match s.char_indices().nth(n) {
        None => s.to_string(),
        Some((cut, _)) => format!("{}...", &s[..cut]),
    }
}

fn csv_record(rec: &csv::ByteRecord) -> Result<(i64, [Level; LEVELS], [Level; LEVELS]), RecordError> {
    if rec.len() != CSV_FIELDS {
        return Err(RecordError::FieldCount { expected: CSV_FIELDS, got: rec.len() });
    }
    let ts_raw = std::str::from_utf8(rec[0].trim_ascii()).unwrap_or("");
    let ts: i64 = ts_raw.parse().map_err(|_| RecordError::BadTimestamp(ts_raw.to_string()))?;
    let num = |idx: usize, field: &dyn Fn() -> String| {
        Decimal::parse_bytes(&rec[idx]).map_err(|source| RecordError::BadNumber { field: field(), source })
    };
    let mut asks = [Level::default(); LEVELS];
    let mut bids = [Level::default(); LEVELS];
    for i in 0..LEVELS {
        let a = 1 + 2 * i;
        let b = 1 + 2 * LEVELS + 2 * i;
        asks[i] = Level {
            price: num(a, &|| format!("a{}", i + 1))?,
            volume: num(a + 1, &|| format!("av{}", i + 1))?,
        };
        bids[i] = Level {
            price: num(b, &|| format!("b{}", i + 1))?,
            volume: num(b + 1, &|| format!("bv{}", i + 1))?,
        };
    }
    Ok((ts, asks, bids))
}

/// JSON number or numeric string, kept as text so decimals stay exact.
#[derive(Deserialize)]
#[serde(untagged)]
enum JsonNum {
    Num(serde_json::Number),
    Str(String),
}

impl JsonNum {
    fn decimal(&self, field: &str) -> Result<Decimal, RecordError> {
        let text = match self {
            JsonNum::Num(n) => n.to_string(),
            JsonNum::Str(s) => s.clone(),
        };
        text.parse().map_err(|source| RecordError::BadNumber { field: field.to_string(), source })
    }
}

#[derive(Deserialize)]
struct JsonRecord {
    ts: i64,
    asks: Vec<(JsonNum, JsonNum)>,
    bids: Vec<(JsonNum, JsonNum)>,
}

fn json_levels(raw: &[(JsonNum, JsonNum)], side: &str) -> Result<[Level; LEVELS], RecordError> {
    if raw.len() != LEVELS {
        return Err(RecordError::FieldCount { expected: LEVELS, got: raw.len() });
    }
    let mut out = [Level::default(); LEVELS];
    for (i, (p, v)) in raw.iter().enumerate() {
        out[i] = Level {
            price: p.decimal(&format!("{side}[{i}].price"))?,
            volume: v.decimal(&format!("{side}[{i}].volume"))?,
        };
    }
    Ok(out)
}

fn parse_jsonl(mut source: impl Read, acc: &mut Accumulator<'_>) -> Result<(), IngestError> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<JsonRecord>(line)
            .map_err(|e| RecordError::Json(e.to_string()))
            .and_then(|r| Ok((r.ts, json_levels(&r.asks, "asks")?, json_levels(&r.bids, "bids")?)));
        acc.push(i as u64 + 1, parsed);
    }
    Ok(())
}

/// Writes a sequence as CSV (with header).
pub fn write_csv(seq: &SnapshotSequence, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{}", csv_header().join(","))?;
    let mut line = String::with_capacity(1024);
    for s in &seq.snapshots {
        line.clear();
        line.push_str(&s.timestamp.to_string());
        for side in [&s.asks, &s.bids] {
            for l in side.iter() {
                line.push(',');
                line.push_str(&l.price.to_string());
                line.push(',');
                line.push_str(&l.volume.to_string());
            }
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

/// Writes a sequence as JSONL.
pub fn write_jsonl(seq: &SnapshotSequence, mut out: impl Write) -> std::io::Result<()> {
    for s in &seq.snapshots {
        let side = |levels: &[Level; LEVELS]| {
            levels.iter().map(|l| format!("[{},{}]", l.price, l.volume)).collect::<Vec<_>>().join(",")
        };
        writeln!(out, "{{\"ts\":{},\"asks\":[{}],\"bids\":[{}]}}", s.timestamp, side(&s.asks), side(&s.bids))?;
    }
    Ok(())
}

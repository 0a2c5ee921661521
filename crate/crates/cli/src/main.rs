//! `gapflow` command line.
//!
//! Every subcommand exits 0 on success. Failures exit nonzero and print a
//! single JSON object `{"error": kind, "message": text}` on stderr.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gapflow::anm::LaggedAnm;
use gapflow::gpr::GpConfig;
use gapflow::granger::{GrangerTest, Variant};
use gapflow::ingest::{write_csv, write_jsonl, Decimal, Format};
use gapflow::pipeline::{
    anm_analysis, granger_analysis, load_inputs, load_report, segments_of, verify_report, xcorr_analysis, AnmConfig,
    GrangerConfig, PipelineError, RunConfig, SeriesBank, SeriesId, SeriesPair, XcorrConfig,
};
use gapflow::series::GapScope;
use gapflow::surrogate::{null_ensemble, SurrogateEnsemble, Tail};
use gapflow::synthgen::{generate, GeneratorKind, GeneratorSpec};
use serde_json::json;

/// Exit code for usage errors; every other failure exits 1.
const USAGE_EXIT: u8 = 2;

#[derive(Parser)]
#[command(name = "gapflow", version, about = "Causal analysis of order book gaps and returns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse snapshot files, audit coverage, optionally write normalized copies.
    Ingest(IngestArgs),
    /// Percentile, volatility and gap series per window size.
    Series(SeriesArgs),
    /// Windowed cross-correlation between return and gap series.
    Xcorr(XcorrArgs),
    /// Windowed Granger tests with shuffle-calibrated significance.
    Granger(GrangerArgs),
    /// Lagged additive noise model tests with shuffle-calibrated significance.
    Anm(AnmArgs),
    /// Null score ensemble and critical values for one test configuration.
    Surrogate(SurrogateArgs),
    /// Synthetic series or order books with known causal structure.
    Synth(SynthArgs),
    /// Full analysis into an output directory with `report.json`.
    Run(RunArgs),
    /// Summarize and verify a finished run directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Snapshot files (CSV or JSONL).
    #[arg(required = true)]
    files: Vec<PathBuf>,
    /// Input format; inferred from the extension when omitted.
    #[arg(long)]
    format: Option<Format>,
    /// Price tick size.
    #[arg(long, default_value = "0.01")]
    tick: Decimal,
    /// Expected time between snapshots, in timestamp units.
    #[arg(long, default_value_t = 10)]
    resolution: i64,
}

impl InputArgs {
    fn bank(&self, taus: &[usize], ids: &[SeriesId]) -> Result<SeriesBank> {
        let loaded = load_inputs(&self.files, self.format, self.tick, self.resolution)?;
        let seqs: Vec<_> = loaded.into_iter().map(|(r, _)| r.sequence).collect();
        let bank = SeriesBank::build(segments_of(&seqs), taus, ids);
        if bank.segments.is_empty() {
            bail!(PipelineError::Stage { stage: "series".into(), message: "no segment with at least two snapshots".into() });
        }
        Ok(bank)
    }
}

fn pair_ids(pairs: &[SeriesPair]) -> Vec<SeriesId> {
    pairs.iter().flat_map(|p| [p.first, p.second]).collect()
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Directory for normalized copies, one per input.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Format of the normalized copies.
    #[arg(long, default_value = "csv")]
    out_format: Format,
}

#[derive(Args)]
struct SeriesArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_delimiter = ',', default_value = "60")]
    tau: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "50,99,100")]
    percentiles: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "all")]
    scope: Vec<GapScope>,
    /// Percentiles of absolute rather than signed returns.
    #[arg(long)]
    absolute: bool,
    /// Output directory; files are `seg<s>/tau<t>/<series>.csv` with columns `k,value`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct XcorrArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_delimiter = ',', default_value = "60")]
    tau: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    tau_tilde: usize,
    #[arg(long, default_value_t = 10)]
    max_lag: usize,
    /// `returns:gaps` pairs.
    #[arg(long, value_delimiter = ',', default_value = "r100:g100")]
    pairs: Vec<SeriesPair>,
    /// Output directory; files are `tau<t>/<r>_<g>.csv` with columns `lag,C,J`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TestArgs {
    #[arg(long, default_value_t = 0.01)]
    significance: f64,
    #[arg(long)]
    seed: u64,
    /// Results CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Significance table CSV.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Args)]
struct GrangerArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_delimiter = ',', default_value = "30,60,90,120")]
    tau: Vec<usize>,
    #[arg(long, default_value_t = 500)]
    tau_tilde: usize,
    /// Fixed lag; chosen by median BIC when omitted.
    #[arg(long)]
    lag: Option<usize>,
    #[arg(long, default_value_t = 10)]
    max_lag: usize,
    #[arg(long, value_delimiter = ',', default_value = "standard,instant")]
    variant: Vec<Variant>,
    /// Pairs, each tested in both directions.
    #[arg(long, value_delimiter = ',', default_value = "g100:r100")]
    pairs: Vec<SeriesPair>,
    #[arg(long, default_value_t = 1000)]
    shuffles: usize,
    #[command(flatten)]
    test: TestArgs,
}

#[derive(Args)]
struct AnmArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_delimiter = ',', default_value = "60")]
    tau: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,3,7")]
    lags: Vec<usize>,
    #[arg(long, default_value_t = 500)]
    tau_tilde: usize,
    #[arg(long, value_delimiter = ',', default_value = "g100:r100")]
    pairs: Vec<SeriesPair>,
    #[arg(long, default_value_t = 200)]
    shuffles: usize,
    /// Optimizer restarts per Gaussian process fit.
    #[arg(long, default_value_t = 5)]
    starts: usize,
    #[command(flatten)]
    test: TestArgs,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum TestKind {
    Granger,
    Anm,
}

#[derive(Args)]
struct SurrogateArgs {
    /// Snapshot files; alternatively give `--xy`.
    files: Vec<PathBuf>,
    /// CSV with columns `k,x,y` (as written by `synth`), used instead of snapshots.
    #[arg(long, conflicts_with = "files")]
    xy: Option<PathBuf>,
    #[arg(long)]
    format: Option<Format>,
    #[arg(long, default_value = "0.01")]
    tick: Decimal,
    #[arg(long, default_value_t = 10)]
    resolution: i64,
    #[arg(long, value_enum, default_value = "granger")]
    test: TestKind,
    /// `x:y` pair for snapshot input (x is the cause for Granger).
    #[arg(long, default_value = "g100:r100")]
    pair: SeriesPair,
    #[arg(long, default_value_t = 60)]
    tau: usize,
    #[arg(long, default_value_t = 500)]
    tau_tilde: usize,
    #[arg(long, default_value_t = 1)]
    lag: usize,
    #[arg(long, default_value = "standard")]
    variant: Variant,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 0.01)]
    significance: f64,
    #[arg(long)]
    seed: u64,
    /// Null scores CSV (`shuffle,score`); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    kind: GeneratorKind,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    phi: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    lag: Option<usize>,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Snapshot files; override the configuration's inputs.
    files: Vec<PathBuf>,
    /// TOML configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<Format>,
    #[arg(long)]
    tick: Option<Decimal>,
    #[arg(long)]
    resolution: Option<i64>,
    #[arg(long, value_delimiter = ',')]
    tau: Option<Vec<usize>>,
    /// Analyse a synthetic book of this many snapshots when no files are given.
    #[arg(long)]
    synth_book: Option<usize>,
    #[arg(long)]
    granger_shuffles: Option<usize>,
    #[arg(long)]
    anm_shuffles: Option<usize>,
    #[arg(long)]
    no_xcorr: bool,
    #[arg(long)]
    no_granger: bool,
    #[arg(long)]
    no_anm: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Run output directory.
    dir: PathBuf,
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => match std::io::stdout().write_all(text.as_bytes()) {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
            _ => Ok(()),
        },
    }
}

fn print_json(v: &serde_json::Value) {
    // a closed pipe (e.g. `| head`) is not a failure of the command
    let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(v).expect("json"));
}

fn ingest(a: IngestArgs) -> Result<()> {
    let loaded = load_inputs(&a.input.files, a.input.format, a.input.tick, a.input.resolution)?;
    let mut summaries = Vec::new();
    for (rep, summary) in &loaded {
        if let Some(dir) = &a.out {
            fs::create_dir_all(dir)?;
            let ext = match a.out_format {
                Format::Csv => "csv",
                Format::Jsonl => "jsonl",
            };
            let path = dir.join(format!("{}.{ext}", summary.label));
            let file = std::io::BufWriter::new(fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?);
            match a.out_format {
                Format::Csv => write_csv(&rep.sequence, file)?,
                Format::Jsonl => write_jsonl(&rep.sequence, file)?,
            }
        }
        let rejected: Vec<_> = rep.rejected.iter().map(|r| json!({"line": r.line, "reason": r.reason.to_string()})).collect();
        summaries.push(json!({"summary": summary, "rejections": rejected}));
    }
    print_json(&json!({ "inputs": summaries }));
    Ok(())
}

fn series(a: SeriesArgs) -> Result<()> {
    let mut ids = Vec::new();
    for &p in &a.percentiles {
        for &scope in &a.scope {
            ids.push(SeriesId::Gaps { scope, p });
        }
        ids.push(SeriesId::Returns { p, absolute: a.absolute });
    }
    for id in ["vabs", "vstd"] {
        ids.push(id.parse().map_err(|e: String| anyhow!(e))?);
    }
    let bank = a.input.bank(&a.tau, &ids)?;
    let mut written = Vec::new();
    for (s, t, k, v) in bank.iter() {
        let mut csv = String::from("k,value\n");
        for (i, x) in v.iter().enumerate() {
            csv.push_str(&format!("{i},{x}\n"));
        }
        let rel = format!("seg{s}/tau{t}/{k}.csv");
        write_out(Some(&a.out.join(&rel)), &csv)?;
        written.push(json!({"file": rel, "length": v.len()}));
    }
    let missing: Vec<_> = bank.missing.iter().map(|(s, t, k, e)| json!({"segment": s, "tau": t, "series": k, "reason": e})).collect();
    print_json(&json!({"segments": bank.segments.len(), "files": written, "missing": missing}));
    Ok(())
}

fn xcorr(a: XcorrArgs) -> Result<()> {
    if a.tau_tilde <= 2 * a.max_lag {
        bail!(PipelineError::Config(format!("window {} must exceed twice the max lag {}", a.tau_tilde, a.max_lag)));
    }
    let pairs: Vec<SeriesPair> = a.pairs;
    let bank = a.input.bank(&a.tau, &pair_ids(&pairs))?;
    let cfg = XcorrConfig { enabled: true, tau_tilde: a.tau_tilde, max_lag: a.max_lag, pairs: Vec::new() };
    let out = xcorr_analysis(&bank, &a.tau, &pairs, &cfg);
    let mut results = Vec::new();
    for e in &out.entries {
        let rel = format!("tau{}/{}.csv", e.tau, e.pair.replace(':', "_"));
        write_out(Some(&a.out.join(&rel)), &e.function.to_csv())?;
        results.push(json!({"pair": e.pair, "tau": e.tau, "file": rel, "windows": e.function.num_windows,
            "excluded": e.function.excluded, "peak_lag": e.function.argmax()}));
    }
    print_json(&json!({"results": results, "notes": out.notes}));
    Ok(())
}

fn check_level(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        bail!(PipelineError::Config(format!("significance level {p} outside (0, 1)")));
    }
    Ok(())
}

fn granger(a: GrangerArgs) -> Result<()> {
    check_level(a.test.significance)?;
    let cfg = GrangerConfig {
        enabled: true,
        tau_tilde: a.tau_tilde,
        lag: a.lag,
        max_lag: a.max_lag,
        variants: a.variant,
        shuffles: a.shuffles,
        pairs: a.pairs.iter().map(ToString::to_string).collect(),
    };
    let check = RunConfig { seed: Some(a.test.seed), inputs: a.input.files.clone(), granger: cfg.clone(), ..RunConfig::default() };
    check.validate()?;
    let bank = a.input.bank(&a.tau, &pair_ids(&a.pairs))?;
    let out = granger_analysis(&bank, &a.tau, &a.pairs, &cfg, a.test.significance, a.test.seed);
    write_out(a.test.out.as_deref(), &out.rows_csv())?;
    if let Some(t) = &a.test.table {
        write_out(Some(t), &gapflow::surrogate::table_to_csv(&out.table))?;
    }
    if a.test.out.is_some() {
        print_json(&json!({"significance": out.table, "lag_selection": out.lags, "notes": out.notes}));
    }
    Ok(())
}

fn anm(a: AnmArgs) -> Result<()> {
    check_level(a.test.significance)?;
    let cfg = AnmConfig {
        enabled: true,
        tau_tilde: a.tau_tilde,
        lags: a.lags,
        taus: a.tau.clone(),
        shuffles: a.shuffles,
        pairs: a.pairs.iter().map(ToString::to_string).collect(),
        starts: a.starts,
        ..AnmConfig::default()
    };
    let check = RunConfig { seed: Some(a.test.seed), inputs: a.input.files.clone(), anm: cfg.clone(), ..RunConfig::default() };
    check.validate()?;
    let bank = a.input.bank(&a.tau, &pair_ids(&a.pairs))?;
    let out = anm_analysis(&bank, &a.tau, &a.pairs, &cfg, a.test.significance, a.test.seed);
    write_out(a.test.out.as_deref(), &out.rows_csv())?;
    if let Some(t) = &a.test.table {
        write_out(Some(t), &gapflow::surrogate::table_to_csv(&out.table))?;
    }
    if a.test.out.is_some() {
        print_json(&json!({"significance": out.table, "notes": out.notes}));
    }
    Ok(())
}

fn read_xy(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |j: usize| -> Result<f64> {
            rec.get(j).ok_or_else(|| anyhow!("row {}: missing column {j}", i + 1))?.trim().parse().with_context(|| format!("row {}", i + 1))
        };
        x.push(field(1)?);
        y.push(field(2)?);
    }
    Ok((x, y))
}

fn surrogate(a: SurrogateArgs) -> Result<()> {
    check_level(a.significance)?;
    let (x, y) = match &a.xy {
        Some(path) => read_xy(path)?,
        None => {
            if a.files.is_empty() {
                bail!(PipelineError::Config("give snapshot files or --xy".into()));
            }
            let input = InputArgs { files: a.files.clone(), format: a.format, tick: a.tick, resolution: a.resolution };
            let bank = input.bank(&[a.tau], &[a.pair.first, a.pair.second])?;
            let aligned = bank.aligned(a.tau, a.pair);
            (aligned.iter().flat_map(|p| p.0.iter().copied()).collect(), aligned.iter().flat_map(|p| p.1.iter().copied()).collect())
        }
    };
    let (ens, tail): (SurrogateEnsemble<f64>, Tail) = match a.test {
        TestKind::Granger => {
            let test = GrangerTest { lag: a.lag.max(1), variant: a.variant, tau_tilde: a.tau_tilde };
            (null_ensemble(&test, &x, &y, a.n, a.seed)?, Tail::Upper)
        }
        TestKind::Anm => {
            let test = LaggedAnm { lag: a.lag, tau_tilde: a.tau_tilde, gp: GpConfig { seed: a.seed, ..GpConfig::default() } };
            let tail = if a.lag == 0 { Tail::Two } else { Tail::Upper };
            (null_ensemble(&test, &x, &y, a.n, a.seed)?, tail)
        }
    };
    let (lower, upper) = ens.thresholds(a.significance, tail);
    write_out(a.out.as_deref(), &ens.to_csv())?;
    let summary = json!({"n_shuffles": ens.n_shuffles, "excluded": ens.excluded, "seed": ens.seed, "tail": tail,
        "significance": a.significance, "lower": lower, "upper": upper});
    if a.out.is_some() {
        print_json(&summary);
    } else {
        eprintln!("{summary}");
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec = GeneratorSpec::new(a.kind, a.n, a.seed);
    if let Some(v) = a.beta {
        spec = spec.with_beta(v);
    }
    if let Some(v) = a.phi {
        spec = spec.with_phi(v);
    }
    if let Some(v) = a.sigma {
        spec = spec.with_sigma(v);
    }
    if let Some(v) = a.lag {
        spec = spec.with_lag(v);
    }
    let g = generate(&spec)?;
    let mut buf = Vec::new();
    g.write_csv(&mut buf)?;
    write_out(a.out.as_deref(), std::str::from_utf8(&buf)?)?;
    if a.out.is_some() {
        print_json(&json!({"spec": spec, "truth": g.truth}));
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::from_toml(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => RunConfig::default(),
    };
    if !a.files.is_empty() {
        cfg.inputs = a.files;
    }
    cfg.seed = a.seed.or(cfg.seed);
    if let Some(n) = a.synth_book {
        let seed = cfg.seed.ok_or_else(|| PipelineError::Config("a seed is required".into()))?;
        cfg.synth = Some(GeneratorSpec::new(GeneratorKind::SyntheticBook, n, seed));
    }
    cfg.out_dir = a.out.unwrap_or(cfg.out_dir);
    cfg.format = a.format.or(cfg.format);
    cfg.tick = a.tick.unwrap_or(cfg.tick);
    cfg.resolution = a.resolution.unwrap_or(cfg.resolution);
    cfg.taus = a.tau.unwrap_or(cfg.taus);
    cfg.granger.shuffles = a.granger_shuffles.unwrap_or(cfg.granger.shuffles);
    cfg.anm.shuffles = a.anm_shuffles.unwrap_or(cfg.anm.shuffles);
    cfg.xcorr.enabled &= !a.no_xcorr;
    cfg.granger.enabled &= !a.no_granger;
    cfg.anm.enabled &= !a.no_anm;
    let report = gapflow::pipeline::run(&cfg)?;
    let stages: BTreeMap<_, _> = report.stages.iter().map(|s| (s.name.clone(), s.status)).collect();
    print_json(&json!({"out_dir": cfg.out_dir, "stages": stages, "files": report.files.len()}));
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let report = load_report(&a.dir)?;
    let mismatched = verify_report(&a.dir, &report);
    print_json(&json!({
        "tool": report.tool, "version": report.version, "seed": report.seed, "rng": report.rng,
        "stages": report.stages.iter().map(|s| json!({"name": s.name, "status": s.status, "notes": s.notes.len()})).collect::<Vec<_>>(),
        "granger": report.granger, "anm": report.anm, "files": report.files.len(),
        "mismatched": mismatched, "error": report.error,
    }));
    if !mismatched.is_empty() {
        bail!(PipelineError::Report(format!("{} file(s) differ from their recorded digest", mismatched.len())));
    }
    Ok(())
}

/// Machine-readable kind of an error chain.
fn error_kind(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(p) = cause.downcast_ref::<PipelineError>() {
            return p.kind();
        }
        if cause.is::<gapflow::synthgen::SynthError>() {
            return "synth";
        }
        if cause.is::<gapflow::surrogate::SurrogateError>() {
            return "surrogate";
        }
        if cause.is::<std::io::Error>() || cause.is::<csv::Error>() {
            return "io";
        }
    }
    "internal"
}

fn fail(kind: &str, message: String, code: u8) -> ExitCode {
    eprintln!("{}", json!({"error": kind, "message": message}));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim().to_string(), USAGE_EXIT),
    };
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Series(a) => series(a),
        Command::Xcorr(a) => xcorr(a),
        Command::Granger(a) => granger(a),
        Command::Anm(a) => anm(a),
        Command::Surrogate(a) => surrogate(a),
        Command::Synth(a) => synth(a),
        Command::Run(a) => run(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(error_kind(&e), format!("{e:#}"), 1),
    }
}

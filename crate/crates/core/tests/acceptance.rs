//! Acceptance suite: one `[PASS]` / `[FAIL]` line per criterion.
//!
//! Run with `cargo test --release -p gapflow --test acceptance`. Exits
//! nonzero when any criterion fails. Every tolerance and sample size is a
//! named constant next to the check that uses it.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use gapflow::anm::{anm_score, LaggedAnm};
use gapflow::gpr::GpConfig;
use gapflow::granger::{granger_test, GrangerTest, Variant};
use gapflow::hsic::{hsic_permutation_pvalue, hsic_statistic};
use gapflow::ingest::{parse_snapshots, write_csv, Format, IngestConfig, SnapshotSequence};
use gapflow::linmodel::{fit_ar, fit_nested, select_lag, Exogenous};
use gapflow::pipeline::{granger_analysis, run, run_series_ids, segments_of, GrangerConfig, RunConfig, SeriesBank, SeriesPair};
use gapflow::series::max_gap_position_histogram;
use gapflow::stats::ks_uniform;
use gapflow::surrogate::{data_scores, null_ensemble, shuffle, PairTest, Tail};
use gapflow::synthgen::{generate, GeneratorKind, GeneratorSpec, Generated};
use gapflow::xcorr::average_correlation;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normals(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(r)).collect()
}

fn pair_of(spec: &GeneratorSpec) -> (Vec<f64>, Vec<f64>) {
    let g = generate(spec).expect("generator");
    let (x, y) = g.pair().expect("pair generator");
    (x.to_vec(), y.to_vec())
}

/// Fraction of scored windows beyond the ensemble's critical value.
fn significant_fraction<P: PairTest<f64>>(test: &P, x: &[f64], y: &[f64], shuffles: usize, p: f64, tail: Tail, seed: u64) -> (f64, usize) {
    let ens = null_ensemble(test, x, y, shuffles, seed).expect("ensemble");
    let scores: Vec<f64> = data_scores(test, x, y, seed).into_iter().flatten().collect();
    let hits = scores.iter().filter(|&&s| ens.is_significant(s, p, tail)).count();
    (hits as f64 / scores.len() as f64, scores.len())
}

// ---------------------------------------------------------------- 1

/// Gaussian elimination with partial pivoting on the normal equations.
fn normal_equations(design: &[Vec<f64>], target: &[f64]) -> Vec<f64> {
    let k = design[0].len();
    let mut a = vec![vec![0.0; k + 1]; k];
    for (row, &t) in design.iter().zip(target) {
        for i in 0..k {
            for j in 0..k {
                a[i][j] += row[i] * row[j];
            }
            a[i][k] += row[i] * t;
        }
    }
    for c in 0..k {
        let piv = (c..k).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        for r in c + 1..k {
            let f = a[r][c] / a[c][c];
            for j in c..=k {
                a[r][j] -= f * a[c][j];
            }
        }
    }
    let mut beta = vec![0.0; k];
    for c in (0..k).rev() {
        let s: f64 = (c + 1..k).map(|j| a[c][j] * beta[j]).sum();
        beta[c] = (a[c][k] - s) / a[c][c];
    }
    beta
}

fn criterion_1() -> Outcome {
    const INSTANCES: usize = 100;
    const REL_TOL: f64 = 1e-8;
    const BUDGET: Duration = Duration::from_secs(10);
    let start = Instant::now();
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    for i in 0..INSTANCES {
        let lag = r.random_range(1..=5);
        let n = r.random_range(4 * lag + 20..=200);
        let y = normals(&mut r, n);
        let x = normals(&mut r, n);
        let mode = i % 3;
        let exo = match mode {
            0 => Exogenous::None,
            1 => Exogenous::Lagged(&x),
            _ => Exogenous::WithInstant(&x),
        };
        let fit = fit_ar(&y, lag, exo).map_err(|e| format!("instance {i}: {e}"))?;
        let mut design = Vec::new();
        for t in lag..n {
            let mut row = vec![1.0];
            row.extend((1..=lag).map(|l| y[t - l]));
            match mode {
                1 => row.extend((1..=lag).map(|l| x[t - l])),
                2 => row.extend((0..=lag).map(|l| x[t - l])),
                _ => {}
            }
            design.push(row);
        }
        let oracle = normal_equations(&design, &y[lag..]);
        let diff = fit.coefficients.iter().zip(&oracle).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = oracle.iter().map(|b| b * b).sum::<f64>().sqrt();
        worst = worst.max(diff / norm);
    }
    let took = start.elapsed();
    ensure(worst <= REL_TOL && took < BUDGET, format!("max relative coefficient error {worst:.2e} over {INSTANCES} fits in {took:.2?}"))
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    const WINDOWS: usize = 200;
    const TAU_TILDE: usize = 500;
    const SHUFFLES: usize = 2000;
    const P: f64 = 0.01;
    const MIN_POWER: f64 = 0.95;
    const MAX_FPR: f64 = 0.03;
    let test = GrangerTest { lag: 1, variant: Variant::Standard, tau_tilde: TAU_TILDE };
    let n = WINDOWS * TAU_TILDE;
    let spec = GeneratorSpec::new(GeneratorKind::VarCoupled, n, 21).with_beta(0.8).with_phi(0.5).with_sigma(1.0);
    let (x, y) = pair_of(&spec);
    let (power, w1) = significant_fraction(&test, &x, &y, SHUFFLES, P, Tail::Upper, 22);
    let indep = GeneratorSpec::new(GeneratorKind::VarCoupled, n, 23).with_beta(0.0).with_phi(0.5).with_sigma(1.0);
    let (x, y) = pair_of(&indep);
    let (fpr, w2) = significant_fraction(&test, &x, &y, SHUFFLES, P, Tail::Upper, 24);
    ensure(
        power >= MIN_POWER && w1 == WINDOWS && w2 == WINDOWS && (0.0..=MAX_FPR).contains(&fpr),
        format!("detection {power:.3} over {w1} coupled windows; false positives {fpr:.3} over {w2} independent windows"),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    const WINDOWS: usize = 200;
    const TAU_TILDE: usize = 500;
    const SHUFFLES: usize = 2000;
    const P: f64 = 0.01;
    let n = WINDOWS * TAU_TILDE;
    let spec = GeneratorSpec::new(GeneratorKind::ContemporaneousCoupled, n, 31).with_beta(0.8).with_phi(0.5);
    let (x, y) = pair_of(&spec);
    let instant = GrangerTest { lag: 1, variant: Variant::Instantaneous, tau_tilde: TAU_TILDE };
    let standard = GrangerTest { lag: 1, variant: Variant::Standard, tau_tilde: TAU_TILDE };
    let (fi, wi) = significant_fraction(&instant, &x, &y, SHUFFLES, P, Tail::Upper, 32);
    let (fs, ws) = significant_fraction(&standard, &x, &y, SHUFFLES, P, Tail::Upper, 33);
    ensure(
        fi >= 0.95 && fs <= 0.05 && wi == WINDOWS && ws == WINDOWS,
        format!("instantaneous {fi:.3}, standard {fs:.3} over {WINDOWS} windows"),
    )
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    const INSTANCES: usize = 2000;
    const SLACK: f64 = 1e-9;
    let mut r = rng(4);
    let (mut fits, mut violations, mut worst_s) = (0, 0, f64::INFINITY);
    for i in 0..INSTANCES {
        let lag = r.random_range(1..=6);
        let n = r.random_range(3 * lag + 6..=300);
        let y = normals(&mut r, n);
        // mix independent, coupled, collinear and constant causes
        let x: Vec<f64> = match i % 4 {
            0 => normals(&mut r, n),
            1 => y.iter().map(|v| 0.5 * v + r.random::<f64>()).collect(),
            2 => y.clone(),
            _ => vec![1.5; n],
        };
        for variant in [Variant::Standard, Variant::Instantaneous] {
            let exo = match variant {
                Variant::Standard => Exogenous::Lagged(&x),
                Variant::Instantaneous => Exogenous::WithInstant(&x),
            };
            if let Ok(nf) = fit_nested(&y, lag, exo) {
                fits += 1;
                if nf.full.ssr > nf.restricted.ssr * (1.0 + SLACK) {
                    violations += 1;
                }
            }
            if let Ok(g) = granger_test(&y, &x, lag, variant) {
                worst_s = worst_s.min(g.s);
            }
        }
    }
    ensure(violations == 0 && worst_s >= 0.0, format!("{violations} nesting violations over {fits} fits; smallest s {worst_s:.3e}"))
}

// ---------------------------------------------------------------- 5

fn naive_median_distance(v: &[f64]) -> f64 {
    let mut d = Vec::new();
    for i in 0..v.len() {
        for j in 0..v.len() {
            if i < j {
                d.push((v[i] - v[j]).abs());
            }
        }
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 { d[m / 2] } else { 0.5 * (d[m / 2 - 1] + d[m / 2]) };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// `tr(K H L H) / n^2` with explicit centering matrices.
fn naive_hsic(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let gram = |v: &[f64]| {
        let s = naive_median_distance(v);
        (0..n).map(|i| (0..n).map(|j| (-(v[i] - v[j]).powi(2) / (2.0 * s * s)).exp()).collect::<Vec<_>>()).collect::<Vec<_>>()
    };
    let (k, l) = (gram(a), gram(b));
    let h = |i: usize, j: usize| if i == j { 1.0 - 1.0 / n as f64 } else { -1.0 / n as f64 };
    let center = |m: &Vec<Vec<f64>>| {
        let hm: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (0..n).map(|t| h(i, t) * m[t][j]).sum()).collect()).collect();
        (0..n).map(|i| (0..n).map(|j| (0..n).map(|t| hm[i][t] * h(t, j)).sum()).collect()).collect::<Vec<Vec<f64>>>()
    };
    let (kc, lc) = (center(&k), center(&l));
    let mut tr = 0.0;
    for i in 0..n {
        for j in 0..n {
            tr += kc[i][j] * lc[j][i];
        }
    }
    tr / (n * n) as f64
}

fn criterion_5() -> Outcome {
    const INSTANCES: usize = 50;
    const ABS_TOL: f64 = 1e-12;
    const TRIALS: usize = 500;
    const TRIAL_N: usize = 50;
    const PERMUTATIONS: usize = 200;
    const KS_MIN_P: f64 = 0.01;
    let mut r = rng(5);
    let mut worst: f64 = 0.0;
    for i in 0..INSTANCES {
        let n = r.random_range(2..=50);
        let a = normals(&mut r, n);
        let b: Vec<f64> = if i % 2 == 0 { normals(&mut r, n) } else { a.iter().map(|v| v * v + 0.1 * r.random::<f64>()).collect() };
        let got = hsic_statistic(&a, &b).map_err(|e| e.to_string())?.value;
        worst = worst.max((got - naive_hsic(&a, &b)).abs());
    }
    let pvals: Vec<f64> = (0..TRIALS)
        .map(|t| {
            let a = normals(&mut r, TRIAL_N);
            let b = normals(&mut r, TRIAL_N);
            hsic_permutation_pvalue(&a, &b, PERMUTATIONS, t as u64).expect("p-value")
        })
        .collect();
    let ks = ks_uniform(&pvals);
    ensure(
        worst <= ABS_TOL && ks.p_value > KS_MIN_P,
        format!("max |naive - fast| {worst:.2e}; KS uniformity of {TRIALS} p-values: D={:.4}, p={:.3}", ks.statistic, ks.p_value),
    )
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Outcome {
    const TRIALS: u64 = 100;
    const N: usize = 500;
    const MIN_RATE: f64 = 0.9;
    const BUDGET: Duration = Duration::from_secs(600);
    let start = Instant::now();
    let (mut positive, mut asymmetric) = (0, 0);
    for t in 0..TRIALS {
        let (x, y) = pair_of(&GeneratorSpec::new(GeneratorKind::AnmPair, N, 600 + t));
        let gp = GpConfig { seed: t, ..GpConfig::default() };
        let fwd = anm_score(&x, &y, &gp).map_err(|e| e.to_string())?;
        let back = anm_score(&y, &x, &gp).map_err(|e| e.to_string())?;
        positive += usize::from(fwd.s > 0.0);
        asymmetric += usize::from(back.s != -fwd.s);
    }
    let took = start.elapsed();
    let rate = positive as f64 / TRIALS as f64;
    ensure(
        rate >= MIN_RATE && asymmetric == 0 && took < BUDGET,
        format!("S > 0 in {rate:.2} of {TRIALS} trials; {asymmetric} antisymmetry failures; {took:.1?}"),
    )
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    const TRUE_LAG: usize = 2;
    const FAR_LAG: usize = 7;
    const WINDOWS: usize = 100;
    const TAU_TILDE: usize = 200;
    const SHUFFLES: usize = 400;
    const P: f64 = 0.01;
    let spec = GeneratorSpec::new(GeneratorKind::LaggedAnmPair, WINDOWS * TAU_TILDE + TRUE_LAG, 71).with_lag(TRUE_LAG);
    let (x, y) = pair_of(&spec);
    let mut frac = BTreeMap::new();
    for lag in [TRUE_LAG, FAR_LAG] {
        let test = LaggedAnm { lag, tau_tilde: TAU_TILDE, gp: GpConfig { seed: 72, ..GpConfig::default() } };
        frac.insert(lag, significant_fraction(&test, &x, &y, SHUFFLES, P, Tail::Upper, 73 + lag as u64));
    }
    let (hit, w) = frac[&TRUE_LAG];
    let (far, _) = frac[&FAR_LAG];
    ensure(hit >= 0.8 && far <= 0.03, format!("significant fraction {hit:.3} at L={TRUE_LAG}, {far:.3} at L={FAR_LAG} over {w} windows"))
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    const BOUND: f64 = 1.0 + 1e-12;
    const UNIT_TOL: f64 = 1e-12;
    const SHIFT: usize = 3;
    let mut r = rng(8);
    let base = normals(&mut r, 5000);
    let same = average_correlation(&base, &base, 100, 10).map_err(|e| e.to_string())?;
    let c0 = same.at(0).unwrap();
    // g leads r by SHIFT steps reversed: g(i + SHIFT) = r(i)
    let mut g = normals(&mut r, SHIFT);
    g.extend_from_slice(&base[..base.len() - SHIFT]);
    let shifted = average_correlation(&base, &g, 100, 10).map_err(|e| e.to_string())?;
    let mut max_abs: f64 = 0.0;
    for _ in 0..50 {
        let a = normals(&mut r, 400);
        let b: Vec<f64> = a.iter().map(|v| v + 0.01 * r.random::<f64>()).collect();
        for cf in [average_correlation(&a, &b, 50, 10), average_correlation(&a, &a, 37, 5)] {
            max_abs = cf.map_err(|e| e.to_string())?.values.iter().fold(max_abs, |m, v| m.max(v.abs()));
        }
    }
    ensure(
        (c0 - 1.0).abs() <= UNIT_TOL && shifted.argmax() == SHIFT as i64 && max_abs <= BOUND,
        format!("C(0) - 1 = {:.1e}; argmax at {}; max |C| = {max_abs:.15}", c0 - 1.0, shifted.argmax()),
    )
}

// ---------------------------------------------------------------- 9

fn calibration<P: PairTest<f64>>(name: &str, test: &P, x: &[f64], y: &[f64], shuffles: usize, tail: Tail, seed: u64) -> Result<String, String> {
    const P_LEVEL: f64 = 0.01;
    const MIN_WINDOWS: usize = 500;
    let ens = null_ensemble(test, x, y, shuffles, seed).map_err(|e| e.to_string())?;
    let xs = shuffle(x, seed ^ 0x5EED, 0);
    let ys = shuffle(y, seed ^ 0x5EED, 1);
    let scores: Vec<f64> = data_scores(test, &xs, &ys, seed + 1).into_iter().flatten().collect();
    let w = scores.len();
    let hits = scores.iter().filter(|&&s| ens.is_significant(s, P_LEVEL, tail)).count();
    let frac = hits as f64 / w as f64;
    let se = (P_LEVEL * (1.0 - P_LEVEL) / w as f64).sqrt();
    let line = format!("{name} {frac:.4} over {w}");
    if w >= MIN_WINDOWS && (frac - P_LEVEL).abs() <= 3.0 * se {
        Ok(line)
    } else {
        Err(format!("{line} (allowed {P_LEVEL} +- {:.4})", 3.0 * se))
    }
}

fn criterion_9() -> Outcome {
    const WINDOWS: usize = 500;
    let (x, y) = pair_of(&GeneratorSpec::new(GeneratorKind::VarCoupled, WINDOWS * 500, 91).with_beta(0.8));
    let mut lines = Vec::new();
    let mut ok = true;
    let mut push = |r: Result<String, String>| match r {
        Ok(s) => lines.push(s),
        Err(s) => {
            ok = false;
            lines.push(format!("FAILED {s}"));
        }
    };
    for variant in [Variant::Standard, Variant::Instantaneous] {
        let test = GrangerTest { lag: 2, variant, tau_tilde: 500 };
        push(calibration(&format!("granger {variant}"), &test, &x, &y, 2000, Tail::Upper, 92));
    }
    let (ax, ay) = pair_of(&GeneratorSpec::new(GeneratorKind::LaggedAnmPair, WINDOWS * 100 + 2, 93));
    for (lag, tail) in [(0, Tail::Two), (2, Tail::Upper)] {
        let test = LaggedAnm { lag, tau_tilde: 100, gp: GpConfig { seed: 94, ..GpConfig::default() } };
        push(calibration(&format!("anm L={lag}"), &test, &ax, &ay, 1000, tail, 95 + lag as u64));
    }
    ensure(ok, lines.join("; "))
}

// ---------------------------------------------------------------- 10

fn criterion_10() -> Outcome {
    const TRIALS: u64 = 100;
    const N: usize = 1000;
    const MIN_RATE: f64 = 0.95;
    let mut hits = 0;
    let mut picks = BTreeMap::new();
    for t in 0..TRIALS {
        let mut r = rng(1000 + t);
        let e = normals(&mut r, N + 200);
        let mut y = vec![0.0; N + 200];
        for k in 2..y.len() {
            y[k] = 0.5 * y[k - 1] + 0.3 * y[k - 2] + e[k];
        }
        let lag = select_lag(&[&y[200..]], 10).lag;
        *picks.entry(lag).or_insert(0) += 1;
        hits += usize::from(lag == 2);
    }
    let rate = hits as f64 / TRIALS as f64;
    ensure(rate >= MIN_RATE, format!("lag 2 chosen in {rate:.2} of {TRIALS} trials; picks {picks:?}"))
}

// ---------------------------------------------------------------- 11

/// Synthetic book for the mechanism and throughput checks. Defaults: tick
/// 0.01, spread 2 ticks, first-gap mean 3 ticks, deeper-gap mean 2 ticks,
/// consumption probability 0.5 per step, resolution 10.
const BOOK_SNAPSHOTS: usize = 250_000;

fn book() -> SnapshotSequence {
    match generate(&GeneratorSpec::new(GeneratorKind::SyntheticBook, BOOK_SNAPSHOTS, 11)).expect("book").data {
        Generated::Book(seq) => seq,
        _ => unreachable!("book generator"),
    }
}

fn criterion_11(seq: &SnapshotSequence) -> Outcome {
    const POSITION_TAU: usize = 60;
    const MIN_MASS: f64 = 0.25;
    const GRANGER_TAU: usize = 10;
    const MIN_INSTANT: f64 = 0.5;
    const MAX_STANDARD: f64 = 0.05;
    let segs = segments_of(std::slice::from_ref(seq));
    let hist = max_gap_position_histogram(&segs[0].gaps, POSITION_TAU).map_err(|e| e.to_string())?;
    let mass = hist.probability(1) + hist.probability(-1);
    let pair: SeriesPair = "g100:r100".parse().unwrap();
    let bank = SeriesBank::build(segs, &[GRANGER_TAU], &[pair.first, pair.second]);
    let cfg = GrangerConfig { lag: Some(2), shuffles: 1000, ..GrangerConfig::default() };
    let out = granger_analysis(&bank, &[GRANGER_TAU], &[pair], &cfg, 0.01, 12);
    let frac = |variant: &str| {
        out.table.iter().find(|r| r.key == format!("g100_to_r100_{variant}_tau{GRANGER_TAU}")).map(|r| (r.fraction, r.total)).unwrap_or((f64::NAN, 0))
    };
    let (fi, n) = frac("instant");
    let (fs, _) = frac("standard");
    ensure(
        mass >= MIN_MASS && fi >= MIN_INSTANT && fs <= MAX_STANDARD,
        format!("|position| = 1 mass {mass:.3} at tau {POSITION_TAU}; gaps -> returns at tau {GRANGER_TAU}: instantaneous {fi:.3}, standard {fs:.3} over {n} windows"),
    )
}

// ---------------------------------------------------------------- 12

fn criterion_12(seq: &SnapshotSequence, analysis_time: Duration) -> Outcome {
    const INGEST_BUDGET: Duration = Duration::from_secs(60);
    const ANALYSIS_BUDGET: Duration = Duration::from_secs(30 * 60);
    let mut bytes = Vec::new();
    write_csv(seq, &mut bytes).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let parsed = parse_snapshots(bytes.as_slice(), Format::Csv, &IngestConfig::default()).map_err(|e| e.to_string())?;
    let cfg = RunConfig::default();
    let bank = SeriesBank::build(segments_of(&[parsed.sequence]), &cfg.taus, &run_series_ids(&cfg).map_err(|e| e.to_string())?);
    let took = start.elapsed();
    let series = bank.iter().count();
    ensure(
        took < INGEST_BUDGET && parsed.rejected.is_empty() && bank.missing.is_empty() && analysis_time < ANALYSIS_BUDGET,
        format!("ingest + {series} series from {BOOK_SNAPSHOTS} snapshots in {took:.1?}; criteria 2-9 in {analysis_time:.1?}"),
    )
}

// ---------------------------------------------------------------- 13

fn criterion_13() -> Outcome {
    let dirs = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
    let mut digests = Vec::new();
    for d in &dirs {
        let mut cfg = RunConfig::default();
        cfg.seed = Some(13);
        cfg.synth = Some(GeneratorSpec::new(GeneratorKind::SyntheticBook, 30_000, 13));
        cfg.out_dir = d.path().to_path_buf();
        cfg.granger.shuffles = 200;
        cfg.anm.shuffles = 100;
        cfg.anm.tau_tilde = 100;
        cfg.anm.lags = vec![0, 2];
        let report = run(&cfg).map_err(|e| e.to_string())?;
        let files: Vec<(String, Vec<u8>)> = report
            .files
            .iter()
            .filter(|f| f.path.ends_with(".csv"))
            .map(|f| (f.path.clone(), std::fs::read(d.path().join(&f.path)).expect("output file")))
            .collect();
        digests.push(files);
    }
    let same = digests[0] == digests[1];
    ensure(same && !digests[0].is_empty(), format!("{} CSV files, identical: {same}", digests[0].len()))
}

fn main() {
    let mut failures = 0;
    let mut report = |id: u32, name: &str, f: &mut dyn FnMut() -> Outcome| -> Duration {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let took = start.elapsed();
        match result {
            Ok(d) => println!("[PASS] {id:>2} {name}: {d} ({took:.1?})"),
            Err(d) => {
                failures += 1;
                println!("[FAIL] {id:>2} {name}: {d} ({took:.1?})");
            }
        }
        took
    };
    report(1, "OLS oracle equivalence", &mut criterion_1);
    let mut analysis = Duration::ZERO;
    analysis += report(2, "Granger power and false positives", &mut criterion_2);
    analysis += report(3, "instantaneous vs standard contrast", &mut criterion_3);
    analysis += report(4, "nested fits", &mut criterion_4);
    analysis += report(5, "HSIC oracle and null uniformity", &mut criterion_5);
    analysis += report(6, "ANM direction recovery", &mut criterion_6);
    analysis += report(7, "lagged ANM specificity", &mut criterion_7);
    analysis += report(8, "correlation function", &mut criterion_8);
    analysis += report(9, "surrogate calibration", &mut criterion_9);
    report(10, "BIC lag selection", &mut criterion_10);
    let seq = book();
    report(11, "order book mechanism", &mut || criterion_11(&seq));
    report(12, "throughput", &mut || criterion_12(&seq, analysis));
    report(13, "determinism", &mut criterion_13);
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}

//! Standard and instantaneous Granger effect sizes on windowed series pairs.
//!
//! The effect size is `s = (ssr_R - ssr_F) / ssr_F`, where the restricted
//! model is an `AR(L)` of the effect and the full model adds cause lags
//! `1..=L` (standard) or `0..=L` (instantaneous).

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linmodel::{fit_nested, Exogenous, FitError, FitFlags};
use crate::scalar::Real;
use crate::surrogate::PairTest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Standard,
    #[serde(rename = "instant")]
    Instantaneous,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Standard => "standard",
            Variant::Instantaneous => "instant",
        })
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard" => Ok(Variant::Standard),
            "instant" | "instantaneous" => Ok(Variant::Instantaneous),
            o => Err(format!("unknown Granger variant `{o}` (expected standard or instant)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrangerStat<T> {
    pub s: T,
    pub ssr_restricted: T,
    pub ssr_full: T,
    pub n_obs: usize,
    pub flags: FitFlags,
}

/// `(ssr_R - ssr_F) / ssr_F`
pub fn effect_size<T: Real>(ssr_restricted: T, ssr_full: T) -> T {
    (ssr_restricted - ssr_full) / ssr_full
}

pub fn granger_test<T: Real>(effect: &[T], cause: &[T], lag: usize, variant: Variant) -> Result<GrangerStat<T>, FitError> {
    let exo = match variant {
        Variant::Standard => Exogenous::Lagged(cause),
        Variant::Instantaneous => Exogenous::WithInstant(cause),
    };
    let fit = fit_nested(effect, lag, exo)?;
    let flags = FitFlags {
        ridge: fit.full.flags.ridge,
        degenerate: fit.full.flags.degenerate || fit.restricted.flags.degenerate,
    };
    Ok(GrangerStat {
        s: effect_size(fit.restricted.ssr, fit.full.ssr),
        ssr_restricted: fit.restricted.ssr,
        ssr_full: fit.full.ssr,
        n_obs: fit.full.n_obs,
        flags,
    })
}

/// Granger test on disjoint windows of `tau_tilde` steps; in [`PairTest`]
/// terms `x` is the cause and `y` the effect. Degenerate fits are excluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GrangerTest {
    pub lag: usize,
    pub variant: Variant,
    pub tau_tilde: usize,
}

impl GrangerTest {
    pub fn window_stat<T: Real>(&self, cause: &[T], effect: &[T], window: usize) -> Result<GrangerStat<T>, FitError> {
        let r = window * self.tau_tilde..(window + 1) * self.tau_tilde;
        granger_test(&effect[r.clone()], &cause[r], self.lag, self.variant)
    }
}

impl<T: Real> PairTest<T> for GrangerTest {
    fn windows(&self, len: usize) -> usize {
        len.checked_div(self.tau_tilde).unwrap_or(0)
    }

    fn score(&self, x: &[T], y: &[T], window: usize, _stream: u64) -> Option<T> {
        self.window_stat(x, y, window).ok().filter(|g| !g.flags.degenerate).map(|g| g.s)
    }
}

/// One aligned cause/effect pair of percentile series for a given `tau`
/// and data segment.
#[derive(Debug, Clone)]
pub struct GrangerInput<'a, T> {
    pub cause_id: String,
    pub effect_id: String,
    pub tau: usize,
    pub segment: usize,
    pub cause: &'a [T],
    pub effect: &'a [T],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrangerResult<T> {
    pub cause: String,
    pub effect: String,
    pub variant: Variant,
    pub lag: usize,
    pub tau: usize,
    pub segment: usize,
    pub window: usize,
    pub s: T,
    pub ssr_restricted: T,
    pub ssr_full: T,
    pub ridge: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exclusion {
    pub cause: String,
    pub effect: String,
    pub variant: Variant,
    pub tau: usize,
    pub segment: usize,
    pub window: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GrangerBatch<T> {
    pub results: Vec<GrangerResult<T>>,
    pub exclusions: Vec<Exclusion>,
}

/// Every window of every input under every variant, in input, variant,
/// window order.
pub fn batch_granger<T: Real>(inputs: &[GrangerInput<'_, T>], tau_tilde: usize, lag: usize, variants: &[Variant]) -> GrangerBatch<T> {
    let jobs: Vec<(usize, Variant, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, inp)| {
            let windows = inp.cause.len().min(inp.effect.len()).checked_div(tau_tilde).unwrap_or(0);
            variants.iter().flat_map(move |&v| (0..windows).map(move |w| (i, v, w)))
        })
        .collect();
    let outcomes: Vec<_> = jobs
        .par_iter()
        .map(|&(i, variant, window)| {
            let test = GrangerTest { lag, variant, tau_tilde };
            (i, variant, window, test.window_stat(inputs[i].cause, inputs[i].effect, window))
        })
        .collect();
    let mut batch = GrangerBatch { results: Vec::new(), exclusions: Vec::new() };
    for (i, variant, window, out) in outcomes {
        let inp = &inputs[i];
        let reason = match out {
            Ok(g) if !g.flags.degenerate => {
                batch.results.push(GrangerResult {
                    cause: inp.cause_id.clone(),
                    effect: inp.effect_id.clone(),
                    variant,
                    lag,
                    tau: inp.tau,
                    segment: inp.segment,
                    window,
                    s: g.s,
                    ssr_restricted: g.ssr_restricted,
                    ssr_full: g.ssr_full,
                    ridge: g.flags.ridge,
                });
                continue;
            }
            Ok(_) => "degenerate fit".to_string(),
            Err(e) => e.to_string(),
        };
        batch.exclusions.push(Exclusion {
            cause: inp.cause_id.clone(),
            effect: inp.effect_id.clone(),
            variant,
            tau: inp.tau,
            segment: inp.segment,
            window,
            reason,
        });
    }
    batch
}

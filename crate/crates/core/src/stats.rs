//! Statistical procedures and trace-derived analyses: exact one-sided
//! binomial tests, Wilson score intervals, paired Wilcoxon signed-rank tests
//! (exact permutation null for small samples, normal approximation with
//! continuity correction above), Bonferroni thresholds, first-success
//! positions, cumulative win curves, Pearson correlation, and cross-run
//! concordance tables.

use crate::pipeline::ExperimentRecord;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate sample: {0}")]
    Degenerate(String),
}

// ---------------------------------------------------------------------------
// Normal distribution helpers
// ---------------------------------------------------------------------------

/// Cumulative standard normal via Hart's rational approximations
/// (double-precision form popularized by West).
pub fn normal_cdf(x: f64) -> f64 {
    let xabs = x.abs();
    let cum = if xabs > 37.0 {
        0.0
    } else {
        let e = (-xabs * xabs / 2.0).exp();
        if xabs < 7.071_067_811_865_47 {
            let mut num = 3.526_249_659_989_11e-2 * xabs + 0.700_383_064_443_688;
            num = num * xabs + 6.373_962_203_531_65;
            num = num * xabs + 33.912_866_078_383;
            num = num * xabs + 112.079_291_497_871;
            num = num * xabs + 221.213_596_169_931;
            num = num * xabs + 220.206_867_912_376;
            let mut den = 8.838_834_764_831_84e-2 * xabs + 1.755_667_163_182_64;
            den = den * xabs + 16.064_177_579_207;
            den = den * xabs + 86.780_732_202_946_1;
            den = den * xabs + 296.564_248_779_674;
            den = den * xabs + 637.333_633_378_831;
            den = den * xabs + 793.826_512_519_948;
            den = den * xabs + 440.413_735_824_752;
            e * num / den
        } else {
            let mut b = xabs + 0.65;
            b = xabs + 4.0 / b;
            b = xabs + 3.0 / b;
            b = xabs + 2.0 / b;
            b = xabs + 1.0 / b;
            e / (b * 2.506_628_274_631)
        }
    };
    if x > 0.0 {
        1.0 - cum
    } else {
        cum
    }
}

/// Inverse standard normal CDF: Acklam's rational approximation refined by
/// one Halley step against [`normal_cdf`].
pub fn probit(p: f64) -> Result<f64, StatsError> {
    if !(0.0..=1.0).contains(&p) || p == 0.0 || p == 1.0 {
        return Err(StatsError::Domain(format!(
            "probit argument {p} outside (0, 1)"
        )));
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    let mut x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = normal_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    x -= u / (1.0 + x * u / 2.0);
    Ok(x)
}

// ---------------------------------------------------------------------------
// Binomial test and Wilson interval
// ---------------------------------------------------------------------------

fn binomial_pmf_start(k: u64, n: u64, p0: f64) -> f64 {
    // ln C(n, k) + k ln p0 + (n - k) ln(1 - p0), summed in log space.
    let mut ln_choose = 0.0;
    for i in 0..k {
        ln_choose += ((n - i) as f64).ln() - ((i + 1) as f64).ln();
    }
    (ln_choose + k as f64 * p0.ln() + (n - k) as f64 * (1.0 - p0).ln()).exp()
}

/// Exact one-sided binomial tail P(X >= k) with X ~ Bin(n, p0).
pub fn binomial_test_one_sided(k: u64, n: u64, p0: f64) -> Result<f64, StatsError> {
    if k > n || n == 0 {
        return Err(StatsError::Domain(format!("invalid counts k={k} n={n}")));
    }
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(StatsError::Domain(format!("p0={p0} outside (0, 1)")));
    }
    if k == 0 {
        return Ok(1.0);
    }
    let mut term = binomial_pmf_start(k, n, p0);
    let odds = p0 / (1.0 - p0);
    let mut sum = 0.0;
    for j in k..=n {
        sum += term;
        if j < n {
            term *= (n - j) as f64 / (j + 1) as f64 * odds;
        }
    }
    Ok(sum.min(1.0))
}

/// Exact binomial CDF P(X <= k); complements the one-sided tail at k + 1.
pub fn binomial_cdf(k: u64, n: u64, p0: f64) -> Result<f64, StatsError> {
    if k > n || n == 0 {
        return Err(StatsError::Domain(format!("invalid counts k={k} n={n}")));
    }
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(StatsError::Domain(format!("p0={p0} outside (0, 1)")));
    }
    let mut term = binomial_pmf_start(0, n, p0);
    let odds = p0 / (1.0 - p0);
    let mut sum = 0.0;
    for j in 0..=k {
        sum += term;
        if j < n {
            term *= (n - j) as f64 / (j + 1) as f64 * odds;
        }
    }
    Ok(sum.min(1.0))
}

/// Wilson score confidence interval for a binomial proportion.
pub fn wilson_ci(k: u64, n: u64, confidence: f64) -> Result<(f64, f64), StatsError> {
    if n == 0 {
        return Err(StatsError::Domain("n must be >= 1".into()));
    }
    if k > n {
        return Err(StatsError::Domain(format!("k={k} exceeds n={n}")));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(StatsError::Domain(format!(
            "confidence={confidence} outside (0, 1)"
        )));
    }
    let z = probit((1.0 + confidence) / 2.0)?;
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = p + z2 / (2.0 * nf);
    let margin = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    Ok(((center - margin) / denom, (center + margin) / denom))
}

/// Bonferroni-corrected per-test significance threshold.
pub fn bonferroni_threshold(alpha: f64, m: u64) -> Result<f64, StatsError> {
    if m == 0 {
        return Err(StatsError::Domain("m must be >= 1".into()));
    }
    Ok(alpha / m as f64)
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank
// ---------------------------------------------------------------------------

/// Paired observations; differences are taken first minus second.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedSamples {
    pairs: Vec<(f64, f64)>,
}

impl PairedSamples {
    pub fn new(pairs: Vec<(f64, f64)>) -> Result<Self, StatsError> {
        if pairs.is_empty() {
            return Err(StatsError::Domain("need at least one pair".into()));
        }
        Ok(Self { pairs })
    }

    pub fn from_slices(a: &[f64], b: &[f64]) -> Result<Self, StatsError> {
        if a.len() != b.len() {
            return Err(StatsError::Domain("paired slices differ in length".into()));
        }
        Self::new(a.iter().copied().zip(b.iter().copied()).collect())
    }

    pub fn pairs(&self) -> &[(f64, f64)] {
        &self.pairs
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WilcoxonMethod {
    Exact,
    NormalApprox,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Alternative {
    TwoSided,
    /// First element of each pair tends to exceed the second.
    Greater,
    Less,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WilcoxonResult {
    /// Sum of ranks of positive differences (W+).
    pub statistic: f64,
    pub p_value: f64,
    pub method: WilcoxonMethod,
    /// Sample size after zero-dropping.
    pub n_effective: usize,
}

/// Effective sample size at and below which the exact permutation null is
/// enumerated; larger samples use the normal approximation.
pub const WILCOXON_EXACT_MAX_N: usize = 25;

struct RankedDiffs {
    /// Doubled mid-ranks (integers even under ties), aligned with `positive`.
    doubled_ranks: Vec<u64>,
    positive: Vec<bool>,
}

fn rank_differences(samples: &PairedSamples) -> Result<RankedDiffs, StatsError> {
    let mut diffs: Vec<f64> = samples
        .pairs
        .iter()
        .map(|(a, b)| a - b)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.is_empty() {
        return Err(StatsError::Degenerate(
            "all paired differences are zero".into(),
        ));
    }
    let mut order: Vec<usize> = (0..diffs.len()).collect();
    order.sort_by(|&i, &j| diffs[i].abs().partial_cmp(&diffs[j].abs()).unwrap());
    let mut doubled = vec![0u64; diffs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        // Positions i..=j (0-based) share the mid-rank ((i+1) + (j+1)) / 2;
        // doubled it is (i + j + 2), an integer even for half-ranks.
        let doubled_rank = (i + j + 2) as u64;
        for &idx in &order[i..=j] {
            doubled[idx] = doubled_rank;
        }
        i = j + 1;
    }
    let positive: Vec<bool> = diffs.drain(..).map(|d| d > 0.0).collect();
    Ok(RankedDiffs {
        doubled_ranks: doubled,
        positive,
    })
}

/// Exact permutation distribution of the doubled W+ statistic: counts of
/// sign assignments achieving each doubled rank-sum.
fn exact_counts(doubled_ranks: &[u64]) -> Vec<f64> {
    let total: u64 = doubled_ranks.iter().sum();
    let mut dp = vec![0.0f64; total as usize + 1];
    dp[0] = 1.0;
    for &r in doubled_ranks {
        for s in (r as usize..dp.len()).rev() {
            dp[s] += dp[s - r as usize];
        }
    }
    dp
}

fn exact_p(ranked: &RankedDiffs, alternative: Alternative) -> f64 {
    let w2: u64 = ranked
        .doubled_ranks
        .iter()
        .zip(&ranked.positive)
        .filter(|(_, &pos)| pos)
        .map(|(&r, _)| r)
        .sum();
    let counts = exact_counts(&ranked.doubled_ranks);
    let total = 2f64.powi(ranked.doubled_ranks.len() as i32);
    let p_le: f64 = counts[..=w2 as usize].iter().sum::<f64>() / total;
    let p_ge: f64 = counts[w2 as usize..].iter().sum::<f64>() / total;
    match alternative {
        Alternative::TwoSided => (2.0 * p_le.min(p_ge)).min(1.0),
        Alternative::Greater => p_ge,
        Alternative::Less => p_le,
    }
}

fn approx_p(ranked: &RankedDiffs, alternative: Alternative) -> f64 {
    let n = ranked.doubled_ranks.len() as f64;
    let w_plus: f64 = ranked
        .doubled_ranks
        .iter()
        .zip(&ranked.positive)
        .filter(|(_, &pos)| pos)
        .map(|(&r, _)| r as f64 / 2.0)
        .sum();
    let mu = n * (n + 1.0) / 4.0;
    // W+ = sum r_i B_i with B_i ~ Bernoulli(1/2): variance and fourth
    // cumulant follow from the realized mid-ranks, which also absorbs ties
    // (the variance form equals the usual tie-corrected expression).
    let var: f64 = ranked
        .doubled_ranks
        .iter()
        .map(|&r2| {
            let r = r2 as f64 / 2.0;
            r * r / 4.0
        })
        .sum();
    let sd = var.sqrt();
    if sd == 0.0 {
        return 1.0;
    }
    let kappa4: f64 = ranked
        .doubled_ranks
        .iter()
        .map(|&r2| {
            let r = r2 as f64 / 2.0;
            -r.powi(4) / 8.0
        })
        .sum();
    let gamma2 = kappa4 / (var * var);
    // Edgeworth-corrected upper tail: P(W >= w) with continuity correction.
    let upper_tail = |z: f64| -> f64 {
        let phi = (-z * z / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        (1.0 - normal_cdf(z) + phi * gamma2 / 24.0 * (z * z * z - 3.0 * z)).clamp(0.0, 1.0)
    };
    match alternative {
        Alternative::TwoSided => {
            let num = w_plus - mu;
            if num == 0.0 {
                return 1.0;
            }
            let z = (num.abs() - 0.5) / sd;
            (2.0 * upper_tail(z)).min(1.0)
        }
        Alternative::Greater => upper_tail((w_plus - mu - 0.5) / sd),
        Alternative::Less => 1.0 - upper_tail((w_plus - mu + 0.5) / sd),
    }
}

/// Paired Wilcoxon signed-rank test, two-sided. Zeros are dropped, ties take
/// mid-ranks, and the exact permutation null is enumerated for effective
/// n <= [`WILCOXON_EXACT_MAX_N`].
pub fn wilcoxon_signed_rank(samples: &PairedSamples) -> Result<WilcoxonResult, StatsError> {
    wilcoxon_signed_rank_with(samples, Alternative::TwoSided, None)
}

/// Full-control variant: choose the alternative and optionally force a
/// method (used to compare the approximation against the exact path).
pub fn wilcoxon_signed_rank_with(
    samples: &PairedSamples,
    alternative: Alternative,
    force_method: Option<WilcoxonMethod>,
) -> Result<WilcoxonResult, StatsError> {
    let ranked = rank_differences(samples)?;
    let n = ranked.doubled_ranks.len();
    let method = force_method.unwrap_or(if n <= WILCOXON_EXACT_MAX_N {
        WilcoxonMethod::Exact
    } else {
        WilcoxonMethod::NormalApprox
    });
    let p_value = match method {
        WilcoxonMethod::Exact => exact_p(&ranked, alternative),
        WilcoxonMethod::NormalApprox => approx_p(&ranked, alternative),
    };
    let statistic: f64 = ranked
        .doubled_ranks
        .iter()
        .zip(&ranked.positive)
        .filter(|(_, &pos)| pos)
        .map(|(&r, _)| r as f64 / 2.0)
        .sum();
    Ok(WilcoxonResult {
        statistic,
        p_value,
        method,
        n_effective: n,
    })
}

// ---------------------------------------------------------------------------
// Trace-derived analyses
// ---------------------------------------------------------------------------

/// 1-based position, over committed non-baseline trials, of the first trial
/// whose dice strictly exceeds the baseline; absent when none does.
pub fn first_success_position(record: &ExperimentRecord) -> Option<u64> {
    let m0 = record.baseline_metrics.dice;
    first_success_position_of(&record.committed_dice(), m0)
}

/// Same rule over a plain committed-dice sequence (None = error trial).
pub fn first_success_position_of(dice: &[Option<f64>], m0: f64) -> Option<u64> {
    dice.iter()
        .position(|d| d.is_some_and(|d| d > m0))
        .map(|i| i as u64 + 1)
}

/// Cumulative win curve: for each budget N, the fraction of records whose
/// first success occurred at position <= N.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WinCurve {
    pub points: Vec<(u64, f64)>,
}

pub fn cumulative_win_curve(records: &[ExperimentRecord], budgets: &[u64]) -> WinCurve {
    let fsps: Vec<Option<u64>> = records.iter().map(|r| r.fsp).collect();
    cumulative_win_curve_from_fsps(&fsps, budgets)
}

pub fn cumulative_win_curve_from_fsps(fsps: &[Option<u64>], budgets: &[u64]) -> WinCurve {
    let mut budgets: Vec<u64> = budgets.to_vec();
    budgets.sort_unstable();
    let total = fsps.len().max(1) as f64;
    let points = budgets
        .into_iter()
        .map(|n| {
            let wins = fsps
                .iter()
                .filter(|f| f.is_some_and(|fsp| fsp <= n))
                .count();
            (n, wins as f64 / total)
        })
        .collect();
    WinCurve { points }
}

/// Sample Pearson correlation coefficient.
pub fn pearson_r(xs: &[f64], ys: &[f64]) -> Result<f64, StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::Domain("length mismatch".into()));
    }
    if xs.len() < 2 {
        return Err(StatsError::Domain("need at least two points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(StatsError::Degenerate("zero variance".into()));
    }
    Ok(cov / (vx * vy).sqrt())
}

/// Cross-run win concordance counts over a shared dataset universe.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConcordanceTable {
    pub both: u64,
    pub only_a: u64,
    pub only_b: u64,
    pub neither: u64,
    pub union: u64,
}

pub fn cross_run_concordance(
    wins_a: &BTreeSet<String>,
    wins_b: &BTreeSet<String>,
    universe: &BTreeSet<String>,
) -> Result<ConcordanceTable, StatsError> {
    if !wins_a.is_subset(universe) || !wins_b.is_subset(universe) {
        return Err(StatsError::Domain(
            "win sets must be subsets of the universe".into(),
        ));
    }
    let both = wins_a.intersection(wins_b).count() as u64;
    let only_a = wins_a.difference(wins_b).count() as u64;
    let only_b = wins_b.difference(wins_a).count() as u64;
    let union = both + only_a + only_b;
    let neither = universe.len() as u64 - union;
    Ok(ConcordanceTable {
        both,
        only_a,
        only_b,
        neither,
        union,
    })
}

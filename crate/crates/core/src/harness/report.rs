//! Trend tables and contraction-slope fits over sweep results.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::plan::ResultRow;
use crate::error::{domain, Result};

/// Median of a non-empty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Per-`n` medians over replications.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub n: usize,
    pub cells: usize,
    pub median_prob_true_model: f64,
    pub median_fp_mass: f64,
    pub median_fn_mass: f64,
    pub median_l2_error: f64,
    pub eps_target: f64,
}

pub fn trend_summary(rows: &[ResultRow]) -> Vec<TrendRow> {
    let mut by_n: BTreeMap<usize, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        by_n.entry(r.n).or_default().push(r);
    }
    by_n.into_iter()
        .map(|(n, rs)| {
            let col = |f: fn(&ResultRow) -> f64| median(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            TrendRow {
                n,
                cells: rs.len(),
                median_prob_true_model: col(|r| r.prob_true_model),
                median_fp_mass: col(|r| r.fp_mass),
                median_fn_mass: col(|r| r.fn_mass),
                median_l2_error: col(|r| r.l2_error_of_mean),
                eps_target: rs[0].eps_target,
            }
        })
        .collect()
}

/// Monotonicity of the trend medians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendChecks {
    pub prob_true_non_decreasing: bool,
    pub fp_mass_non_increasing: bool,
    pub prob_true_at_largest_n: f64,
}

pub fn trend_checks(trend: &[TrendRow]) -> TrendChecks {
    let p: Vec<f64> = trend.iter().map(|t| t.median_prob_true_model).collect();
    let fp: Vec<f64> = trend.iter().map(|t| t.median_fp_mass).collect();
    TrendChecks {
        prob_true_non_decreasing: p.windows(2).all(|w| w[1] >= w[0]),
        fp_mass_non_increasing: fp.windows(2).all(|w| w[1] <= w[0]),
        prob_true_at_largest_n: p.last().copied().unwrap_or(f64::NAN),
    }
}

/// Least-squares slope of `log error` against `log n` with a percentile
/// bootstrap interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub confidence: f64,
    pub n_points: usize,
    pub grid_points: usize,
    pub bootstrap: usize,
    /// Slope implied by the minimax rate, when known.
    pub target: Option<f64>,
}

fn ols(points: &[(f64, f64)]) -> (f64, f64) {
    let m = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / m;
    let my = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Fits `log error = c + slope · log n` over all `(n, error)` pairs. The
/// bootstrap resamples replications within each `n`.
pub fn fit_slope(points: &[(usize, f64)], bootstrap: usize, confidence: f64, seed: u64) -> Result<SlopeFit> {
    if points.iter().any(|(n, e)| *n == 0 || !(*e > 0.0 && e.is_finite())) {
        return domain("slope fit needs positive n and positive finite errors");
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return domain(format!("confidence {confidence} must lie in (0, 1)"));
    }
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (n, e) in points {
        groups.entry(*n).or_default().push(e.ln());
    }
    if groups.len() < 3 {
        return domain(format!("slope fit needs at least 3 distinct n, got {}", groups.len()));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|(n, e)| ((*n as f64).ln(), e.ln())).collect();
    let (slope, intercept) = ols(&logs);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slopes = Vec::with_capacity(bootstrap);
    let mut sample = Vec::with_capacity(points.len());
    for _ in 0..bootstrap {
        sample.clear();
        for (n, errs) in &groups {
            let ln_n = (*n as f64).ln();
            for _ in 0..errs.len() {
                sample.push((ln_n, errs[rng.gen_range(0..errs.len())]));
            }
        }
        slopes.push(ols(&sample).0);
    }
    slopes.sort_by(f64::total_cmp);
    let (ci_low, ci_high) = if slopes.is_empty() {
        (slope, slope)
    } else {
        let q = |p: f64| slopes[((p * (slopes.len() - 1) as f64).round() as usize).min(slopes.len() - 1)];
        let tail = 0.5 * (1.0 - confidence);
        (q(tail), q(1.0 - tail))
    };
    Ok(SlopeFit {
        slope,
        intercept,
        ci_low,
        ci_high,
        confidence,
        n_points: points.len(),
        grid_points: groups.len(),
        bootstrap,
        target: None,
    })
}

/// Slope of `log l2_error_of_mean` against `log n` for a result table, with
/// the rate target carried by the rows.
pub fn contraction_slope(rows: &[ResultRow], bootstrap: usize, seed: u64) -> Result<SlopeFit> {
    let points: Vec<(usize, f64)> = rows.iter().map(|r| (r.n, r.l2_error_of_mean)).collect();
    let mut fit = fit_slope(&points, bootstrap, 0.95, seed)?;
    fit.target = rows.first().map(|r| r.target_slope);
    Ok(fit)
}

/// Everything the `report` command emits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hashes: Vec<String>,
    pub trend: Vec<TrendRow>,
    pub checks: TrendChecks,
    pub slope: Option<SlopeFit>,
    pub slope_error: Option<String>,
}

pub fn build_report(rows: &[ResultRow], bootstrap: usize, seed: u64) -> Report {
    let mut hashes: Vec<String> = rows.iter().map(|r| r.config_hash.clone()).collect();
    hashes.sort();
    hashes.dedup();
    let trend = trend_summary(rows);
    let checks = trend_checks(&trend);
    let (slope, slope_error) = match contraction_slope(rows, bootstrap, seed) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Report { config_hashes: hashes, trend, checks, slope, slope_error }
}

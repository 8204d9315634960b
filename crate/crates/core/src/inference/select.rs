//! Decoupled selection: choose the pattern whose Gaussian-marginalized
//! projection of the posterior mean loses least, plus a size penalty.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sampler::ChainTrace;
use super::summary::summarize;
use crate::eigen::DesignSpec;
use crate::error::{domain, Result};
use crate::pattern::SparsityPattern;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    /// Design points at which the projection loss is averaged.
    pub n_outer: usize,
    /// Draws of the excluded coordinates per design point.
    pub n_inner: usize,
    pub seed: u64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self { n_outer: 200, n_inner: 50, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub gamma: SparsityPattern,
    pub loss: f64,
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub gamma: SparsityPattern,
    pub scores: Vec<CandidateScore>,
}

/// Shared draws so every candidate sees the same randomness.
struct Draws {
    outer: Vec<Vec<f64>>,
    inner: Vec<Vec<f64>>,
}

impl Draws {
    fn new(design: &DesignSpec, cfg: &ProjectionConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let outer = (0..cfg.n_outer).map(|_| design.sample(&mut rng)).collect();
        let inner = (0..cfg.n_inner).map(|_| design.sample(&mut rng)).collect();
        Self { outer, inner }
    }
}

fn projection_loss(f: &dyn Fn(&[Vec<f64>]) -> Vec<f64>, base: &[f64], draws: &Draws, gamma: &SparsityPattern) -> f64 {
    let m = draws.inner.len();
    let mut points = Vec::with_capacity(draws.outer.len() * m);
    for x in &draws.outer {
        for z in &draws.inner {
            points.push((0..x.len()).map(|j| if gamma.contains(j) { x[j] } else { z[j] }).collect());
        }
    }
    let values = f(&points);
    base.iter()
        .zip(values.chunks(m))
        .map(|(b, chunk)| (b - chunk.iter().sum::<f64>() / m as f64).powi(2))
        .sum::<f64>()
        / base.len() as f64
}

fn prefer(a: &CandidateScore, b: &CandidateScore) -> bool {
    let tol = 1e-12 * a.objective.abs().max(b.objective.abs());
    if (a.objective - b.objective).abs() > tol {
        return a.objective < b.objective;
    }
    (a.gamma.cardinality(), &a.gamma) < (b.gamma.cardinality(), &b.gamma)
}

/// Minimizes `‖f̄ - f̄_γ‖² + λ J(|γ|)` over `candidates`, where `f̄_γ`
/// averages `f̄` over the excluded coordinates under the design law.
/// `f` evaluates the posterior mean at a batch of points.
pub fn decoupled_select(
    f: &dyn Fn(&[Vec<f64>]) -> Vec<f64>,
    design: &DesignSpec,
    lambda: f64,
    penalty: &dyn Fn(usize) -> f64,
    candidates: &[SparsityPattern],
    cfg: &ProjectionConfig,
) -> Result<Selection> {
    if candidates.is_empty() {
        return domain("decoupled selection needs at least one candidate");
    }
    if !(lambda >= 0.0) {
        return domain(format!("lambda = {lambda} must be non-negative"));
    }
    if cfg.n_outer == 0 || cfg.n_inner == 0 {
        return domain("projection needs positive Monte Carlo sizes");
    }
    if let Some(c) = candidates.iter().find(|c| c.dim() != design.dim) {
        return domain(format!("candidate {c} does not match design dimension {}", design.dim));
    }
    let draws = Draws::new(design, cfg);
    let base = f(&draws.outer);
    let scores: Vec<CandidateScore> = candidates
        .iter()
        .map(|g| {
            let loss = projection_loss(f, &base, &draws, g);
            let pen = if lambda == 0.0 { 0.0 } else { lambda * penalty(g.cardinality()) };
            CandidateScore { gamma: g.clone(), loss, objective: loss + pen }
        })
        .collect();
    let best = scores.iter().fold(&scores[0], |best, s| if prefer(s, best) { s } else { best });
    Ok(Selection { gamma: best.gamma.clone(), scores })
}

/// Every visited pattern plus all sub-patterns of the most visited one
/// (single-coordinate removals when it has more than 12 coordinates).
pub fn default_candidates(traces: &[ChainTrace], burn_in: usize) -> Result<Vec<SparsityPattern>> {
    let summary = summarize(traces, None, burn_in)?;
    let mut set: BTreeSet<SparsityPattern> = BTreeSet::new();
    for t in traces {
        for r in &t.rows[burn_in..] {
            set.insert(r.state.gamma.clone());
        }
    }
    if let Some((top, _)) = summary.top_models.first() {
        let idx: Vec<usize> = top.included().collect();
        if idx.len() <= 12 {
            for mask in 0u32..(1 << idx.len()) {
                let chosen: Vec<usize> = idx.iter().enumerate().filter(|(b, _)| mask >> b & 1 == 1).map(|(_, &j)| j).collect();
                set.insert(SparsityPattern::from_indices(top.dim(), &chosen)?);
            }
        } else {
            for &j in &idx {
                set.insert(top.toggled(j));
            }
        }
    }
    Ok(set.into_iter().collect())
}

//! Posterior summaries: selection frequencies, false-positive and
//! false-negative mass, and the posterior-mean regression function.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::marginal::{conditional_mean, MarginalModel};
use super::sampler::{ChainState, ChainTrace};
use super::Dataset;
use crate::eigen::DesignSpec;
use crate::error::{domain, Result};
use crate::pattern::SparsityPattern;

/// Position of a pattern relative to the true one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelClass {
    True,
    /// Strict superset of the true pattern.
    FalsePositive,
    /// Misses at least one true coordinate.
    FalseNegative,
}

pub fn classify(gamma: &SparsityPattern, gamma_star: &SparsityPattern) -> ModelClass {
    if gamma == gamma_star {
        ModelClass::True
    } else if gamma_star.is_subset_of(gamma) {
        ModelClass::FalsePositive
    } else {
        ModelClass::FalseNegative
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub n_states: usize,
    pub inclusion_probs: Vec<f64>,
    /// Most frequent patterns (hex encoded) with their frequencies.
    pub top_models: Vec<(SparsityPattern, f64)>,
    pub mean_log_a: f64,
    pub acceptance_rate: f64,
    pub prob_true_model: Option<f64>,
    pub fp_mass: Option<f64>,
    pub fn_mass: Option<f64>,
    pub other_mass: Option<f64>,
    pub l2_error_of_mean: Option<f64>,
}

const TOP_MODELS: usize = 10;

fn post_burn_in<'a>(traces: &'a [ChainTrace], burn_in: usize) -> Result<impl Iterator<Item = &'a ChainState> + 'a> {
    if traces.is_empty() {
        return domain("no chains to summarize");
    }
    if let Some(t) = traces.iter().find(|t| burn_in >= t.rows.len()) {
        return domain(format!("burn-in {burn_in} leaves no states in chain {} of length {}", t.chain, t.rows.len()));
    }
    Ok(traces.iter().flat_map(move |t| t.rows[burn_in..].iter().map(|r| &r.state)))
}

/// Frequencies over post-burn-in states of all chains. Truth-relative fields
/// are filled when `gamma_star` is given.
pub fn summarize(traces: &[ChainTrace], gamma_star: Option<&SparsityPattern>, burn_in: usize) -> Result<PosteriorSummary> {
    let mut counts: HashMap<&SparsityPattern, usize> = HashMap::new();
    let mut n = 0usize;
    let mut sum_log_a = 0.0;
    for s in post_burn_in(traces, burn_in)? {
        *counts.entry(&s.gamma).or_default() += 1;
        sum_log_a += s.log_a;
        n += 1;
    }
    let nf = n as f64;
    let dim = traces[0].rows[0].state.gamma.dim();
    let mut inclusion = vec![0.0; dim];
    for (g, c) in &counts {
        for j in g.included() {
            inclusion[j] += *c as f64 / nf;
        }
    }
    let mut top: Vec<(SparsityPattern, f64)> = counts.iter().map(|(g, c)| ((*g).clone(), *c as f64 / nf)).collect();
    top.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cardinality().cmp(&b.0.cardinality())).then_with(|| a.0.cmp(&b.0)));
    top.truncate(TOP_MODELS);
    let (mut t, mut fp, mut fneg) = (0.0, 0.0, 0.0);
    if let Some(star) = gamma_star {
        for (g, c) in &counts {
            let w = *c as f64 / nf;
            match classify(g, star) {
                ModelClass::True => t += w,
                ModelClass::FalsePositive => fp += w,
                ModelClass::FalseNegative => fneg += w,
            }
        }
    }
    let accepted: u64 = traces.iter().flat_map(|t| t.accepted).sum();
    let proposed: u64 = traces.iter().flat_map(|t| t.proposed).sum();
    let truth = gamma_star.is_some();
    Ok(PosteriorSummary {
        n_states: n,
        inclusion_probs: inclusion,
        top_models: top,
        mean_log_a: sum_log_a / nf,
        acceptance_rate: if proposed == 0 { 0.0 } else { accepted as f64 / proposed as f64 },
        prob_true_model: truth.then_some(t),
        fp_mass: truth.then_some(fp),
        fn_mass: truth.then_some(fneg),
        other_mass: truth.then_some((1.0 - t - fp - fneg).max(0.0)),
        l2_error_of_mean: None,
    })
}

/// About `max_states` post-burn-in states, evenly spaced across all chains.
pub fn thin_states(traces: &[ChainTrace], burn_in: usize, max_states: usize) -> Result<Vec<ChainState>> {
    let all: Vec<&ChainState> = post_burn_in(traces, burn_in)?.collect();
    let stride = all.len().div_ceil(max_states.max(1)).max(1);
    Ok(all.into_iter().step_by(stride).cloned().collect())
}

/// Average of per-state Gaussian-process conditional means. Repeated states
/// are fitted once and weighted by multiplicity.
pub struct PosteriorMean {
    data: Arc<Dataset>,
    states: Vec<(SparsityPattern, f64, Vec<f64>, f64)>,
}

impl PosteriorMean {
    pub fn from_states(model: &MarginalModel, states: &[ChainState]) -> Result<Self> {
        if states.is_empty() {
            return domain("posterior mean needs at least one state");
        }
        let mut counts: HashMap<(&SparsityPattern, u64), usize> = HashMap::new();
        let mut order = Vec::new();
        for s in states {
            let key = (&s.gamma, s.log_a.to_bits());
            let c = counts.entry(key).or_insert_with(|| {
                order.push(key);
                0
            });
            *c += 1;
        }
        let total = states.len() as f64;
        let mut ws = model.workspace();
        let fitted = order
            .into_iter()
            .map(|(g, bits)| {
                let a = f64::from_bits(bits).exp();
                let w = counts[&(g, bits)] as f64 / total;
                Ok((g.clone(), a, model.fit(&mut ws, g, a)?.alpha, w))
            })
            .collect::<Result<_>>()?;
        Ok(Self { data: model.data().clone(), states: fitted })
    }

    /// Number of distinct states.
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn predict(&self, points: &[Vec<f64>]) -> Vec<f64> {
        let mut acc = vec![0.0; points.len()];
        for (g, a, alpha, w) in &self.states {
            for (s, v) in acc.iter_mut().zip(conditional_mean(&self.data, g, *a, alpha, points)) {
                *s += w * v;
            }
        }
        acc
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.predict(&[x.to_vec()])[0]
    }
}

/// Posterior-mean prediction from thinned post-burn-in states.
pub fn posterior_mean_predict(
    traces: &[ChainTrace],
    data: Arc<Dataset>,
    burn_in: usize,
    max_states: usize,
    points: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let model = MarginalModel::new(data);
    let states = thin_states(traces, burn_in, max_states)?;
    Ok(PosteriorMean::from_states(&model, &states)?.predict(points))
}

/// `‖f̂ - f‖` in `L2(Q)` by Monte Carlo over fresh design draws.
pub fn l2_distance(
    estimate: &dyn Fn(&[Vec<f64>]) -> Vec<f64>,
    truth: &dyn Fn(&[f64]) -> f64,
    design: &DesignSpec,
    n_points: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec<f64>> = (0..n_points).map(|_| design.sample(&mut rng)).collect();
    let pred = estimate(&points);
    let mse = points.iter().zip(&pred).map(|(p, f)| (f - truth(p)).powi(2)).sum::<f64>() / n_points as f64;
    mse.sqrt()
}

/// Writes traces as CSV with columns `chain,iter,gamma,log_a,log_marginal`;
/// `gamma` is the hex encoding of the pattern.
pub fn write_trace_csv<W: Write>(traces: &[ChainTrace], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["chain", "iter", "gamma", "log_a", "log_marginal"])?;
    for t in traces {
        for r in &t.rows {
            w.write_record([
                t.chain.to_string(),
                r.iter.to_string(),
                r.state.gamma.to_hex(),
                format!("{:e}", r.state.log_a),
                format!("{:e}", r.state.log_marginal),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

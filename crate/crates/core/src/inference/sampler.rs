//! Metropolis–Hastings over `(γ, log a)` with add, delete, swap and rescale
//! moves.

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::IteratorRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::marginal::{MarginalModel, Workspace};
use super::mh::{mh_step, Position, Proposal, Target};
use super::Dataset;
use crate::error::{Error, Result};
use crate::pattern::SparsityPattern;
use crate::prior::{log_pattern_prior, rescaling_log_density_of_log, size_prior_log_pmf, PriorConfig, RescalingPriorConfig};

/// Largest sample size accepted by [`mcmc_run`].
pub const MAX_FIT_N: usize = 2000;

/// Relative frequencies of the four moves.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoveMix {
    pub add: f64,
    pub delete: f64,
    pub swap: f64,
    pub rescale: f64,
}

impl Default for MoveMix {
    fn default() -> Self {
        Self { add: 0.25, delete: 0.25, swap: 0.2, rescale: 0.3 }
    }
}

impl MoveMix {
    fn validate(&self) -> Result<()> {
        let all = [self.add, self.delete, self.swap, self.rescale];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) || all.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("move weights must be non-negative with a positive sum".into()));
        }
        Ok(())
    }

    fn normalized(&self) -> [f64; 4] {
        let s = self.add + self.delete + self.swap + self.rescale;
        [self.add / s, self.delete / s, self.swap / s, self.rescale / s]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub iters: usize,
    pub chains: usize,
    pub seed: u64,
    pub moves: MoveMix,
    /// Standard deviation of the random walk on `log a`.
    pub rescale_step: f64,
    /// Starting pattern; all coordinates when absent.
    pub initial_gamma: Option<SparsityPattern>,
    pub initial_a: f64,
    /// Recompute the cached log marginal of the current state this often.
    pub audit_every: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            iters: 10_000,
            chains: 4,
            seed: 0,
            moves: MoveMix::default(),
            rescale_step: 0.3,
            initial_gamma: None,
            initial_a: 2.0,
            audit_every: 1000,
        }
    }
}

/// Sampler state with its cached terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub gamma: SparsityPattern,
    pub log_a: f64,
    pub log_marginal: f64,
    pub log_prior: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub state: ChainState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainTrace {
    pub chain: usize,
    pub rows: Vec<TraceRow>,
    pub accepted: [u64; 4],
    pub proposed: [u64; 4],
}

impl ChainTrace {
    pub fn acceptance_rate(&self) -> f64 {
        let a: u64 = self.accepted.iter().sum();
        let p: u64 = self.proposed.iter().sum();
        if p == 0 {
            0.0
        } else {
            a as f64 / p as f64
        }
    }
}

/// Quantization of `log a` in the marginal-likelihood cache key.
const CACHE_QUANTUM: f64 = 1e-12;

fn cache_key(gamma: &SparsityPattern, log_a: f64) -> (SparsityPattern, i64) {
    (gamma.clone(), (log_a / CACHE_QUANTUM).round() as i64)
}

/// The posterior over `(γ, log a)` up to a constant.
pub struct ModelPosterior<'m> {
    model: &'m MarginalModel,
    ws: Workspace,
    log_pmf: Vec<f64>,
    rescaling: RescalingPriorConfig,
    cache: HashMap<(SparsityPattern, i64), f64>,
    evaluations: u64,
}

impl<'m> ModelPosterior<'m> {
    pub fn new(model: &'m MarginalModel, prior: &PriorConfig) -> Result<Self> {
        let data = model.data();
        let log_pmf = size_prior_log_pmf(&prior.sparsity(data.dim(), data.n()))?;
        Ok(Self {
            model,
            ws: model.workspace(),
            log_pmf,
            rescaling: prior.rescaling()?,
            cache: HashMap::new(),
            evaluations: 0,
        })
    }

    /// Log prior of `(γ, log a)`. The empty pattern uses the
    /// one-dimensional rescaling law as a pseudo-prior for `a`.
    pub fn log_prior(&self, gamma: &SparsityPattern, log_a: f64) -> Result<f64> {
        let pg = log_pattern_prior(&self.log_pmf, gamma);
        if pg == f64::NEG_INFINITY {
            return Ok(pg);
        }
        Ok(pg + rescaling_log_density_of_log(&self.rescaling, gamma.cardinality().max(1), log_a)?)
    }

    pub fn log_marginal(&mut self, gamma: &SparsityPattern, log_a: f64) -> Result<f64> {
        let key = cache_key(gamma, log_a);
        if let Some(v) = self.cache.get(&key) {
            return Ok(*v);
        }
        let v = self.model.log_marginal(&mut self.ws, gamma, log_a.exp())?;
        self.evaluations += 1;
        self.cache.insert(key, v);
        Ok(v)
    }

    /// Marginal likelihood evaluations that missed the cache.
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    pub fn state(&mut self, gamma: SparsityPattern, log_a: f64) -> Result<ChainState> {
        let log_prior = self.log_prior(&gamma, log_a)?;
        let log_marginal =
            if log_prior == f64::NEG_INFINITY { f64::NEG_INFINITY } else { self.log_marginal(&gamma, log_a)? };
        Ok(ChainState { gamma, log_a, log_marginal, log_prior })
    }

    fn audit(&mut self, s: &ChainState) -> Result<()> {
        let fresh = self.model.log_marginal(&mut self.ws, &s.gamma, s.log_a.exp())?;
        if (fresh - s.log_marginal).abs() > 1e-8 * (1.0 + fresh.abs()) {
            return Err(Error::Numerical(format!(
                "cached log marginal {} drifted from recomputed {fresh} at γ = {}",
                s.log_marginal, s.gamma
            )));
        }
        Ok(())
    }
}

impl Target for ModelPosterior<'_> {
    type State = ChainState;

    fn log_density(&mut self, s: &ChainState) -> Result<f64> {
        let filled = self.state(s.gamma.clone(), s.log_a)?;
        Ok(filled.log_marginal + filled.log_prior)
    }
}

/// Which move produced the last proposal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Move {
    Add,
    Delete,
    Swap,
    Rescale,
}

/// The add/delete/swap/rescale kernel. Proposed states carry the cached terms
/// of the current state until the target refreshes them.
pub struct ModelProposal {
    weights: [f64; 4],
    step: f64,
    pub last: Move,
}

impl ModelProposal {
    pub fn new(mix: &MoveMix, step: f64) -> Result<Self> {
        mix.validate()?;
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::Config(format!("rescale step {step} must be positive")));
        }
        Ok(Self { weights: mix.normalized(), step, last: Move::Rescale })
    }
}

impl Proposal<ChainState> for ModelProposal {
    fn propose<R: Rng + ?Sized>(&mut self, cur: &ChainState, rng: &mut R) -> (ChainState, f64) {
        let u: f64 = rng.gen();
        let w = self.weights;
        let mv = if u < w[0] {
            Move::Add
        } else if u < w[0] + w[1] {
            Move::Delete
        } else if u < w[0] + w[1] + w[2] {
            Move::Swap
        } else {
            Move::Rescale
        };
        self.last = mv;
        let d = cur.gamma.dim();
        let k = cur.gamma.cardinality();
        let mut next = cur.clone();
        let mut log_q = 0.0;
        match mv {
            Move::Add if k < d => {
                let j = cur.gamma.excluded().choose(rng).expect("an excluded coordinate exists");
                next.gamma.set(j, true);
                // Reverse is a delete among k+1; forward an add among d-k.
                log_q = (w[1] / (k + 1) as f64).ln() - (w[0] / (d - k) as f64).ln();
            }
            Move::Delete if k > 0 => {
                let j = cur.gamma.included().choose(rng).expect("an included coordinate exists");
                next.gamma.set(j, false);
                log_q = (w[0] / (d - k + 1) as f64).ln() - (w[1] / k as f64).ln();
            }
            Move::Swap if k > 0 && k < d => {
                let i = cur.gamma.included().choose(rng).expect("an included coordinate exists");
                let j = cur.gamma.excluded().choose(rng).expect("an excluded coordinate exists");
                next.gamma.set(i, false);
                next.gamma.set(j, true);
            }
            Move::Rescale => {
                let z: f64 = rng.sample(StandardNormal);
                next.log_a += self.step * z;
            }
            // Impossible move: propose staying put.
            _ => {}
        }
        (next, log_q)
    }
}

/// Runs one chain. `stream` selects an independent random stream.
pub fn run_chain(
    model: &MarginalModel,
    prior: &PriorConfig,
    cfg: &McmcConfig,
    stream: u64,
) -> Result<ChainTrace> {
    if cfg.iters == 0 {
        return Err(Error::Config("iters must be at least 1".into()));
    }
    let mut target = ModelPosterior::new(model, prior)?;
    let mut proposal = ModelProposal::new(&cfg.moves, cfg.rescale_step)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let dim = model.data().dim();
    let gamma0 = cfg.initial_gamma.clone().unwrap_or_else(|| SparsityPattern::full(dim));
    if gamma0.dim() != dim {
        return Err(Error::Config(format!("initial pattern has dimension {}, data {dim}", gamma0.dim())));
    }
    let state0 = target.state(gamma0, cfg.initial_a.ln())?;
    if !(state0.log_prior + state0.log_marginal).is_finite() {
        return Err(Error::Config(format!(
            "initial state γ = {}, a = {} has zero posterior density",
            state0.gamma, cfg.initial_a
        )));
    }
    let mut pos = Position { log_density: state0.log_marginal + state0.log_prior, state: state0 };
    let mut rows = Vec::with_capacity(cfg.iters);
    let mut accepted = [0u64; 4];
    let mut proposed = [0u64; 4];
    for iter in 0..cfg.iters {
        let ok = mh_step(&mut target, &mut proposal, &mut pos, &mut rng)?;
        let idx = proposal.last as usize;
        proposed[idx] += 1;
        if ok {
            accepted[idx] += 1;
            // Served from the cache.
            pos.state = target.state(pos.state.gamma.clone(), pos.state.log_a)?;
        }
        if cfg.audit_every > 0 && (iter + 1) % cfg.audit_every == 0 {
            target.audit(&pos.state)?;
        }
        rows.push(TraceRow { iter, state: pos.state.clone() });
    }
    log::debug!(
        "chain {stream}: {} marginal evaluations, acceptance {:.3}",
        target.evaluations(),
        accepted.iter().sum::<u64>() as f64 / cfg.iters as f64
    );
    Ok(ChainTrace { chain: stream as usize, rows, accepted, proposed })
}

/// Runs `cfg.chains` chains in parallel on independent streams.
pub fn mcmc_run(data: Arc<Dataset>, prior: &PriorConfig, cfg: &McmcConfig) -> Result<Vec<ChainTrace>> {
    if data.n() > MAX_FIT_N {
        return Err(Error::Config(format!("n = {} exceeds the dense-fit limit {MAX_FIT_N}", data.n())));
    }
    let model = MarginalModel::new(data);
    (0..cfg.chains as u64)
        .into_par_iter()
        .map(|c| run_chain(&model, prior, cfg, c))
        .collect()
}

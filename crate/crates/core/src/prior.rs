//! Hierarchical prior: model size, a uniform pattern of that size, a
//! rescaling level, and a Gaussian path given both.

use std::sync::Arc;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::eigen::{compute_constants, enumerate_spectrum, sample_path, DesignSpec, SeriesFunction};
use crate::error::{domain, Error, Result};
use crate::pattern::SparsityPattern;
use crate::special::ln_binomial;

/// Lower edge of the monotone branch of `a ↦ a^d log^{d+1} a` used for the
/// rescaling prior, whatever `1/ξ` is.
pub const MIN_RESCALING_FLOOR: f64 = 1.1;

/// Family of the model-size prior `q_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SizePrior {
    /// Uniform over sizes `d < n^{c / log log n}`.
    Cap {
        #[serde(default = "one")]
        cap_exponent: f64,
    },
    /// `q(d) ∝ d^{s-1} exp(-d^s)` with `s = k log log n`.
    Penalized { k: f64 },
    /// A fixed probability vector over `0..=d_n`, renormalized.
    Explicit { pmf: Vec<f64> },
}

fn one() -> f64 {
    1.0
}

impl Default for SizePrior {
    fn default() -> Self {
        SizePrior::Penalized { k: 1.0 }
    }
}

/// Size prior bound to a dimension `d_n` and sample size `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityPriorConfig {
    pub size_prior: SizePrior,
    pub d_n: usize,
    pub n: usize,
}

impl SparsityPriorConfig {
    pub fn new(size_prior: SizePrior, d_n: usize, n: usize) -> Self {
        Self { size_prior, d_n, n }
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Unnormalized `log q_n(d)` for `d = 0..=d_n`.
fn size_log_weights(cfg: &SparsityPriorConfig) -> Result<Vec<f64>> {
    if cfg.d_n == 0 {
        return domain("d_n must be at least 1");
    }
    if cfg.n < 3 {
        return domain(format!("n = {} must be at least 3 for log log n", cfg.n));
    }
    let loglog = (cfg.n as f64).ln().ln();
    let dims = 0..=cfg.d_n;
    let w: Vec<f64> = match &cfg.size_prior {
        SizePrior::Cap { cap_exponent } => {
            if !(*cap_exponent > 0.0) {
                return domain("cap_exponent must be positive");
            }
            let cap = (cfg.n as f64).powf(cap_exponent / loglog);
            dims.map(|d| if (d as f64) < cap { 0.0 } else { f64::NEG_INFINITY }).collect()
        }
        SizePrior::Penalized { k } => {
            let s = k * loglog;
            if !(s >= 1.0) {
                return domain(format!("penalized prior needs k log log n ≥ 1, got {s:.4}"));
            }
            dims.map(|d| match d {
                0 if s > 1.0 => f64::NEG_INFINITY,
                0 => 0.0,
                _ => {
                    let ld = (d as f64).ln();
                    (s - 1.0) * ld - (s * ld).exp()
                }
            })
            .collect()
        }
        SizePrior::Explicit { pmf } => {
            if pmf.len() != cfg.d_n + 1 {
                return domain(format!("explicit pmf has {} entries, expected {}", pmf.len(), cfg.d_n + 1));
            }
            if pmf.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
                return domain("explicit pmf entries must be finite and non-negative");
            }
            pmf.iter().map(|p| p.ln()).collect()
        }
    };
    if log_sum_exp(&w) == f64::NEG_INFINITY {
        return domain("size prior has no mass");
    }
    Ok(w)
}

/// Normalized `log q_n(d)` for `d = 0..=d_n`.
pub fn size_prior_log_pmf(cfg: &SparsityPriorConfig) -> Result<Vec<f64>> {
    let w = size_log_weights(cfg)?;
    let z = log_sum_exp(&w);
    Ok(w.into_iter().map(|x| x - z).collect())
}

pub fn size_prior_pmf(cfg: &SparsityPriorConfig) -> Result<Vec<f64>> {
    Ok(size_prior_log_pmf(cfg)?.into_iter().map(f64::exp).collect())
}

/// `log P(Γ = γ) = log q_n(|γ|) - log C(d_n, |γ|)` given a precomputed log pmf.
pub fn log_pattern_prior(log_pmf: &[f64], gamma: &SparsityPattern) -> f64 {
    let d = gamma.cardinality();
    log_pmf[d] - ln_binomial(gamma.dim(), d)
}

fn draw_size<R: Rng>(pmf: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (d, p) in pmf.iter().enumerate() {
        acc += p;
        if u < acc {
            return d;
        }
    }
    pmf.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

fn draw_gamma<R: Rng>(d_n: usize, pmf: &[f64], rng: &mut R) -> SparsityPattern {
    let size = draw_size(pmf, rng);
    let mut chosen = index::sample(rng, d_n, size).into_vec();
    chosen.sort_unstable();
    SparsityPattern::from_indices(d_n, &chosen).expect("indices are in range")
}

pub fn sample_gamma(cfg: &SparsityPriorConfig, seed: u64) -> Result<SparsityPattern> {
    let pmf = size_prior_pmf(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(draw_gamma(cfg.d_n, &pmf, &mut rng))
}

/// Law of `A` with `A^d log^{d+1}(A) ~ Exp(rate)`, truncated below.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescalingPriorConfig {
    pub rate: f64,
    pub xi: f64,
}

impl RescalingPriorConfig {
    pub fn new(rate: f64, xi: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return domain(format!("rate = {rate} must be positive"));
        }
        if !(xi > 0.0 && xi.is_finite()) {
            return domain(format!("xi = {xi} must be positive"));
        }
        Ok(Self { rate, xi })
    }

    /// Truncation point `max(1/ξ, 1.1)`.
    pub fn lower_limit(&self) -> f64 {
        (1.0 / self.xi).max(MIN_RESCALING_FLOOR)
    }
}

/// `log h(a)` for `h(a) = a^d log^{d+1} a`, `a > 1`.
fn log_transform(d: usize, log_a: f64) -> f64 {
    let d = d as f64;
    d * log_a + (d + 1.0) * log_a.ln()
}

fn check_dim(d: usize) -> Result<()> {
    if d == 0 {
        return domain("rescaling prior needs d ≥ 1");
    }
    Ok(())
}

pub fn rescaling_log_density(cfg: &RescalingPriorConfig, d: usize, a: f64) -> Result<f64> {
    check_dim(d)?;
    let lo = cfg.lower_limit();
    if !(a > lo) {
        return Ok(f64::NEG_INFINITY);
    }
    if a.is_infinite() {
        return Ok(f64::NEG_INFINITY);
    }
    let la = a.ln();
    let h = log_transform(d, la).exp();
    let h0 = log_transform(d, lo.ln()).exp();
    if h.is_infinite() {
        return Ok(f64::NEG_INFINITY);
    }
    let df = d as f64;
    let log_jac = (df - 1.0) * la + df * la.ln() + (df * la + df + 1.0).ln();
    Ok(cfg.rate.ln() - cfg.rate * (h - h0) + log_jac)
}

/// Density of `log A`, the scale the sampler moves on.
pub fn rescaling_log_density_of_log(cfg: &RescalingPriorConfig, d: usize, log_a: f64) -> Result<f64> {
    Ok(rescaling_log_density(cfg, d, log_a.exp())? + log_a)
}

/// Solve `d u + (d+1) log u = target` for `u = log a > 0`.
fn invert_log_transform(d: usize, target: f64) -> Result<f64> {
    let df = d as f64;
    let g = |u: f64| df * u + (df + 1.0) * u.ln() - target;
    let (mut lo, mut hi) = (f64::MIN_POSITIVE, 1.0);
    while g(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Numerical(format!("rescaling inverse transform has no bracket for {target}")));
        }
    }
    let mut u = hi;
    for _ in 0..200 {
        let v = g(u);
        if v > 0.0 {
            hi = u;
        } else {
            lo = u;
        }
        if v.abs() <= 1e-13 * (1.0 + target.abs()) || hi - lo <= 1e-15 * hi {
            return Ok(u);
        }
        let newton = u - v / (df + (df + 1.0) / u);
        u = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    Err(Error::Numerical(format!("rescaling inverse transform did not converge; bracket [{lo}, {hi}]")))
}

fn draw_rescaling<R: Rng>(cfg: &RescalingPriorConfig, d: usize, rng: &mut R) -> Result<f64> {
    let lo = cfg.lower_limit();
    let h0 = log_transform(d, lo.ln()).exp();
    let exp = Exp::new(cfg.rate).map_err(|e| Error::Config(e.to_string()))?;
    loop {
        let e = h0 + exp.sample(rng);
        let a = invert_log_transform(d, e.ln())?.exp();
        if a > lo {
            return Ok(a);
        }
    }
}

pub fn sample_rescaling(cfg: &RescalingPriorConfig, d: usize, seed: u64) -> Result<f64> {
    check_dim(d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    draw_rescaling(cfg, d, &mut rng)
}

/// The prior block of a configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub size_prior: SizePrior,
    pub rescaling: RescalingBlock,
    pub xi: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescalingBlock {
    #[serde(default = "one")]
    pub rate: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { size_prior: SizePrior::default(), rescaling: RescalingBlock { rate: 1.0 }, xi: 1.0 }
    }
}

impl PriorConfig {
    pub fn sparsity(&self, d_n: usize, n: usize) -> SparsityPriorConfig {
        SparsityPriorConfig::new(self.size_prior.clone(), d_n, n)
    }

    pub fn rescaling(&self) -> Result<RescalingPriorConfig> {
        RescalingPriorConfig::new(self.rescaling.rate, self.xi)
    }
}

/// A function drawn from the prior.
#[derive(Clone, Debug)]
pub enum PriorFunction {
    /// Empty pattern: a constant with a standard normal value.
    Constant(f64),
    Series(SeriesFunction),
}

impl PriorFunction {
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        match self {
            PriorFunction::Constant(c) => Ok(*c),
            PriorFunction::Series(f) => f.eval(x),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PriorDraw {
    pub gamma: SparsityPattern,
    pub a: f64,
    pub function: PriorFunction,
}

/// Hierarchical draw `Γ → A → f`. For an empty pattern the rescaling level is
/// drawn from the one-dimensional law and does not enter the function.
pub fn sample_prior_function(
    sp: &SparsityPriorConfig,
    rs: &RescalingPriorConfig,
    design: &DesignSpec,
    budget: usize,
    seed: u64,
) -> Result<PriorDraw> {
    if design.dim != sp.d_n {
        return domain(format!("design dimension {} differs from d_n = {}", design.dim, sp.d_n));
    }
    let pmf = size_prior_pmf(sp)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = draw_gamma(sp.d_n, &pmf, &mut rng);
    let a = draw_rescaling(rs, gamma.cardinality().max(1), &mut rng)?;
    let path_seed: u64 = rng.gen();
    let function = if gamma.is_empty() {
        PriorFunction::Constant(rng.sample(StandardNormal))
    } else {
        let c = compute_constants(design.xi, a)?;
        let spectrum = Arc::new(enumerate_spectrum(&gamma, &c, budget)?);
        PriorFunction::Series(sample_path(spectrum, path_seed))
    };
    Ok(PriorDraw { gamma, a, function })
}

//! Centered and shifted small-ball probabilities of the truncated series
//! `W = Σ Z_j √μ_j ψ_j`, and the concentration function built from them.
//!
//! Probabilities that plain Monte Carlo can resolve are estimated directly.
//! Smaller ones use exponential tilting of the weighted chi-square sum, which
//! stays accurate far below `1/n_samples`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::rkhs::{check_entropy_hypotheses, decentering, Ellipsoid};

/// Largest tail mass allowed, as a fraction of `ε^2`.
pub const TAIL_FRACTION: f64 = 0.01;

const BLOCK: usize = 1 << 14;
const PILOT_SAMPLES: usize = 10_000;
const PILOT_MIN_SUCCESSES: u64 = 100;
const CENSOR_Z: f64 = 3.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum McMethod {
    Plain,
    Tilted,
    /// Plain when a pilot run sees enough hits, tilted otherwise.
    #[default]
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub method: McMethod,
}

impl McConfig {
    pub fn new(n_samples: usize, seed: u64) -> Self {
        Self { n_samples, seed, method: McMethod::Auto }
    }

    pub fn with_method(mut self, method: McMethod) -> Self {
        self.method = method;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmallBallEstimate {
    pub epsilon: f64,
    pub prob: f64,
    pub prob_std_err: f64,
    pub neg_log_prob: f64,
    /// Standard error of `neg_log_prob`.
    pub mc_std_err: f64,
    pub n_samples: usize,
    pub truncation: usize,
    pub tail_bound: f64,
    /// Bound on the shift of `neg_log_prob` caused by truncation: twice the
    /// first-order saddle-point effect `t * tail_bound`.
    pub tail_tolerance: f64,
    pub method: McMethod,
    /// Set when no sample hit the ball; `prob` is then an upper confidence
    /// bound and `neg_log_prob` a lower one.
    pub censored: bool,
}

#[derive(Clone, Copy, Default)]
struct Moments {
    n: u64,
    hits: u64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn merge(self, o: Self) -> Self {
        Self { n: self.n + o.n, hits: self.hits + o.hits, sum: self.sum + o.sum, sum_sq: self.sum_sq + o.sum_sq }
    }
}

/// Per-coordinate Gaussian law of `Z_j` and the log normalizer under tilt `t`.
struct Tilt {
    t: f64,
    log_mgf: f64,
    mean: Vec<f64>,
    sd: Vec<f64>,
}

fn tilted_mean_sum(axes: &[f64], f: &[f64], t: f64) -> f64 {
    axes.iter()
        .zip(f)
        .map(|(mu, fj)| {
            let p = 1.0 + 2.0 * t * mu;
            mu / p + fj * fj / (p * p)
        })
        .sum()
}

fn build_tilt(axes: &[f64], f: &[f64], eps2: f64) -> Tilt {
    let mut t = 0.0;
    if tilted_mean_sum(axes, f, 0.0) > eps2 {
        let (mut lo, mut hi) = (0.0, 1.0 / eps2);
        while tilted_mean_sum(axes, f, hi) > eps2 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if tilted_mean_sum(axes, f, mid) > eps2 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-14 * hi {
                break;
            }
        }
        t = 0.5 * (lo + hi);
    }
    let mut log_mgf = 0.0;
    let mut mean = Vec::with_capacity(axes.len());
    let mut sd = Vec::with_capacity(axes.len());
    for (mu, fj) in axes.iter().zip(f) {
        let p = 1.0 + 2.0 * t * mu;
        log_mgf += -0.5 * p.ln() - t * fj * fj / p;
        mean.push(2.0 * t * mu.sqrt() * fj / p);
        sd.push(1.0 / p.sqrt());
    }
    Tilt { t, log_mgf, mean, sd }
}

fn run_blocks(n_samples: usize, seed: u64, stream_offset: u64, block: impl Fn(&mut ChaCha8Rng, usize) -> Moments + Sync) -> Moments {
    let n_blocks = n_samples.div_ceil(BLOCK);
    (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream_offset + b as u64);
            let len = BLOCK.min(n_samples - b * BLOCK);
            block(&mut rng, len)
        })
        .reduce(Moments::default, Moments::merge)
}

fn plain_moments(sqrt_axes: &[f64], f: &[f64], eps2: f64, n: usize, seed: u64, offset: u64) -> Moments {
    run_blocks(n, seed, offset, |rng, len| {
        let mut hits = 0;
        for _ in 0..len {
            let mut s = 0.0;
            for (r, fj) in sqrt_axes.iter().zip(f) {
                let z: f64 = StandardNormal.sample(rng);
                s += (r * z - fj).powi(2);
                if s >= eps2 {
                    break;
                }
            }
            if s < eps2 {
                hits += 1;
            }
        }
        Moments { n: len as u64, hits, sum: hits as f64, sum_sq: hits as f64 }
    })
}

fn tilted_moments(sqrt_axes: &[f64], f: &[f64], tilt: &Tilt, eps2: f64, n: usize, seed: u64) -> Moments {
    run_blocks(n, seed, 1 << 32, |rng, len| {
        let mut m = Moments { n: len as u64, ..Moments::default() };
        for _ in 0..len {
            let mut s = 0.0;
            for ((r, fj), (mean, sd)) in sqrt_axes.iter().zip(f).zip(tilt.mean.iter().zip(&tilt.sd)) {
                let z: f64 = StandardNormal.sample(rng);
                s += (r * (mean + sd * z) - fj).powi(2);
            }
            if s < eps2 {
                // Weight relative to exp(log_mgf + t ε^2), which bounds it.
                let w = (tilt.t * (s - eps2)).exp();
                m.hits += 1;
                m.sum += w;
                m.sum_sq += w * w;
            }
        }
        m
    })
}

/// Wilson half-width at `z = 1`, used as the standard error of a proportion.
fn wilson_se(hits: u64, n: u64) -> f64 {
    let n = n as f64;
    let p = hits as f64 / n;
    (p * (1.0 - p) / n + 0.25 / (n * n)).sqrt() / (1.0 + 1.0 / n)
}

fn wilson_upper(hits: u64, n: u64, z: f64) -> f64 {
    let n = n as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    (p + z2 / (2.0 * n) + z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt()) / (1.0 + z2 / n)
}

fn estimate(ell: &Ellipsoid, target: &[f64], epsilon: f64, cfg: &McConfig) -> Result<SmallBallEstimate> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return domain(format!("epsilon = {epsilon} must be positive and finite"));
    }
    if cfg.n_samples == 0 {
        return domain("n_samples must be positive");
    }
    let eps2 = epsilon * epsilon;
    if ell.tail() > TAIL_FRACTION * eps2 {
        return domain(format!(
            "truncation tail {:.3e} exceeds ε^2/100 = {:.3e}; enlarge the spectrum",
            ell.tail(),
            TAIL_FRACTION * eps2
        ));
    }
    if target.len() > ell.truncation() {
        return domain("target has more coefficients than the spectrum");
    }
    let axes = ell.axes();
    let sqrt_axes: Vec<f64> = axes.iter().map(|m| m.sqrt()).collect();
    let mut f = target.to_vec();
    f.resize(axes.len(), 0.0);

    let method = match cfg.method {
        McMethod::Auto => {
            let pilot = plain_moments(&sqrt_axes, &f, eps2, PILOT_SAMPLES.min(cfg.n_samples), cfg.seed, 1 << 48);
            if pilot.hits >= PILOT_MIN_SUCCESSES {
                McMethod::Plain
            } else {
                McMethod::Tilted
            }
        }
        m => m,
    };
    let n = cfg.n_samples as u64;
    let tilt = build_tilt(axes, &f, eps2);
    let base = SmallBallEstimate {
        epsilon,
        prob: 0.0,
        prob_std_err: 0.0,
        neg_log_prob: 0.0,
        mc_std_err: 0.0,
        n_samples: cfg.n_samples,
        truncation: axes.len(),
        tail_bound: ell.tail(),
        tail_tolerance: 2.0 * tilt.t * ell.tail(),
        method,
        censored: false,
    };
    let (prob, prob_se, log_prob) = match method {
        McMethod::Plain | McMethod::Auto => {
            let m = plain_moments(&sqrt_axes, &f, eps2, cfg.n_samples, cfg.seed, 0);
            if m.hits == 0 {
                let upper = wilson_upper(0, n, CENSOR_Z);
                return Ok(SmallBallEstimate { prob: upper, neg_log_prob: -upper.ln(), censored: true, ..base });
            }
            let p = m.hits as f64 / n as f64;
            (p, wilson_se(m.hits, n), p.ln())
        }
        McMethod::Tilted => {
            let m = tilted_moments(&sqrt_axes, &f, &tilt, eps2, cfg.n_samples, cfg.seed);
            let log_scale = tilt.log_mgf + tilt.t * eps2;
            if m.hits == 0 {
                let log_upper = wilson_upper(0, n, CENSOR_Z).ln() + log_scale;
                let upper = log_upper.exp();
                return Ok(SmallBallEstimate { prob: upper, neg_log_prob: -log_upper, censored: true, ..base });
            }
            let nf = n as f64;
            let mean = m.sum / nf;
            let var = (m.sum_sq / nf - mean * mean).max(0.0) / (nf - 1.0).max(1.0);
            let log_p = mean.ln() + log_scale;
            (log_p.exp(), var.sqrt() * log_scale.exp(), log_p)
        }
    };
    let neg_log_prob = (-log_p_clamped(log_prob)).max(0.0);
    let mc_std_err = if prob > 0.0 { prob_se / prob } else { f64::INFINITY };
    Ok(SmallBallEstimate { prob, prob_std_err: prob_se, neg_log_prob, mc_std_err, ..base })
}

fn log_p_clamped(log_p: f64) -> f64 {
    log_p.min(0.0)
}

/// Monte Carlo estimate of `P(‖W‖ < ε)`.
pub fn centered_small_ball(ell: &Ellipsoid, epsilon: f64, cfg: &McConfig) -> Result<SmallBallEstimate> {
    estimate(ell, &[], epsilon, cfg)
}

/// Monte Carlo estimate of `P(‖W - f‖ < ε)` for `f` given by its coefficients.
pub fn shifted_small_ball(ell: &Ellipsoid, target: &[f64], epsilon: f64, cfg: &McConfig) -> Result<SmallBallEstimate> {
    estimate(ell, target, epsilon, cfg)
}

/// Constants of the centered-exponent envelopes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentConstants {
    pub c: f64,
    pub c_prime: f64,
}

impl Default for ExponentConstants {
    fn default() -> Self {
        Self { c: 1.0, c_prime: 1.0 }
    }
}

/// Envelopes on `-log P(‖W‖ < ε)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentBounds {
    pub lower: f64,
    pub upper: f64,
}

fn ln_gamma_factorial(g: usize) -> f64 {
    crate::special::ln_factorial(g)
}

/// Shape `a^g log(1/ε)^g / g!` of the lower envelope, before its constant.
fn lower_shape(a: f64, g: usize, epsilon: f64) -> f64 {
    let gf = g as f64;
    (gf * a.ln() + gf * (-epsilon.ln()).ln() - ln_gamma_factorial(g)).exp()
}

/// Shape `a^g log(a/ε)^{g+1} / g!` of the upper envelope.
fn upper_shape(a: f64, g: usize, epsilon: f64) -> f64 {
    let gf = g as f64;
    (gf * a.ln() + (gf + 1.0) * (a / epsilon).ln().ln() - ln_gamma_factorial(g)).exp()
}

pub fn centered_exponent_bounds(ell: &Ellipsoid, epsilon: f64, k: &ExponentConstants) -> Result<ExponentBounds> {
    let (c, g) = ell
        .origin()
        .ok_or_else(|| Error::Domain("exponent bounds need an ellipsoid built from a kernel spectrum".into()))?;
    check_entropy_hypotheses(&c, g, epsilon)?;
    if c.a <= epsilon {
        return Err(Error::Hypothesis(format!("a = {} must exceed ε = {epsilon}", c.a)));
    }
    Ok(ExponentBounds {
        lower: k.c_prime * lower_shape(c.a, g, epsilon),
        upper: k.c * upper_shape(c.a, g, epsilon),
    })
}

/// One pilot point: `(a, |γ|, ε, observed -log P)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PilotPoint {
    pub a: f64,
    pub gamma_size: usize,
    pub epsilon: f64,
    pub neg_log_prob: f64,
}

/// Largest `C'` and smallest `C` for which every pilot value sits inside the
/// envelopes.
pub fn calibrate_exponent_constants(pilot: &[PilotPoint]) -> Result<ExponentConstants> {
    if pilot.is_empty() {
        return domain("calibration needs at least one pilot point");
    }
    let mut c_prime = f64::INFINITY;
    let mut c: f64 = 0.0;
    for p in pilot {
        if p.a <= p.epsilon || p.epsilon >= 1.0 {
            return domain("pilot points need ε < min(1, a)");
        }
        c_prime = c_prime.min(p.neg_log_prob / lower_shape(p.a, p.gamma_size, p.epsilon));
        c = c.max(p.neg_log_prob / upper_shape(p.a, p.gamma_size, p.epsilon));
    }
    Ok(ExponentConstants { c, c_prime })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationValue {
    pub epsilon: f64,
    pub decentering: f64,
    pub centered_exponent: f64,
    pub phi: f64,
    pub centered: SmallBallEstimate,
    pub bounds: Option<ExponentBounds>,
}

/// Concentration function: exact decentering plus the Monte Carlo centered
/// exponent. Envelopes are attached when their hypotheses hold.
pub fn concentration(
    ell: &Ellipsoid,
    target: &[f64],
    epsilon: f64,
    cfg: &McConfig,
    constants: &ExponentConstants,
) -> Result<ConcentrationValue> {
    let dec = decentering(ell, target, epsilon)?;
    let centered = centered_small_ball(ell, epsilon, cfg)?;
    let bounds = centered_exponent_bounds(ell, epsilon, constants).ok();
    Ok(ConcentrationValue {
        epsilon,
        decentering: dec.inf_sq_norm,
        centered_exponent: centered.neg_log_prob,
        phi: dec.inf_sq_norm + centered.neg_log_prob,
        centered,
        bounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::{compute_constants, enumerate_spectrum, truncation_for_tail};
    use crate::pattern::SparsityPattern;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn kernel_ellipsoid(a: f64, g: usize, eps: f64) -> Ellipsoid {
        let c = compute_constants(1.0, a).unwrap();
        let j = truncation_for_tail(g, &c, TAIL_FRACTION * eps * eps * 0.5).unwrap();
        Ellipsoid::from_spectrum(&enumerate_spectrum(&SparsityPattern::full(g), &c, j).unwrap())
    }

    #[test]
    fn single_axis_normal_cdf() {
        let ell = Ellipsoid::from_axes(vec![1.0], 0.0).unwrap();
        let est = centered_small_ball(&ell, 1.0, &McConfig::new(200_000, 3)).unwrap();
        let truth = 2.0 * Normal::new(0.0, 1.0).unwrap().cdf(1.0) - 1.0;
        assert_eq!(est.method, McMethod::Plain);
        assert!((est.prob - truth).abs() < 3.0 * est.prob_std_err, "{} vs {truth}", est.prob);
    }

    #[test]
    fn tilted_matches_exponential_oracle() {
        // 0.5 χ²_2 ~ Exp(1): P(S < ε^2) = 1 - e^{-ε^2}.
        let ell = Ellipsoid::from_axes(vec![0.5, 0.5], 0.0).unwrap();
        for eps in [1.0, 0.1, 0.01] {
            let cfg = McConfig::new(100_000, 11).with_method(McMethod::Tilted);
            let est = centered_small_ball(&ell, eps, &cfg).unwrap();
            let truth = -(-eps * eps as f64).exp_m1();
            assert!((est.prob - truth).abs() < 3.0 * est.prob_std_err, "ε={eps}: {} vs {truth}", est.prob);
        }
    }

    #[test]
    fn huge_ball_has_full_mass() {
        let ell = kernel_ellipsoid(1.0, 1, 1.0);
        let est = centered_small_ball(&ell, 100.0, &McConfig::new(10_000, 1)).unwrap();
        assert!(est.prob >= 1.0 - 1e-6);
        assert!(est.neg_log_prob.abs() < 1e-6);
    }

    #[test]
    fn zero_shift_equals_centered() {
        let ell = kernel_ellipsoid(2.0, 1, 0.2);
        let cfg = McConfig::new(50_000, 5);
        let a = centered_small_ball(&ell, 0.2, &cfg).unwrap();
        let b = shifted_small_ball(&ell, &[0.0, 0.0], 0.2, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn anderson_inequality() {
        let ell = kernel_ellipsoid(2.0, 1, 0.3);
        let cfg = McConfig::new(100_000, 9);
        let c = centered_small_ball(&ell, 0.3, &cfg).unwrap();
        let s = shifted_small_ball(&ell, &[0.2, -0.1, 0.05], 0.3, &cfg).unwrap();
        assert!(s.prob <= c.prob + 3.0 * (c.prob_std_err + s.prob_std_err));
    }

    #[test]
    fn tail_precondition_enforced() {
        let ell = Ellipsoid::from_axes(vec![0.5], 0.5).unwrap();
        assert!(centered_small_ball(&ell, 0.5, &McConfig::new(100, 0)).is_err());
    }

    #[test]
    fn censored_when_no_hits() {
        let ell = Ellipsoid::from_axes(vec![1.0; 20], 0.0).unwrap();
        let cfg = McConfig::new(1000, 2).with_method(McMethod::Plain);
        let est = centered_small_ball(&ell, 0.1, &cfg).unwrap();
        assert!(est.censored);
        assert!(est.prob > 0.0 && est.prob < 0.01);
    }

    #[test]
    fn deterministic_given_seed() {
        let ell = kernel_ellipsoid(4.0, 1, 0.1);
        let cfg = McConfig::new(40_000, 77);
        assert_eq!(centered_small_ball(&ell, 0.1, &cfg).unwrap(), centered_small_ball(&ell, 0.1, &cfg).unwrap());
    }

    #[test]
    fn exponent_monotone_in_epsilon_and_a() {
        let cfg = McConfig::new(50_000, 4);
        let ell = kernel_ellipsoid(2.0, 1, 0.05);
        let coarse = centered_small_ball(&ell, 0.2, &cfg).unwrap();
        let fine = centered_small_ball(&ell, 0.05, &cfg).unwrap();
        assert!(fine.neg_log_prob > coarse.neg_log_prob);
        let rough = centered_small_ball(&kernel_ellipsoid(4.0, 1, 0.05), 0.05, &cfg).unwrap();
        assert!(rough.neg_log_prob > fine.neg_log_prob);
    }

    #[test]
    fn truncation_robustness() {
        let c = compute_constants(1.0, 2.0).unwrap();
        let gamma = SparsityPattern::full(1);
        let eps = 0.1;
        let j = truncation_for_tail(1, &c, TAIL_FRACTION * eps * eps).unwrap();
        let cfg = McConfig::new(100_000, 8);
        let short = centered_small_ball(&Ellipsoid::from_spectrum(&enumerate_spectrum(&gamma, &c, j).unwrap()), eps, &cfg).unwrap();
        let long = centered_small_ball(&Ellipsoid::from_spectrum(&enumerate_spectrum(&gamma, &c, 2 * j).unwrap()), eps, &cfg).unwrap();
        let tol = 3.0 * (short.mc_std_err + long.mc_std_err) + short.tail_tolerance;
        assert!((short.neg_log_prob - long.neg_log_prob).abs() <= tol);
    }

    #[test]
    fn exponent_bounds_shapes() {
        let k = ExponentConstants::default();
        let b2 = centered_exponent_bounds(&kernel_ellipsoid(2.0, 1, 0.1), 0.1, &k).unwrap();
        let b4 = centered_exponent_bounds(&kernel_ellipsoid(4.0, 1, 0.1), 0.1, &k).unwrap();
        assert!(b2.lower <= b2.upper);
        assert!((b4.lower / b2.lower - 2.0).abs() < 1e-12);
    }

    #[test]
    fn calibration_brackets_pilot() {
        let pilot = [
            PilotPoint { a: 2.0, gamma_size: 1, epsilon: 0.1, neg_log_prob: 4.0 },
            PilotPoint { a: 4.0, gamma_size: 1, epsilon: 0.05, neg_log_prob: 12.0 },
        ];
        let k = calibrate_exponent_constants(&pilot).unwrap();
        for p in pilot {
            assert!(k.c_prime * lower_shape(p.a, 1, p.epsilon) <= p.neg_log_prob * (1.0 + 1e-12));
            assert!(k.c * upper_shape(p.a, 1, p.epsilon) >= p.neg_log_prob * (1.0 - 1e-12));
        }
    }

    #[test]
    fn concentration_zero_target_and_closed_form() {
        let ell = kernel_ellipsoid(2.0, 1, 0.2);
        let cfg = McConfig::new(20_000, 1);
        let k = ExponentConstants::default();
        let zero = concentration(&ell, &[], 0.2, &cfg, &k).unwrap();
        assert_eq!(zero.phi, zero.centered_exponent);
        let v = concentration(&ell, &[1.0], 0.2, &cfg, &k).unwrap();
        let mu = ell.axes()[0];
        // One coefficient: ν = μ ε / (1 - ε), decentering = (1 - ε)^2 / μ.
        assert!((v.decentering - (1.0f64 - 0.2).powi(2) / mu).abs() < 1e-10);
        let v2 = concentration(&ell, &[1.0], 0.4, &cfg, &k).unwrap();
        assert!(v2.phi <= v.phi);
    }
}

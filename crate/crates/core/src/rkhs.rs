//! The RKHS unit ball as an ℓ2 ellipsoid: metric-entropy bounds, the exact
//! decentering optimizer and its analytic envelopes, and the Lambert W
//! function used when optimizing bounds over rescaling levels.
//!
//! All analytic bounds are returned on the log scale: the exponents involved
//! (`exp(C ε^{-2/β})` and the like) overflow any float for desk-scale `ε`.

use serde::{Deserialize, Serialize};

use crate::eigen::{degree_multiplicity, EigenConstants, EigenSpectrum, SeriesFunction};
use crate::error::{domain, Error, Result};
use crate::special::binomial;

/// Constant `C_H` in the entropy-lemma hypothesis `ε^{-2} ≥ C_H (a ξ)^{|γ|}`.
pub const ENTROPY_CONSTANT: f64 = 1.0;

/// Accepted range for `(log(1/ε) - (|γ|/4) log(V/(2 v1))) / log(1/ε)`.
pub const ENTROPY_RATIO_RANGE: (f64, f64) = (0.5, 2.0);

const DECENTERING_MAX_STEPS: usize = 200;

/// Axes `μ_j` of the ellipsoid `{θ : Σ θ_j^2 / μ_j ≤ 1}`.
#[derive(Clone, Debug)]
pub struct Ellipsoid {
    axes: Vec<f64>,
    tail: f64,
    origin: Option<(EigenConstants, usize)>,
}

impl Ellipsoid {
    pub fn from_spectrum(spectrum: &EigenSpectrum) -> Self {
        Self {
            axes: spectrum.eigenvalues(),
            tail: spectrum.tail(),
            origin: Some((spectrum.constants, spectrum.gamma.cardinality())),
        }
    }

    /// An ellipsoid with arbitrary positive, weakly decreasing axes; `tail`
    /// is the trace mass beyond the listed axes.
    pub fn from_axes(axes: Vec<f64>, tail: f64) -> Result<Self> {
        if axes.is_empty() {
            return domain("ellipsoid needs at least one axis");
        }
        if axes.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
            return domain("ellipsoid axes must be positive and finite");
        }
        if axes.windows(2).any(|w| w[1] > w[0]) {
            return domain("ellipsoid axes must be weakly decreasing");
        }
        if !(tail >= 0.0) {
            return domain("ellipsoid tail mass must be non-negative");
        }
        Ok(Self { axes, tail, origin: None })
    }

    pub fn axes(&self) -> &[f64] {
        &self.axes
    }

    pub fn truncation(&self) -> usize {
        self.axes.len()
    }

    pub fn tail(&self) -> f64 {
        self.tail
    }

    /// `(constants, |γ|)` when built from a kernel spectrum.
    pub fn origin(&self) -> Option<(EigenConstants, usize)> {
        self.origin
    }

    fn require_origin(&self) -> Result<(EigenConstants, usize)> {
        self.origin
            .ok_or_else(|| Error::Domain("operation needs an ellipsoid built from a kernel spectrum".into()))
    }
}

/// Principal branch of Lambert W: the `w ≥ 0` with `w e^w = y`.
pub fn lambert_w(y: f64) -> Result<f64> {
    if !(y >= 0.0) || y.is_infinite() {
        return domain(format!("lambert_w needs a finite y ≥ 0, got {y}"));
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    let mut w = if y < 3.0 {
        y.ln_1p() * 0.8
    } else {
        let l1 = y.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    };
    for _ in 0..64 {
        let ew = w.exp();
        let f = w * ew - y;
        let fp = ew * (w + 1.0);
        let step = f / (fp - (w + 2.0) * f / (2.0 * w + 2.0));
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * w.abs().max(f64::MIN_POSITIVE) {
            return Ok(w);
        }
    }
    Err(Error::Numerical(format!("lambert_w({y}) did not converge")))
}

/// Bounds on `log N(H_1, ε, L2)` for the RKHS unit ball.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub epsilon: f64,
    pub m_star: f64,
    pub tau: u128,
    pub log_upper: f64,
    pub log_lower: f64,
}

/// Checks the entropy-lemma hypotheses for `(a, ξ, |γ|, ε)`.
pub fn check_entropy_hypotheses(c: &EigenConstants, gamma_size: usize, epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return domain(format!("epsilon = {epsilon} must lie in (0, 1)"));
    }
    if gamma_size == 0 {
        return Err(Error::EmptyModel);
    }
    let g = gamma_size as f64;
    let log_inv = -epsilon.ln();
    let scale = c.a * c.xi;
    if epsilon.powi(-2) < ENTROPY_CONSTANT * scale.powf(g) {
        return Err(Error::Hypothesis(format!(
            "ε^-2 = {:.4e} < C_H (aξ)^|γ| = {:.4e}",
            epsilon.powi(-2),
            ENTROPY_CONSTANT * scale.powf(g)
        )));
    }
    if scale * log_inv <= g {
        return Err(Error::Hypothesis(format!("aξ log(1/ε) = {:.4} ≤ |γ| = {gamma_size}", scale * log_inv)));
    }
    let ratio = (log_inv - g / 4.0 * (c.big_v / (2.0 * c.v1)).ln()) / log_inv;
    if ratio < ENTROPY_RATIO_RANGE.0 || ratio > ENTROPY_RATIO_RANGE.1 {
        return Err(Error::Hypothesis(format!(
            "log(1/ε) - (|γ|/4) log(V/2v1) is not comparable to log(1/ε) (ratio {ratio:.3})"
        )));
    }
    Ok(())
}

/// `m*` solving `(2 v1 / V)^{|γ|/2} B^m = ε^2`.
pub fn m_star(c: &EigenConstants, gamma_size: usize, epsilon: f64) -> f64 {
    let g = gamma_size as f64;
    (2.0 * (-epsilon.ln()) - g / 2.0 * (c.big_v / (2.0 * c.v1)).ln()) / (-c.b.ln())
}

/// Sum of the first `count` log-eigenvalues in canonical order.
fn sum_log_mu(c: &EigenConstants, gamma_size: usize, count: u128) -> f64 {
    let mut left = count as f64;
    let mut sum = 0.0;
    let mut m = 0usize;
    while left > 0.0 {
        let take = degree_multiplicity(gamma_size, m).min(left);
        sum += take * c.ln_mu(gamma_size, m);
        left -= take;
        m += 1;
    }
    sum
}

pub fn entropy_bounds(ell: &Ellipsoid, epsilon: f64) -> Result<EntropyEstimate> {
    let (c, g) = ell.require_origin()?;
    check_entropy_hypotheses(&c, g, epsilon)?;
    let m_star = m_star(&c, g, epsilon);
    if m_star <= 0.0 {
        return Err(Error::Hypothesis(format!("m* = {m_star:.4} is not positive")));
    }
    let floor = m_star.floor() as usize;
    let tau = binomial(floor + g, g);
    let ln2 = std::f64::consts::LN_2;
    let n = tau as f64 + 1.0;
    let log_upper = 2.0 * n * ln2 + n * (-epsilon.ln()) + 0.5 * sum_log_mu(&c, g, tau + 1);
    let log_lower = n * ln2;
    Ok(EntropyEstimate { epsilon, m_star, tau, log_upper, log_lower })
}

/// Exact minimizer of `Σ θ_j^2 / μ_j` subject to `Σ (θ_j - f_j)^2 ≤ ε^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecenteringResult {
    pub epsilon: f64,
    pub inf_sq_norm: f64,
    /// Shrinkage level `ν` in `θ_j = f_j μ_j / (μ_j + ν)`.
    pub multiplier: f64,
    pub coeffs: Vec<f64>,
}

fn residual(axes: &[f64], f: &[f64], nu: f64) -> f64 {
    f.iter().zip(axes).map(|(fj, mu)| (fj * nu / (mu + nu)).powi(2)).sum()
}

fn residual_slope(axes: &[f64], f: &[f64], nu: f64) -> f64 {
    f.iter().zip(axes).map(|(fj, mu)| fj * fj * 2.0 * nu * mu / (mu + nu).powi(3)).sum()
}

/// Decentering term of the concentration function for a target given by its
/// coefficients in the ellipsoid's basis.
pub fn decentering(ell: &Ellipsoid, target: &[f64], epsilon: f64) -> Result<DecenteringResult> {
    if !(epsilon > 0.0) {
        return domain(format!("epsilon = {epsilon} must be positive"));
    }
    if target.len() > ell.axes.len() {
        return domain(format!(
            "target has {} coefficients but the ellipsoid only {} axes",
            target.len(),
            ell.axes.len()
        ));
    }
    let axes = &ell.axes[..target.len()];
    let eps2 = epsilon * epsilon;
    let norm2: f64 = target.iter().map(|f| f * f).sum();
    if norm2 <= eps2 {
        return Ok(DecenteringResult { epsilon, inf_sq_norm: 0.0, multiplier: 0.0, coeffs: vec![0.0; target.len()] });
    }
    let rho = (eps2 / norm2).sqrt();
    let mu_max = target
        .iter()
        .zip(axes)
        .filter(|(f, _)| **f != 0.0)
        .map(|(_, mu)| *mu)
        .fold(0.0, f64::max);
    let (mut lo, mut hi) = (0.0, mu_max * rho / (1.0 - rho));
    // Guard against rounding in the one-coefficient bound.
    while residual(axes, target, hi) < eps2 {
        hi *= 2.0;
    }
    let mut nu = 0.5 * (lo + hi);
    let mut converged = false;
    for _ in 0..DECENTERING_MAX_STEPS {
        let r = residual(axes, target, nu) - eps2;
        if r.abs() <= 1e-14 * eps2 {
            converged = true;
            break;
        }
        if r > 0.0 {
            hi = nu;
        } else {
            lo = nu;
        }
        if hi - lo <= 1e-15 * hi {
            // Stay on the feasible side.
            nu = lo;
            converged = true;
            break;
        }
        let slope = residual_slope(axes, target, nu);
        let newton = nu - r / slope;
        nu = if slope > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "decentering root-find did not converge; bracket [{lo:.6e}, {hi:.6e}]"
        )));
    }
    let coeffs: Vec<f64> = target.iter().zip(axes).map(|(f, mu)| f * mu / (mu + nu)).collect();
    let inf_sq_norm = coeffs.iter().zip(axes).map(|(t, mu)| t * t / mu).sum();
    Ok(DecenteringResult { epsilon, inf_sq_norm, multiplier: nu, coeffs })
}

pub fn decentering_series(ell: &Ellipsoid, target: &SeriesFunction, epsilon: f64) -> Result<DecenteringResult> {
    decentering(ell, &target.coeffs, epsilon)
}

/// Sobolev order `β`, limiting regularity `α`, and intrinsic dimension `d0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessSpec {
    pub beta: f64,
    pub alpha: f64,
    pub d0: usize,
}

impl SmoothnessSpec {
    /// Requires `β > d0/2` and `β < α < β(1 + 1/d0)`.
    pub fn new(beta: f64, alpha: f64, d0: usize) -> Result<Self> {
        if !(beta > d0 as f64 / 2.0) {
            return domain(format!("β = {beta} must exceed d0/2 = {}", d0 as f64 / 2.0));
        }
        Self::new_at_boundary(beta, alpha, d0)
    }

    /// Like [`SmoothnessSpec::new`] but allows `β = d0/2`.
    pub fn new_at_boundary(beta: f64, alpha: f64, d0: usize) -> Result<Self> {
        if d0 == 0 {
            return domain("d0 must be at least 1");
        }
        if !(beta >= d0 as f64 / 2.0 && beta > 0.0) {
            return domain(format!("β = {beta} must be at least d0/2 = {}", d0 as f64 / 2.0));
        }
        let upper = beta * (1.0 + 1.0 / d0 as f64);
        if !(alpha > beta && alpha < upper) {
            return domain(format!("α = {alpha} must lie in ({beta}, {upper})"));
        }
        Ok(Self { beta, alpha, d0 })
    }

    /// Minimax exponent `β / (2β + d0)`.
    pub fn rate_exponent(&self) -> f64 {
        self.beta / (2.0 * self.beta + self.d0 as f64)
    }
}

/// Configurable constants of the analytic decentering envelopes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeConstants {
    pub c: f64,
    pub c_prime: f64,
    /// Envelopes are only claimed for `ε < eps0`.
    pub eps0: f64,
}

impl Default for EnvelopeConstants {
    fn default() -> Self {
        Self { c: 1.0, c_prime: 1.0, eps0: 1.0 }
    }
}

/// A bound on the log scale together with the Fourier cutoff used to build it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogBound {
    pub log_value: f64,
    pub fourier_cutoff: f64,
}

/// Upper envelope `C (2√π)^{d0} a^{d0} exp(C ε^{-2/β} / a^2)` on the
/// decentering of a Sobolev-`β` truth, with `C = sobolev_norm^2`.
pub fn decentering_upper_bound(
    a: f64,
    spec: &SmoothnessSpec,
    sobolev_norm: f64,
    epsilon: f64,
    eps0: f64,
) -> Result<LogBound> {
    if !(a > 0.0 && sobolev_norm > 0.0 && epsilon > 0.0) {
        return domain("a, sobolev_norm and epsilon must be positive");
    }
    if epsilon >= eps0 {
        return domain(format!("epsilon = {epsilon} must be below ε0 = {eps0}"));
    }
    let c = sobolev_norm * sobolev_norm;
    let d0 = spec.d0 as f64;
    let log_value = c.ln()
        + d0 * (2.0 * std::f64::consts::PI.sqrt()).ln()
        + d0 * a.ln()
        + c * epsilon.powf(-2.0 / spec.beta) / (a * a);
    Ok(LogBound { log_value, fourier_cutoff: epsilon.powf(-1.0 / spec.beta) })
}

/// Lower envelope `C ε^2 (c_ξ a)^{|γ|} exp(C' ε^{-2/α} min(ξ^2, a^{-2}))`,
/// `c_ξ = ξ/√2`, on the decentering under a false-positive pattern.
pub fn decentering_lower_bound(
    a: f64,
    gamma_size: usize,
    spec: &SmoothnessSpec,
    xi: f64,
    epsilon: f64,
    constants: &EnvelopeConstants,
) -> Result<LogBound> {
    if !(a > 0.0 && xi > 0.0 && epsilon > 0.0) {
        return domain("a, xi and epsilon must be positive");
    }
    if epsilon >= constants.eps0 {
        return domain(format!("epsilon = {epsilon} must be below ε0 = {}", constants.eps0));
    }
    if gamma_size <= spec.d0 {
        return domain(format!("|γ| = {gamma_size} must exceed d0 = {} for a false-positive pattern", spec.d0));
    }
    let g = gamma_size as f64;
    let log_value = constants.c.ln()
        + 2.0 * epsilon.ln()
        + g * (xi / std::f64::consts::SQRT_2 * a).ln()
        + constants.c_prime * epsilon.powf(-2.0 / spec.alpha) * (xi * xi).min(1.0 / (a * a));
    Ok(LogBound { log_value, fourier_cutoff: epsilon.powf(-1.0 / spec.alpha) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::{compute_constants, enumerate_spectrum};
    use crate::pattern::SparsityPattern;
    use proptest::prelude::*;

    fn unit_ellipsoid(g: usize, a: f64, budget: usize) -> Ellipsoid {
        let c = compute_constants(1.0, a).unwrap();
        Ellipsoid::from_spectrum(&enumerate_spectrum(&SparsityPattern::full(g), &c, budget).unwrap())
    }

    #[test]
    fn lambert_w_fixed_points() {
        assert_eq!(lambert_w(0.0).unwrap(), 0.0);
        assert!((lambert_w(std::f64::consts::E).unwrap() - 1.0).abs() < 1e-15);
        let y = 2.0 * 2f64.exp();
        assert!((y - 14.77811).abs() < 1e-5);
        assert!((lambert_w(y).unwrap() - 2.0).abs() < 1e-14);
        assert!(lambert_w(-0.1).is_err());
    }

    proptest! {
        #[test]
        fn lambert_w_inverts(log_y in -20.0f64..300.0) {
            let y = log_y.exp();
            let w = lambert_w(y).unwrap();
            prop_assert!(((w * w.exp() - y) / y).abs() <= 1e-12);
        }
    }

    #[test]
    fn entropy_example() {
        let ell = unit_ellipsoid(1, 1.0, 20);
        let e = entropy_bounds(&ell, 0.05).unwrap();
        // B = 1/2 and V/(2 v1) = 4.
        let oracle = (2.0 * 20f64.ln() - 0.5 * 4f64.ln()) / 2f64.ln();
        assert!((e.m_star - oracle).abs() < 1e-12, "{}", e.m_star);
        assert!((e.m_star - 7.6448).abs() < 1e-3);
        assert_eq!(e.tau, 8);
        assert!((e.log_lower - 9.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!(e.log_lower <= e.log_upper);
    }

    #[test]
    fn entropy_hypothesis_violations() {
        let ell = unit_ellipsoid(1, 1.0, 5);
        assert!(matches!(entropy_bounds(&ell, 0.6), Err(Error::Hypothesis(_))));
        let ell = unit_ellipsoid(3, 0.5, 5);
        assert!(matches!(entropy_bounds(&ell, 0.1), Err(Error::Hypothesis(_))));
        let generic = Ellipsoid::from_axes(vec![1.0, 0.5], 0.0).unwrap();
        assert!(entropy_bounds(&generic, 0.1).is_err());
    }

    #[test]
    fn entropy_monotone_in_epsilon() {
        let ell = unit_ellipsoid(2, 1.0, 5);
        let mut prev: Option<EntropyEstimate> = None;
        for k in 4..=12 {
            let e = entropy_bounds(&ell, 2f64.powi(-k)).unwrap();
            assert!(e.log_lower <= e.log_upper);
            if let Some(p) = prev {
                assert!(e.log_lower > p.log_lower);
                assert!(e.log_upper > p.log_upper);
            }
            prev = Some(e);
        }
    }

    #[test]
    fn decentering_origin_feasible() {
        let ell = Ellipsoid::from_axes(vec![0.5, 0.25], 0.0).unwrap();
        let r = decentering(&ell, &[0.1, 0.1], 0.5).unwrap();
        assert_eq!(r.inf_sq_norm, 0.0);
        assert_eq!(r.multiplier, 0.0);
    }

    #[test]
    fn decentering_single_coefficient() {
        let ell = Ellipsoid::from_axes(vec![0.5], 0.0).unwrap();
        let r = decentering(&ell, &[1.0], 0.5).unwrap();
        assert!((r.multiplier - 0.5).abs() < 1e-12);
        assert!((r.coeffs[0] - 0.5).abs() < 1e-12);
        assert!((r.inf_sq_norm - 0.5).abs() < 1e-12);
    }

    #[test]
    fn decentering_kkt() {
        let ell = unit_ellipsoid(2, 2.0, 30);
        let f: Vec<f64> = (0..30).map(|j| 1.0 / (1.0 + j as f64)).collect();
        let r = decentering(&ell, &f, 0.1).unwrap();
        let resid: f64 = r.coeffs.iter().zip(&f).map(|(t, f)| (t - f).powi(2)).sum();
        assert!(resid <= 0.01 + 1e-10);
        assert!((r.multiplier * (0.01 - resid)).abs() <= 1e-8);
    }

    #[test]
    fn decentering_monotone_in_epsilon() {
        let ell = unit_ellipsoid(1, 1.5, 25);
        let f: Vec<f64> = (0..25).map(|j| 0.8f64.powi(j)).collect();
        let mut eps = 0.8;
        let mut prev = decentering(&ell, &f, eps).unwrap().inf_sq_norm;
        for _ in 0..8 {
            eps /= 2.0;
            let cur = decentering(&ell, &f, eps).unwrap().inf_sq_norm;
            assert!(cur >= prev);
            prev = cur;
        }
    }

    proptest! {
        #[test]
        fn decentering_non_increasing_in_axes(
            axes in proptest::collection::vec(0.01f64..1.0, 1..8),
            f in proptest::collection::vec(-1.0f64..1.0, 8),
            which in 0usize..8,
            eps in 0.05f64..0.5,
        ) {
            let mut axes = axes;
            axes.sort_by(|a, b| b.total_cmp(a));
            let n = axes.len();
            let f = &f[..n];
            let base = decentering(&Ellipsoid::from_axes(axes.clone(), 0.0).unwrap(), f, eps).unwrap();
            let i = which % n;
            let mut bigger = axes.clone();
            bigger[i] *= 1.5;
            // Keep the ordering requirement by comparing against an unordered copy.
            let ell = Ellipsoid { axes: bigger, tail: 0.0, origin: None };
            let grown = decentering(&ell, f, eps).unwrap();
            prop_assert!(grown.inf_sq_norm <= base.inf_sq_norm * (1.0 + 1e-10) + 1e-14);
        }
    }

    #[test]
    fn upper_envelope_value() {
        let spec = SmoothnessSpec::new(1.0, 1.2, 1).unwrap();
        let b = decentering_upper_bound(2.0, &spec, 1.0, 0.1, 1.0).unwrap();
        let expect = (4.0 * std::f64::consts::PI.sqrt()).ln() + 25.0;
        assert!((b.log_value - expect).abs() < 1e-12);
        assert!((b.fourier_cutoff - 10.0).abs() < 1e-12);
        let coarser = decentering_upper_bound(2.0, &spec, 1.0, 0.2, 1.0).unwrap();
        assert!(coarser.log_value <= b.log_value);
    }

    #[test]
    fn lower_envelope_value() {
        let spec = SmoothnessSpec::new(1.2, 1.5, 2).unwrap();
        let b = decentering_lower_bound(1.0, 3, &spec, 1.0, 0.1, &EnvelopeConstants::default()).unwrap();
        let expect = 2.0 * 0.1f64.ln() + 3.0 * (1.0 / 2f64.sqrt()).ln() + 0.1f64.powf(-4.0 / 3.0);
        assert!((b.log_value - expect).abs() < 1e-12);
        assert!(decentering_lower_bound(1.0, 2, &spec, 1.0, 0.1, &EnvelopeConstants::default()).is_err());
    }

    #[test]
    fn lower_envelope_saturates_in_a() {
        let spec = SmoothnessSpec::new(1.2, 1.5, 2).unwrap();
        let k = EnvelopeConstants::default();
        let eps: f64 = 0.1;
        for a in [1e3, 1e6] {
            let b = decentering_lower_bound(a, 3, &spec, 0.5, eps, &k).unwrap();
            let poly = 2.0 * eps.ln() + 3.0 * (0.5 / 2f64.sqrt() * a).ln();
            let exponent = b.log_value - poly;
            let floor = eps.powf(-2.0 / 1.5) * (1.0 / (a * a));
            assert!((exponent - floor).abs() < 1e-9);
        }
        // Small a: the min picks ξ^2.
        let b = decentering_lower_bound(0.1, 3, &spec, 0.5, eps, &k).unwrap();
        let poly = 2.0 * eps.ln() + 3.0 * (0.5 / 2f64.sqrt() * 0.1).ln();
        assert!((b.log_value - poly - eps.powf(-4.0 / 3.0) * 0.25).abs() < 1e-9);
    }

    #[test]
    fn smoothness_window() {
        assert!(SmoothnessSpec::new(1.0, 1.4, 2).is_err());
        assert!(SmoothnessSpec::new_at_boundary(1.0, 1.4, 2).is_ok());
        assert!(SmoothnessSpec::new(1.5, 1.4, 2).is_err());
        assert!(SmoothnessSpec::new(1.5, 2.3, 2).is_err());
        assert!(SmoothnessSpec::new(1.5, 2.0, 2).is_ok());
    }
}

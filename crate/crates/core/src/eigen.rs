//! Karhunen–Loève expansion of the rescaled squared-exponential kernel under
//! an isotropic Gaussian design `N(0, xi^2 I)`.
//!
//! The univariate kernel `exp(-a^2 (s - t)^2)` has eigenvalues
//! `sqrt(2 v1 / V) B^j` and Hermite-type eigenfunctions; the kernel restricted
//! to the coordinates selected by a [`SparsityPattern`] is the tensor product of
//! univariate factors, so its eigenvalues are indexed by multi-indices and only
//! depend on their total degree.

use std::f64::consts::{E, PI};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::pattern::SparsityPattern;
use crate::special::{ln_binomial, orthonormal_hermite};

/// Largest univariate eigenfunction index that [`eigenfunction_eval`] accepts.
pub const MAX_HERMITE_DEGREE: usize = 512;

/// Hard cap on spectrum sizes produced by the truncation helper.
pub const MAX_TRUNCATION: usize = 5_000_000;

/// Design measure `Q = N(0, xi^2 I_dim)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub dim: usize,
    pub xi: f64,
}

impl DesignSpec {
    /// Validated design; requires `xi^2 > 2/e`.
    pub fn new(dim: usize, xi: f64) -> Result<Self> {
        if xi * xi <= 2.0 / E {
            return domain(format!("design variance xi^2 = {} must exceed 2/e", xi * xi));
        }
        Self::new_unchecked(dim, xi)
    }

    /// Design without the `xi^2 > 2/e` requirement (still needs `xi > 0`).
    pub fn new_unchecked(dim: usize, xi: f64) -> Result<Self> {
        if dim == 0 {
            return domain("design dimension must be at least 1");
        }
        if !(xi > 0.0 && xi.is_finite()) {
            return domain(format!("design scale xi = {xi} must be positive"));
        }
        Ok(Self { dim, xi })
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim).map(|_| self.xi * rng.sample::<f64, _>(StandardNormal)).collect()
    }
}

/// Constants of the univariate expansion at design scale `xi` and rescaling
/// level `a`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenConstants {
    pub xi: f64,
    pub a: f64,
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    #[serde(rename = "V")]
    pub big_v: f64,
    #[serde(rename = "B")]
    pub b: f64,
}

/// `v1 = 1/(4 xi^2)`, `v2 = a^2`, `v3 = sqrt(v1^2 + 2 v1 v2)`,
/// `V = v1 + v2 + v3`, `B = v2 / V`.
pub fn compute_constants(xi: f64, a: f64) -> Result<EigenConstants> {
    if !(xi > 0.0 && xi.is_finite()) {
        return domain(format!("xi = {xi} must be positive and finite"));
    }
    if !(a > 0.0 && a.is_finite()) {
        return domain(format!("a = {a} must be positive and finite"));
    }
    let v1 = 1.0 / (4.0 * xi * xi);
    let v2 = a * a;
    let v3 = (v1 * v1 + 2.0 * v1 * v2).sqrt();
    let big_v = v1 + v2 + v3;
    Ok(EigenConstants { xi, a, v1, v2, v3, big_v, b: v2 / big_v })
}

impl EigenConstants {
    /// `log sqrt(2 v1 / V)`, the log of the leading univariate eigenvalue.
    pub fn ln_lambda0(&self) -> f64 {
        0.5 * (2.0 * self.v1 / self.big_v).ln()
    }

    /// Log eigenvalue of a tensor eigenfunction of `gamma_size` factors and
    /// total degree `m`.
    pub fn ln_mu(&self, gamma_size: usize, degree: usize) -> f64 {
        gamma_size as f64 * self.ln_lambda0() + degree as f64 * self.b.ln()
    }

    /// `log` of the eigenfunction normalizer: `phi_j = c * exp(-(v3-v1)x^2) h_j(sqrt(2 v3) x)`
    /// with `h_j` orthonormal Hermite and `c = sqrt(2 xi sqrt(v3)) pi^{1/4}`.
    fn ln_normalizer(&self) -> f64 {
        0.5 * (2.0 * self.xi * self.v3.sqrt()).ln() + 0.25 * PI.ln()
    }
}

/// `λ_j = sqrt(2 v1 / V) B^j`.
pub fn univariate_eigenvalue(c: &EigenConstants, j: usize) -> f64 {
    (c.ln_lambda0() + j as f64 * c.b.ln()).exp()
}

/// Normalized eigenfunction `φ_j(x)`, orthonormal in `L2(N(0, xi^2))`.
pub fn eigenfunction_eval(c: &EigenConstants, j: usize, x: f64) -> Result<f64> {
    if j > MAX_HERMITE_DEGREE {
        return domain(format!("eigenfunction index {j} exceeds cap {MAX_HERMITE_DEGREE}"));
    }
    if !x.is_finite() {
        return domain(format!("eigenfunction argument {x} is not finite"));
    }
    let h = orthonormal_hermite(j, (2.0 * c.v3).sqrt() * x);
    h[j].to_f64_with(c.ln_normalizer() - (c.v3 - c.v1) * x * x)
}

/// `φ_0(x), ..., φ_jmax(x)` in one recurrence pass.
pub fn eigenfunctions_upto(c: &EigenConstants, jmax: usize, x: f64) -> Result<Vec<f64>> {
    if jmax > MAX_HERMITE_DEGREE {
        return domain(format!("eigenfunction index {jmax} exceeds cap {MAX_HERMITE_DEGREE}"));
    }
    if !x.is_finite() {
        return domain(format!("eigenfunction argument {x} is not finite"));
    }
    let extra = c.ln_normalizer() - (c.v3 - c.v1) * x * x;
    orthonormal_hermite(jmax, (2.0 * c.v3).sqrt() * x)
        .into_iter()
        .map(|h| h.to_f64_with(extra))
        .collect()
}

/// `K(s, t) = exp(-a^2 ||s_γ - t_γ||^2)`.
pub fn kernel_eval(gamma: &SparsityPattern, a: f64, s: &[f64], t: &[f64]) -> f64 {
    let d2: f64 = gamma.included().map(|i| (s[i] - t[i]).powi(2)).sum();
    (-a * a * d2).exp()
}

/// Number of tensor eigenfunctions of total degree `m` on `gamma_size`
/// factors, `C(gamma_size + m - 1, m)`, as a float.
pub fn degree_multiplicity(gamma_size: usize, m: usize) -> f64 {
    if gamma_size == 0 {
        return if m == 0 { 1.0 } else { 0.0 };
    }
    ln_binomial(gamma_size + m - 1, m).exp()
}

/// `Σ_{k ≥ j} μ_k` for the canonical ordering, i.e. the trace mass left
/// after keeping the first `j` eigenvalues. Summed forward over degrees so
/// tiny tails keep their relative accuracy.
pub fn tail_mass(gamma_size: usize, c: &EigenConstants, j: usize) -> f64 {
    if gamma_size == 0 {
        return if j == 0 { 1.0 } else { 0.0 };
    }
    let mut before = 0.0;
    let mut m = 0usize;
    loop {
        let mult = degree_multiplicity(gamma_size, m);
        if before + mult > j as f64 {
            break;
        }
        before += mult;
        m += 1;
    }
    let partial = (before + degree_multiplicity(gamma_size, m) - j as f64) * c.ln_mu(gamma_size, m).exp();
    partial + tail_beyond_degree(gamma_size, c, m)
}

/// `Σ_{m' > m} mult(m') μ(m')`.
fn tail_beyond_degree(gamma_size: usize, c: &EigenConstants, m: usize) -> f64 {
    let mut sum = 0.0;
    let mut k = m + 1;
    loop {
        let term = degree_multiplicity(gamma_size, k) * c.ln_mu(gamma_size, k).exp();
        sum += term;
        let ratio = (gamma_size + k) as f64 / (k + 1) as f64 * c.b;
        if ratio < 1.0 && term <= 1e-17 * sum.max(f64::MIN_POSITIVE) {
            break;
        }
        if term == 0.0 && ratio < 1.0 {
            break;
        }
        k += 1;
        if k > m + 10_000_000 {
            break;
        }
    }
    sum
}

/// Smallest `J` whose truncation leaves trace mass `≤ tol`.
pub fn truncation_for_tail(gamma_size: usize, c: &EigenConstants, tol: f64) -> Result<usize> {
    if gamma_size == 0 {
        return Err(Error::EmptyModel);
    }
    if !(tol > 0.0) {
        return domain(format!("tail tolerance {tol} must be positive"));
    }
    let mut count = 0.0;
    let mut m = 0usize;
    loop {
        let beyond = tail_beyond_degree(gamma_size, c, m);
        let mult = degree_multiplicity(gamma_size, m);
        if beyond <= tol {
            // Some entries of degree m can be dropped.
            let mu = c.ln_mu(gamma_size, m).exp();
            let droppable = ((tol - beyond) / mu).floor().min(mult);
            let j = count + mult - droppable;
            if j > MAX_TRUNCATION as f64 {
                break;
            }
            // Rounding in the division can put the cut one entry too early.
            let mut j = (j as usize).max(1);
            while tail_mass(gamma_size, c, j) > tol {
                j += 1;
            }
            return Ok(j);
        }
        count += mult;
        m += 1;
        if count > MAX_TRUNCATION as f64 {
            break;
        }
    }
    Err(Error::Numerical(format!(
        "truncation for tail {tol} at |γ|={gamma_size}, B={} exceeds {MAX_TRUNCATION} terms",
        c.b
    )))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEntry {
    pub multi_index: Vec<u32>,
    pub degree: u32,
    pub eigenvalue: f64,
}

/// The first `J` tensor eigenpairs in canonical order: by total degree, then
/// lexicographically (ascending) on the multi-index.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigenSpectrum {
    pub gamma: SparsityPattern,
    pub constants: EigenConstants,
    pub entries: Vec<SpectrumEntry>,
}

/// Multi-indices of length `len` summing to `degree`, lexicographic ascending.
fn multi_indices(len: usize, degree: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>, budget: usize) {
    if out.len() >= budget {
        return;
    }
    if len == 1 {
        let mut idx = prefix.clone();
        idx.push(degree);
        out.push(idx);
        return;
    }
    for first in 0..=degree {
        prefix.push(first);
        multi_indices(len - 1, degree - first, prefix, out, budget);
        prefix.pop();
        if out.len() >= budget {
            return;
        }
    }
}

pub fn enumerate_spectrum(gamma: &SparsityPattern, c: &EigenConstants, budget: usize) -> Result<EigenSpectrum> {
    let g = gamma.cardinality();
    if g == 0 {
        return Err(Error::EmptyModel);
    }
    if budget == 0 {
        return domain("spectrum budget must be at least 1");
    }
    let mut entries = Vec::with_capacity(budget);
    let mut degree = 0u32;
    while entries.len() < budget {
        let eigenvalue = c.ln_mu(g, degree as usize).exp();
        let mut idx = Vec::new();
        multi_indices(g, degree, &mut Vec::with_capacity(g), &mut idx, budget - entries.len());
        entries.extend(idx.into_iter().map(|multi_index| SpectrumEntry { multi_index, degree, eigenvalue }));
        degree += 1;
    }
    Ok(EigenSpectrum { gamma: gamma.clone(), constants: *c, entries })
}

impl EigenSpectrum {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.eigenvalue).collect()
    }

    pub fn max_degree(&self) -> usize {
        self.entries.iter().map(|e| e.degree as usize).max().unwrap_or(0)
    }

    /// Trace mass not captured by the stored entries.
    pub fn tail(&self) -> f64 {
        tail_mass(self.gamma.cardinality(), &self.constants, self.len())
    }

    /// `ψ_k(x)` for every stored entry, `x ∈ R^dim`.
    pub fn basis_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        let jmax = self.max_degree();
        let per_coord: Vec<Vec<f64>> = self
            .gamma
            .select(x)
            .map(|xi| eigenfunctions_upto(&self.constants, jmax, xi))
            .collect::<Result<_>>()?;
        Ok(self
            .entries
            .iter()
            .map(|e| e.multi_index.iter().zip(&per_coord).map(|(&k, phi)| phi[k as usize]).product())
            .collect())
    }

    /// Truncated Mercer sum `Σ_k μ_k ψ_k(s) ψ_k(t)`.
    pub fn mercer_sum(&self, s: &[f64], t: &[f64]) -> Result<f64> {
        let bs = self.basis_at(s)?;
        let bt = self.basis_at(t)?;
        Ok(self.entries.iter().zip(bs.iter().zip(&bt)).map(|(e, (a, b))| e.eigenvalue * a * b).sum())
    }
}

/// A function `Σ_j θ_j ψ_j` in the tensor eigenbasis of a spectrum.
#[derive(Clone, Debug)]
pub struct SeriesFunction {
    pub spectrum: Arc<EigenSpectrum>,
    pub coeffs: Vec<f64>,
}

impl SeriesFunction {
    pub fn new(spectrum: Arc<EigenSpectrum>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() > spectrum.len() {
            return domain(format!(
                "{} coefficients for a spectrum of {} entries",
                coeffs.len(),
                spectrum.len()
            ));
        }
        Ok(Self { spectrum, coeffs })
    }

    pub fn zero(spectrum: Arc<EigenSpectrum>) -> Self {
        let n = spectrum.len();
        Self { spectrum, coeffs: vec![0.0; n] }
    }

    pub fn truncation(&self) -> usize {
        self.coeffs.len()
    }

    /// Squared `L2(Q)` norm, by orthonormality of the basis.
    pub fn l2_norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let basis = self.spectrum.basis_at(x)?;
        Ok(self.coeffs.iter().zip(&basis).map(|(c, b)| c * b).sum())
    }
}

/// Draw `θ_j = Z_j sqrt(μ_j)` with `Z_j` i.i.d. standard normal.
pub fn sample_path(spectrum: Arc<EigenSpectrum>, seed: u64) -> SeriesFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs = spectrum
        .entries
        .iter()
        .map(|e| rng.sample::<f64, _>(StandardNormal) * e.eigenvalue.sqrt())
        .collect();
    SeriesFunction { spectrum, coeffs }
}

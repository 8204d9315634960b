//! Hermite recurrences, Gauss–Hermite rules and combinatorial helpers.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Rescale threshold for the Hermite recurrence.
const RESCALE: f64 = 1e100;

/// Natural log of `n!`.
pub fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Natural log of the binomial coefficient `C(n, k)`; `-inf` when `k > n`.
pub fn ln_binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let k = k.min(n - k);
    (0..k).map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln()).sum()
}

/// Exact `C(n, k)` for the small arguments used in spectrum bookkeeping.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// A value stored as `mantissa * exp(log_scale)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scaled {
    pub mantissa: f64,
    pub log_scale: f64,
}

impl Scaled {
    /// `self * exp(extra)`, failing instead of returning infinity.
    pub fn to_f64_with(self, extra: f64) -> Result<f64> {
        if self.mantissa == 0.0 {
            return Ok(0.0);
        }
        let log_mag = self.mantissa.abs().ln() + self.log_scale + extra;
        if log_mag > f64::MAX.ln() {
            return Err(Error::Overflow(format!(
                "value of magnitude exp({log_mag:.1}) exceeds f64 range"
            )));
        }
        Ok(self.mantissa.signum() * log_mag.exp())
    }
}

/// Orthonormal Hermite polynomials `h_0..=h_jmax` at `u`, where
/// `h_j = H_j / sqrt(2^j j! sqrt(pi))` and `H_j` is the physicists' Hermite
/// polynomial. Each entry carries its own scale so the recurrence never
/// overflows.
pub fn orthonormal_hermite(jmax: usize, u: f64) -> Vec<Scaled> {
    let mut out = Vec::with_capacity(jmax + 1);
    let mut log_scale = 0.0;
    let mut prev = 0.0;
    let mut cur = PI.powf(-0.25);
    out.push(Scaled { mantissa: cur, log_scale });
    for j in 0..jmax {
        let jf = j as f64;
        let next = (2.0 / (jf + 1.0)).sqrt() * u * cur - (jf / (jf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
        if cur.abs() > RESCALE {
            cur /= RESCALE;
            prev /= RESCALE;
            log_scale += RESCALE.ln();
        }
        out.push(Scaled { mantissa: cur, log_scale });
    }
    out
}

/// Orthonormal Hermite *functions* `h_j(z) exp(-z^2/2)` for `j = 0..=n`.
fn hermite_functions(n: usize, z: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut prev = 0.0;
    let mut cur = PI.powf(-0.25) * (-0.5 * z * z).exp();
    out.push(cur);
    for j in 0..n {
        let jf = j as f64;
        let next = (2.0 / (jf + 1.0)).sqrt() * z * cur - (jf / (jf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
        out.push(cur);
    }
    out
}

/// Gauss–Hermite rule for `∫ exp(-z^2) f(z) dz`.
///
/// Besides the classical weights `w_i` the rule keeps `w_i exp(z_i^2)`,
/// computed directly from Hermite functions, so integrals of arbitrary
/// (non-weighted) integrands keep full relative accuracy at the outer nodes.
#[derive(Clone, Debug)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub unweighted: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("Gauss-Hermite rule needs at least one node".into()));
        }
        let nf = n as f64;
        let m = n.div_ceil(2);
        let mut nodes = vec![0.0; n];
        let mut unweighted = vec![0.0; n];
        let mut z = 0.0;
        // Asymptotic initial guesses for the largest roots, then
        // extrapolation from the two previous roots; Newton polishes each.
        let mut found: Vec<f64> = Vec::with_capacity(m);
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * found[0],
                3 => 1.91 * z - 0.91 * found[1],
                _ => 2.0 * z - found[i - 2],
            };
            let mut converged = false;
            let mut hn1 = 0.0;
            for _ in 0..100 {
                let h = hermite_functions(n, z);
                hn1 = h[n - 1];
                let step = h[n] / ((2.0 * nf).sqrt() * h[n - 1]);
                z -= step;
                if step.abs() <= 1e-15 * z.abs().max(1.0) {
                    converged = true;
                    hn1 = hermite_functions(n, z)[n - 1];
                    break;
                }
            }
            if !converged {
                return Err(Error::Numerical(format!(
                    "Gauss-Hermite root {i} of {n} did not converge"
                )));
            }
            found.push(z);
            let uw = 1.0 / (nf * hn1 * hn1);
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            unweighted[i] = uw;
            unweighted[n - 1 - i] = uw;
        }
        if n % 2 == 1 {
            nodes[m - 1] = 0.0;
        }
        // Ascending order.
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|a, b| nodes[*a].total_cmp(&nodes[*b]));
        let nodes: Vec<f64> = idx.iter().map(|&i| nodes[i]).collect();
        let unweighted: Vec<f64> = idx.iter().map(|&i| unweighted[i]).collect();
        let weights = nodes.iter().zip(&unweighted).map(|(z, u)| u * (-z * z).exp()).collect();
        Ok(Self { nodes, weights, unweighted })
    }

    /// `∫ f(x) dx` with nodes placed at `x = z / scale`; exact when
    /// `f(x) exp(scale^2 x^2)` is a polynomial of degree `< 2n`.
    pub fn integrate_scaled(&self, scale: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.unweighted)
            .map(|(z, w)| w * f(z / scale))
            .sum::<f64>()
            / scale
    }
}

const EXP_MAGIC: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52
const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
const EXP_UNDERFLOW: f64 = -708.0;

#[inline(always)]
fn exp_nonpositive(x: f64) -> f64 {
    let xc = x.max(EXP_UNDERFLOW);
    let shifted = xc * std::f64::consts::LOG2_E + EXP_MAGIC;
    let k = shifted - EXP_MAGIC;
    let ki = shifted.to_bits() as i64 - EXP_MAGIC.to_bits() as i64;
    let r = (xc - k * LN2_HI) - k * LN2_LO;
    // Taylor series of e^r on |r| ≤ ln2/2, truncation error below 1e-17.
    let mut p = 1.0 / 6_227_020_800.0;
    for c in [
        1.0 / 479_001_600.0,
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    let scale = f64::from_bits(((ki + 1023) as u64) << 52);
    if x < EXP_UNDERFLOW {
        0.0
    } else {
        p * scale
    }
}

fn exp_nonpositive_slice_generic(xs: &mut [f64]) {
    for x in xs.iter_mut() {
        *x = exp_nonpositive(*x);
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn exp_nonpositive_slice_avx2(xs: &mut [f64]) {
    exp_nonpositive_slice_generic(xs)
}

/// In-place `x ↦ e^x` for `x ≤ 0` (and NaN-free input), accurate to a few
/// ulps. Arguments below -708 map to 0.
pub fn exp_nonpositive_in_place(xs: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
            // SAFETY: the required CPU features were detected at runtime.
            unsafe { exp_nonpositive_slice_avx2(xs) };
            return;
        }
    }
    exp_nonpositive_slice_generic(xs)
}

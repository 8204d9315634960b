//! Synthetic regression functions with a known sparsity pattern.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::eigen::DesignSpec;
use crate::error::{domain, Error, Result};
use crate::inference::Dataset;
use crate::pattern::SparsityPattern;
use crate::rkhs::SmoothnessSpec;

/// Maximum number of redraws when the signal-strength floor is not met.
pub const MAX_REDRAWS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    /// Frequencies on concentric shells with coefficients decaying in `‖ω‖`.
    CosineSeries,
    /// Frequencies drawn i.i.d. from the radial law `∝ (1 + ‖ω‖)^{-2r}` with
    /// equal coefficients.
    FourierDecay,
}

fn default_terms() -> usize {
    12
}
fn default_amplitude() -> f64 {
    2.0
}
fn default_shell_width() -> f64 {
    0.5
}
fn default_delta_samples() -> usize {
    20_000
}
fn default_xi() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthSpec {
    pub d0: usize,
    pub smoothness: SmoothnessSpec,
    pub construction: Construction,
    pub seed: u64,
    pub delta_floor: f64,
    #[serde(default = "default_terms")]
    pub terms: usize,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    /// Radial spacing of the shells of the cosine series.
    #[serde(default = "default_shell_width")]
    pub shell_width: f64,
    /// Monte Carlo size of the signal-strength estimate.
    #[serde(default = "default_delta_samples")]
    pub delta_samples: usize,
    /// Standard deviation of the design coordinates.
    #[serde(default = "default_xi")]
    pub xi: f64,
}

impl TruthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d0 == 0 || self.d0 != self.smoothness.d0 {
            return Err(Error::Config(format!("d0 = {} must be positive and match the smoothness block", self.d0)));
        }
        if !(self.delta_floor > 0.0) {
            return Err(Error::Config("delta_floor must be positive".into()));
        }
        if self.terms == 0 || !(self.amplitude > 0.0) || !(self.shell_width > 0.0) || !(self.xi > 0.0) {
            return Err(Error::Config("terms, amplitude, shell_width and xi must be positive".into()));
        }
        if self.delta_samples < 2 {
            return Err(Error::Config("delta_samples must be at least 2".into()));
        }
        Ok(())
    }

    /// Decay exponent `r = α + d0/2` of the coefficients.
    pub fn decay(&self) -> f64 {
        self.smoothness.alpha + self.d0 as f64 / 2.0
    }
}

/// `Σ_k c_k cos(⟨ω_k, x⟩ + b_k)` on `R^{d0}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineSum {
    pub frequencies: Vec<Vec<f64>>,
    pub phases: Vec<f64>,
    pub coeffs: Vec<f64>,
}

impl CosineSum {
    pub fn dim(&self) -> usize {
        self.frequencies.first().map_or(0, Vec::len)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.frequencies
            .iter()
            .zip(&self.phases)
            .zip(&self.coeffs)
            .map(|((w, b), c)| c * (w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b).cos())
            .sum()
    }
}

/// Signal-strength estimate per relevant coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalStrength {
    pub per_coordinate: Vec<f64>,
    pub std_errs: Vec<f64>,
}

impl SignalStrength {
    /// Smallest per-coordinate strength.
    pub fn min(&self) -> f64 {
        self.per_coordinate.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// A realized truth: `f0` on `R^{d0}` and its signal strength.
#[derive(Clone, Debug)]
pub struct Truth {
    pub f0: Arc<CosineSum>,
    pub delta: SignalStrength,
    /// Redraw attempt that produced `f0`.
    pub attempt: usize,
}

impl Truth {
    /// Relevant coordinates when embedded in `d_n` dimensions.
    pub fn gamma_star(&self, d_n: usize) -> Result<SparsityPattern> {
        let d0 = self.f0.dim();
        if d_n < d0 {
            return domain(format!("d_n = {d_n} is smaller than d0 = {d0}"));
        }
        Ok(SparsityPattern::leading(d_n, d0))
    }

    /// `f*(x) = f0(x_{γ*})` for `x ∈ R^{d_n}`.
    pub fn eval_embedded(&self, x: &[f64]) -> f64 {
        self.f0.eval(&x[..self.f0.dim()])
    }
}

fn unit_direction<R: Rng>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn shell_frequencies<R: Rng>(spec: &TruthSpec, rng: &mut R) -> Vec<Vec<f64>> {
    let d = spec.d0;
    let per_shell = 2 * d;
    (0..spec.terms)
        .map(|k| {
            let shell = k / per_shell;
            let slot = k % per_shell;
            let radius = spec.shell_width * (shell + 1) as f64;
            let dir = if d == 2 {
                let offset = if slot == 0 { rng.gen::<f64>() } else { 0.0 };
                let angle = 2.0 * PI * (slot as f64 + offset) / per_shell as f64;
                vec![angle.cos(), angle.sin()]
            } else if d == 1 {
                vec![1.0]
            } else {
                unit_direction(d, rng)
            };
            dir.into_iter().map(|u| u * radius).collect()
        })
        .collect()
}

/// Inverts the radial CDF of `ρ^{d-1}(1+ρ)^{-2r}` by interpolation on a
/// precomputed grid.
fn radial_sampler(d: usize, r: f64) -> impl Fn(f64) -> f64 {
    let log_density = move |rho: f64| (d as f64 - 1.0) * rho.ln() - 2.0 * r * (1.0 + rho).ln();
    // Substituting ρ = e^t - 1 keeps the grid fine near zero and coarse in the tail.
    let steps = 4000;
    let t_max = 12.0;
    let h = t_max / steps as f64;
    let mut cdf = vec![0.0; steps + 1];
    let f = |t: f64| {
        let rho = t.exp_m1();
        if rho <= 0.0 {
            if d == 1 {
                t.exp()
            } else {
                0.0
            }
        } else {
            (log_density(rho) + t).exp()
        }
    };
    for i in 1..=steps {
        let (t0, t1) = ((i - 1) as f64 * h, i as f64 * h);
        cdf[i] = cdf[i - 1] + h / 6.0 * (f(t0) + 4.0 * f(0.5 * (t0 + t1)) + f(t1));
    }
    let total = cdf[steps];
    move |u: f64| {
        let target = u * total;
        let i = cdf.partition_point(|c| *c < target).clamp(1, steps);
        let frac = (target - cdf[i - 1]) / (cdf[i] - cdf[i - 1]).max(f64::MIN_POSITIVE);
        (((i - 1) as f64 + frac.clamp(0.0, 1.0)) * h).exp_m1()
    }
}

fn draw_function(spec: &TruthSpec, rng: &mut ChaCha8Rng) -> CosineSum {
    let r = spec.decay();
    let frequencies = match spec.construction {
        Construction::CosineSeries => shell_frequencies(spec, rng),
        Construction::FourierDecay => {
            let inv = radial_sampler(spec.d0, r);
            (0..spec.terms)
                .map(|_| {
                    let rho = inv(rng.gen::<f64>());
                    unit_direction(spec.d0, rng).into_iter().map(|u| u * rho).collect()
                })
                .collect()
        }
    };
    let phases = (0..spec.terms).map(|_| 2.0 * PI * rng.gen::<f64>()).collect();
    let coeffs = match spec.construction {
        Construction::CosineSeries => frequencies
            .iter()
            .map(|w: &Vec<f64>| {
                let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                spec.amplitude * (1.0 + norm).powf(-r)
            })
            .collect(),
        Construction::FourierDecay => vec![spec.amplitude / (spec.terms as f64).sqrt(); spec.terms],
    };
    CosineSum { frequencies, phases, coeffs }
}

/// `δ̂_j = ½ E (f(X) - f(X^{(j)}))²`, where `X^{(j)}` redraws coordinate `j`;
/// this equals `‖f - E_j f‖²` under the product Gaussian design.
pub fn signal_strength(f: &dyn Fn(&[f64]) -> f64, d0: usize, xi: f64, samples: usize, seed: u64) -> Result<SignalStrength> {
    if d0 == 0 || samples < 2 || !(xi > 0.0) {
        return domain("signal strength needs d0 ≥ 1, xi > 0 and at least two samples");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sums = vec![(0.0, 0.0); d0];
    let mut x = vec![0.0; d0];
    for _ in 0..samples {
        for v in x.iter_mut() {
            *v = xi * rng.sample::<f64, _>(StandardNormal);
        }
        let fx = f(&x);
        for (j, acc) in sums.iter_mut().enumerate() {
            let keep = x[j];
            x[j] = xi * rng.sample::<f64, _>(StandardNormal);
            let v = 0.5 * (fx - f(&x)).powi(2);
            x[j] = keep;
            acc.0 += v;
            acc.1 += v * v;
        }
    }
    let m = samples as f64;
    let (per_coordinate, std_errs) = sums
        .iter()
        .map(|(s, s2)| {
            let mean = s / m;
            let var = ((s2 / m - mean * mean) * m / (m - 1.0)).max(0.0);
            (mean, (var / m).sqrt())
        })
        .unzip();
    Ok(SignalStrength { per_coordinate, std_errs })
}

/// Draws `f0` until every relevant coordinate carries signal at least
/// `delta_floor`.
pub fn make_truth(spec: &TruthSpec) -> Result<Truth> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut best = 0.0f64;
    for attempt in 0..MAX_REDRAWS {
        let f0 = draw_function(spec, &mut rng);
        let delta = signal_strength(&|x| f0.eval(x), spec.d0, spec.xi, spec.delta_samples, rng.gen())?;
        best = best.max(delta.min());
        if delta.min() >= spec.delta_floor {
            return Ok(Truth { f0: Arc::new(f0), delta, attempt });
        }
    }
    Err(Error::Config(format!(
        "no draw reached delta_floor = {} in {MAX_REDRAWS} attempts (best {best:.3e}); increase the amplitude",
        spec.delta_floor
    )))
}

/// `n` rows `X ~ N(0, ξ² I_{d_n})` with `y = f*(X) + σ Z`.
pub fn generate_dataset(truth: &Truth, design: &DesignSpec, n: usize, sigma: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return domain("n must be at least 1");
    }
    truth.gamma_star(design.dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n * design.dim);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row = design.sample(&mut rng);
        let z: f64 = StandardNormal.sample(&mut rng);
        y.push(truth.eval_embedded(&row) + sigma * z);
        x.extend(row);
    }
    Dataset::from_flat(design.dim, x, y, sigma)
}

//! Gaussian marginal likelihood `log N(y; 0, K_{a,γ}(X, X) + σ² I)`.

use std::sync::Arc;

use faer::dyn_stack::{GlobalPodBuffer, PodStack};
use faer::linalg::cholesky::llt::compute::{cholesky_in_place, cholesky_in_place_req, LltRegularization};
use faer::linalg::triangular_solve::{solve_lower_triangular_in_place, solve_upper_triangular_in_place};
use faer::{Mat, Parallelism};

use super::Dataset;
use crate::error::{Error, Result};
use crate::pattern::SparsityPattern;
use crate::special::exp_nonpositive_in_place;

/// Diagonal jitter levels tried in turn when a factorization fails.
pub const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Per-coordinate squared distances for a dataset, packed column by column
/// over the lower triangle.
pub struct MarginalModel {
    data: Arc<Dataset>,
    sq_dist: Vec<Vec<f64>>,
}

/// Scratch space for repeated evaluations on one thread.
pub struct Workspace {
    mat: Mat<f64>,
    packed: Vec<f64>,
    stack: GlobalPodBuffer,
}

/// Cholesky factor of `K + (σ² + jitter) I` and the weights `(K + σ² I)^{-1} y`.
pub struct GpFactor {
    pub log_marginal: f64,
    pub jitter: f64,
    pub alpha: Vec<f64>,
}

fn packed_len(n: usize) -> usize {
    n * (n + 1) / 2
}

impl MarginalModel {
    pub fn new(data: Arc<Dataset>) -> Self {
        let n = data.n();
        let sq_dist = (0..data.dim())
            .map(|k| {
                let mut v = Vec::with_capacity(packed_len(n));
                for j in 0..n {
                    let xj = data.x_row(j)[k];
                    for i in j..n {
                        v.push((data.x_row(i)[k] - xj).powi(2));
                    }
                }
                v
            })
            .collect();
        Self { data, sq_dist }
    }

    pub fn data(&self) -> &Arc<Dataset> {
        &self.data
    }

    pub fn workspace(&self) -> Workspace {
        let n = self.data.n();
        let req = cholesky_in_place_req::<f64>(n, Parallelism::None, Default::default())
            .expect("cholesky workspace size fits in memory");
        Workspace { mat: Mat::zeros(n, n), packed: vec![0.0; packed_len(n)], stack: GlobalPodBuffer::new(req) }
    }

    /// Fills `ws.packed` with the lower triangle of `K_{a,γ}`.
    fn kernel_packed(&self, ws: &mut Workspace, gamma: &SparsityPattern, a: f64) {
        let packed = &mut ws.packed;
        if gamma.is_empty() {
            packed.fill(1.0);
            return;
        }
        let scale = -a * a;
        let mut first = true;
        for k in gamma.included() {
            let d = &self.sq_dist[k];
            if first {
                packed.iter_mut().zip(d).for_each(|(p, v)| *p = scale * v);
                first = false;
            } else {
                packed.iter_mut().zip(d).for_each(|(p, v)| *p += scale * v);
            }
        }
        exp_nonpositive_in_place(packed);
    }

    fn load(&self, ws: &mut Workspace, diag: f64) {
        let n = self.data.n();
        let mut offset = 0;
        for j in 0..n {
            let len = n - j;
            let col = ws.mat.col_as_slice_mut(j);
            col[j..].copy_from_slice(&ws.packed[offset..offset + len]);
            col[j] += diag;
            offset += len;
        }
    }

    /// Factorizes in `ws.mat`, escalating jitter on failure.
    fn factorize(&self, ws: &mut Workspace, gamma: &SparsityPattern, a: f64) -> Result<f64> {
        self.kernel_packed(ws, gamma, a);
        let s2 = self.data.sigma().powi(2);
        for jitter in JITTER_LADDER {
            self.load(ws, s2 + jitter);
            let ok = cholesky_in_place(
                ws.mat.as_mut(),
                LltRegularization::default(),
                Parallelism::None,
                PodStack::new(&mut ws.stack),
                Default::default(),
            )
            .is_ok();
            if ok {
                return Ok(jitter);
            }
        }
        Err(Error::Numerical(format!(
            "covariance for γ = {gamma}, a = {a:.6e} is not positive definite even with jitter {:.0e} (σ² = {s2:.3e})",
            JITTER_LADDER[JITTER_LADDER.len() - 1]
        )))
    }

    fn whitened(&self, ws: &Workspace) -> (Mat<f64>, f64) {
        let n = self.data.n();
        let y = self.data.y();
        let mut z = Mat::<f64>::from_fn(n, 1, |i, _| y[i]);
        let l = ws.mat.as_ref();
        solve_lower_triangular_in_place(l, z.as_mut(), Parallelism::None);
        let log_det_half: f64 = (0..n).map(|i| l.read(i, i).ln()).sum();
        (z, log_det_half)
    }

    fn assemble(&self, z: &Mat<f64>, log_det_half: f64) -> f64 {
        let n = self.data.n();
        let quad: f64 = (0..n).map(|i| z.read(i, 0).powi(2)).sum();
        -0.5 * quad - log_det_half - 0.5 * n as f64 * LN_2PI
    }

    pub fn log_marginal(&self, ws: &mut Workspace, gamma: &SparsityPattern, a: f64) -> Result<f64> {
        self.check(gamma, a)?;
        self.factorize(ws, gamma, a)?;
        let (z, h) = self.whitened(ws);
        Ok(self.assemble(&z, h))
    }

    /// Log marginal plus the weights needed for conditional-mean prediction.
    pub fn fit(&self, ws: &mut Workspace, gamma: &SparsityPattern, a: f64) -> Result<GpFactor> {
        self.check(gamma, a)?;
        let jitter = self.factorize(ws, gamma, a)?;
        let (mut z, h) = self.whitened(ws);
        let log_marginal = self.assemble(&z, h);
        solve_upper_triangular_in_place(ws.mat.as_ref().transpose(), z.as_mut(), Parallelism::None);
        let alpha = (0..self.data.n()).map(|i| z.read(i, 0)).collect();
        Ok(GpFactor { log_marginal, jitter, alpha })
    }

    fn check(&self, gamma: &SparsityPattern, a: f64) -> Result<()> {
        if gamma.dim() != self.data.dim() {
            return Err(Error::Domain(format!("pattern dimension {} differs from data dimension {}", gamma.dim(), self.data.dim())));
        }
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::Domain(format!("a = {a} must be positive and finite")));
        }
        Ok(())
    }
}

/// One-shot `log N(y; 0, K_{a,γ}(X, X) + σ² I)`.
pub fn log_marginal_likelihood(data: &Dataset, gamma: &SparsityPattern, a: f64) -> Result<f64> {
    let model = MarginalModel::new(Arc::new(data.clone()));
    let mut ws = model.workspace();
    model.log_marginal(&mut ws, gamma, a)
}

/// `Σ_i k(x, X_i) α_i` for a fitted state, at many points.
pub fn conditional_mean(
    data: &Dataset,
    gamma: &SparsityPattern,
    a: f64,
    alpha: &[f64],
    points: &[Vec<f64>],
) -> Vec<f64> {
    let n = data.n();
    if gamma.is_empty() {
        let s: f64 = alpha.iter().sum();
        return vec![s; points.len()];
    }
    let cols: Vec<(usize, Vec<f64>)> =
        gamma.included().map(|k| (k, (0..n).map(|i| data.x_row(i)[k]).collect())).collect();
    let scale = -a * a;
    let mut buf = vec![0.0; n];
    points
        .iter()
        .map(|p| {
            buf.iter_mut().for_each(|b| *b = 0.0);
            for (k, col) in &cols {
                let pk = p[*k];
                for (b, c) in buf.iter_mut().zip(col) {
                    *b += (pk - c) * (pk - c);
                }
            }
            buf.iter_mut().for_each(|b| *b *= scale);
            exp_nonpositive_in_place(&mut buf);
            buf.iter().zip(alpha).map(|(k, w)| k * w).sum()
        })
        .collect()
}

use std::io::{Read, Write};

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Observations `y_i = f(x_i) + σ z_i` with a known noise level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    n: usize,
    dim: usize,
    /// Row-major `n × dim`.
    x: Vec<f64>,
    y: Vec<f64>,
    sigma: f64,
}

impl Dataset {
    pub fn from_flat(dim: usize, x: Vec<f64>, y: Vec<f64>, sigma: f64) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return domain("dataset needs at least one observation");
        }
        if dim == 0 || x.len() != n * dim {
            return domain(format!("x has {} entries, expected {n} × {dim}", x.len()));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return domain("dataset contains non-finite entries");
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return domain(format!("sigma = {sigma} must be non-negative"));
        }
        Ok(Self { n, dim, x, y, sigma })
    }

    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>, sigma: f64) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return domain("rows have unequal lengths");
        }
        Self::from_flat(dim, rows.concat(), y, sigma)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn x_flat(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn with_sigma(mut self, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return domain(format!("sigma = {sigma} must be non-negative"));
        }
        self.sigma = sigma;
        Ok(self)
    }

    /// Rows reordered so that row `i` of the result is row `perm[i]` here.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.n];
        if perm.len() != self.n || perm.iter().any(|&p| p >= self.n || std::mem::replace(&mut seen[p], true)) {
            return domain("not a permutation of the rows");
        }
        let x = perm.iter().flat_map(|&p| self.x_row(p).iter().copied()).collect();
        let y = perm.iter().map(|&p| self.y[p]).collect();
        Self::from_flat(self.dim, x, y, self.sigma)
    }

    /// Residual standard deviation of an ordinary least-squares fit with
    /// intercept. A plug-in noise level for when `σ` is not known.
    pub fn plugin_sigma(&self) -> Result<f64> {
        let p = self.dim + 1;
        if self.n <= p {
            return domain(format!("plug-in sigma needs n > {p}"));
        }
        let design = |i: usize, j: usize| if j == 0 { 1.0 } else { self.x_row(i)[j - 1] };
        let xtx = Mat::<f64>::from_fn(p, p, |a, b| (0..self.n).map(|i| design(i, a) * design(i, b)).sum());
        let xty = Mat::<f64>::from_fn(p, 1, |a, _| (0..self.n).map(|i| design(i, a) * self.y[i]).sum());
        let chol = faer::linalg::solvers::Cholesky::try_new(xtx.as_ref(), faer::Side::Lower)
            .map_err(|_| Error::Numerical("least-squares normal equations are singular".into()))?;
        use faer::linalg::solvers::SpSolver;
        let beta = chol.solve(&xty);
        let rss: f64 = (0..self.n)
            .map(|i| {
                let fit: f64 = (0..p).map(|j| design(i, j) * beta.read(j, 0)).sum();
                (self.y[i] - fit).powi(2)
            })
            .sum();
        Ok((rss / (self.n - p) as f64).sqrt())
    }

    /// Reads a CSV with header `x1,…,xd,y`.
    pub fn read_csv<R: Read>(reader: R, sigma: f64) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let dim = headers.len().saturating_sub(1);
        for (j, h) in headers.iter().enumerate() {
            let want = if j == dim { "y".to_string() } else { format!("x{}", j + 1) };
            if h.trim() != want {
                return Err(Error::Config(format!("column {} is '{h}', expected '{want}'", j + 1)));
            }
        }
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec?;
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("cannot parse '{field}' as a number")))?;
                if j == dim {
                    y.push(v);
                } else {
                    x.push(v);
                }
            }
        }
        Self::from_flat(dim, x, y, sigma)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.dim).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for i in 0..self.n {
            let mut rec: Vec<String> = self.x_row(i).iter().map(|v| format!("{v:e}")).collect();
            rec.push(format!("{:e}", self.y[i]));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

//! Experiment plans and the consistency sweep.

use std::fs::OpenOptions;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::truth::{generate_dataset, make_truth, Construction, Truth, TruthSpec};
use crate::eigen::DesignSpec;
use crate::error::{Error, Result};
use crate::inference::summary::l2_distance;
use crate::inference::{mcmc_run, summarize, thin_states, Dataset, MarginalModel, McmcConfig, MoveMix, PosteriorMean};
use crate::prior::{size_prior_pmf, PriorConfig, SizePrior};
use crate::rkhs::SmoothnessSpec;

/// Environment variable holding the number of sweep workers.
pub const WORKERS_ENV: &str = "SEGP_WORKERS";

/// How the number of regressors grows with `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum DimensionRule {
    Fixed { value: usize },
    /// `d_n = min(cap, ⌈c · exp(n^{d0/(2β+d0)})⌉)`.
    Growth { c: f64, cap: usize },
}

impl DimensionRule {
    pub fn dim(&self, n: usize, smoothness: &SmoothnessSpec) -> usize {
        match self {
            DimensionRule::Fixed { value } => *value,
            DimensionRule::Growth { c, cap } => {
                let v = c * growth_scale(n, smoothness).exp();
                if v.is_finite() && v < *cap as f64 {
                    (v.ceil() as usize).max(1)
                } else {
                    *cap
                }
            }
        }
    }
}

/// `n^{d0/(2β+d0)}`.
pub fn growth_scale(n: usize, s: &SmoothnessSpec) -> f64 {
    (n as f64).powf(s.d0 as f64 / (2.0 * s.beta + s.d0 as f64))
}

/// Lower rate `n^{-β/(2β+d0)}`.
pub fn rate_lower(n: usize, s: &SmoothnessSpec) -> f64 {
    (n as f64).powf(-s.rate_exponent())
}

/// Exponent `κ = (d0+1)/(2 + d0/β)` of the logarithmic factor.
pub fn log_factor_exponent(s: &SmoothnessSpec) -> f64 {
    (s.d0 as f64 + 1.0) / (2.0 + s.d0 as f64 / s.beta)
}

/// Target rate `n^{-β/(2β+d0)} (log n)^κ`.
pub fn rate_target(n: usize, s: &SmoothnessSpec) -> f64 {
    rate_lower(n, s) * (n as f64).ln().powf(log_factor_exponent(s))
}

fn default_l2_points() -> usize {
    10_000
}
fn default_mean_states() -> usize {
    100
}
fn default_growth_constant() -> f64 {
    1.0
}
fn default_initial_a() -> f64 {
    2.0
}
fn default_rescale_step() -> f64 {
    0.3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub n_grid: Vec<usize>,
    pub d_n: DimensionRule,
    pub replications: usize,
    pub chains: usize,
    pub iters: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub sigma: f64,
    pub xi: f64,
    pub truth: TruthSpec,
    pub prior: PriorConfig,
    /// Fresh design draws used for the L2 error.
    #[serde(default = "default_l2_points")]
    pub l2_points: usize,
    /// Thinned states averaged into the posterior mean.
    #[serde(default = "default_mean_states")]
    pub mean_states: usize,
    /// Constant `c` in the requirement `log d_n ≤ c · n^{d0/(2β+d0)}`.
    #[serde(default = "default_growth_constant")]
    pub growth_constant: f64,
    #[serde(default)]
    pub moves: MoveMix,
    #[serde(default = "default_rescale_step")]
    pub rescale_step: f64,
    #[serde(default = "default_initial_a")]
    pub initial_a: f64,
}

impl ExperimentPlan {
    /// Two relevant coordinates among eight, `β = 1`, `α = 1.4`, `ξ = 1`,
    /// `σ = 0.5`, `n ∈ {60, 120, 240, 480}`, ten replications of four
    /// chains with 10⁴ iterations.
    pub fn default_experiment() -> Self {
        let smoothness = SmoothnessSpec::new_at_boundary(1.0, 1.4, 2).expect("valid default smoothness");
        Self {
            n_grid: vec![60, 120, 240, 480],
            d_n: DimensionRule::Fixed { value: 8 },
            replications: 10,
            chains: 4,
            iters: 10_000,
            burn_in: 2_000,
            seed: 20_240_601,
            sigma: 0.5,
            xi: 1.0,
            truth: TruthSpec {
                d0: 2,
                smoothness,
                construction: Construction::CosineSeries,
                seed: 7,
                delta_floor: 0.1,
                terms: 12,
                amplitude: 2.0,
                shell_width: 0.5,
                delta_samples: 20_000,
                xi: 1.0,
            },
            prior: PriorConfig { size_prior: SizePrior::Penalized { k: 1.0 }, ..PriorConfig::default() },
            l2_points: default_l2_points(),
            mean_states: default_mean_states(),
            growth_constant: default_growth_constant(),
            moves: MoveMix::default(),
            rescale_step: default_rescale_step(),
            initial_a: default_initial_a(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return bad("n_grid must be non-empty with positive entries".into());
        }
        if self.replications == 0 || self.chains == 0 || self.iters == 0 {
            return bad("replications, chains and iters must be positive".into());
        }
        if self.burn_in >= self.iters {
            return bad(format!("burn_in = {} must be below iters = {}", self.burn_in, self.iters));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma = {} must be non-negative", self.sigma));
        }
        if self.truth.xi != self.xi || self.prior.xi != self.xi {
            return bad(format!(
                "xi must agree across plan ({}), truth ({}) and prior ({})",
                self.xi, self.truth.xi, self.prior.xi
            ));
        }
        if self.l2_points == 0 || self.mean_states == 0 {
            return bad("l2_points and mean_states must be positive".into());
        }
        self.truth.validate()?;
        DesignSpec::new(1, self.xi)?;
        let s = &self.truth.smoothness;
        for &n in &self.n_grid {
            let d = self.d_n.dim(n, s);
            if d < self.truth.d0 || d > 64 {
                return bad(format!("d_n = {d} at n = {n} must lie in [d0, 64]"));
            }
            let limit = self.growth_constant * growth_scale(n, s);
            if (d as f64).ln() > limit {
                return bad(format!("log d_n = {:.3} exceeds {:.3} at n = {n}", (d as f64).ln(), limit));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("plan serializes");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }

    /// Grid cells in execution order.
    pub fn cells(&self) -> Vec<(usize, usize)> {
        self.n_grid.iter().flat_map(|&n| (0..self.replications).map(move |r| (n, r))).collect()
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of cell `(n, rep)`; the same replication index shares no stream
/// across `n`.
pub fn cell_seed(base: u64, n: usize, rep: usize) -> u64 {
    mix(mix(base ^ mix(n as u64)).wrapping_add(rep as u64))
}

/// One row of the sweep output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub config_hash: String,
    pub n: usize,
    pub d_n: usize,
    pub rep: usize,
    pub seed: u64,
    pub prob_true_model: f64,
    pub fp_mass: f64,
    pub fn_mass: f64,
    pub other_mass: f64,
    pub l2_error_of_mean: f64,
    pub eps_lower: f64,
    pub eps_target: f64,
    /// `−β/(2β+d0)`.
    pub target_slope: f64,
    /// Prior mass of the true model size.
    pub size_prior_true: f64,
    pub top_model: String,
    pub mean_log_a: f64,
    pub acceptance_rate: f64,
    pub mean_states: usize,
    pub runtime_secs: f64,
}

/// Column names of [`ResultRow`] in CSV order.
pub const RESULT_COLUMNS: [&str; 19] = [
    "config_hash",
    "n",
    "d_n",
    "rep",
    "seed",
    "prob_true_model",
    "fp_mass",
    "fn_mass",
    "other_mass",
    "l2_error_of_mean",
    "eps_lower",
    "eps_target",
    "target_slope",
    "size_prior_true",
    "top_model",
    "mean_log_a",
    "acceptance_rate",
    "mean_states",
    "runtime_secs",
];

/// Fits one cell end to end.
pub fn run_cell(plan: &ExperimentPlan, truth: &Truth, n: usize, rep: usize, config_hash: &str) -> Result<ResultRow> {
    let start = Instant::now();
    let s = &plan.truth.smoothness;
    let d_n = plan.d_n.dim(n, s);
    let seed = cell_seed(plan.seed, n, rep);
    let design = DesignSpec::new(d_n, plan.xi)?;
    let data: Arc<Dataset> = Arc::new(generate_dataset(truth, &design, n, plan.sigma, seed)?);
    let cfg = McmcConfig {
        iters: plan.iters,
        chains: plan.chains,
        seed: mix(seed ^ 1),
        moves: plan.moves,
        rescale_step: plan.rescale_step,
        initial_gamma: None,
        initial_a: plan.initial_a,
        ..McmcConfig::default()
    };
    let traces = mcmc_run(data.clone(), &plan.prior, &cfg)?;
    let star = truth.gamma_star(d_n)?;
    let summary = summarize(&traces, Some(&star), plan.burn_in)?;
    let states = thin_states(&traces, plan.burn_in, plan.mean_states)?;
    let mean = PosteriorMean::from_states(&MarginalModel::new(data), &states)?;
    let l2 = l2_distance(&|p| mean.predict(p), &|x| truth.eval_embedded(x), &design, plan.l2_points, mix(seed ^ 2));
    let pmf = size_prior_pmf(&plan.prior.sparsity(d_n, n))?;
    Ok(ResultRow {
        config_hash: config_hash.to_string(),
        n,
        d_n,
        rep,
        seed,
        prob_true_model: summary.prob_true_model.unwrap_or(0.0),
        fp_mass: summary.fp_mass.unwrap_or(0.0),
        fn_mass: summary.fn_mass.unwrap_or(0.0),
        other_mass: summary.other_mass.unwrap_or(0.0),
        l2_error_of_mean: l2,
        eps_lower: rate_lower(n, s),
        eps_target: rate_target(n, s),
        target_slope: -s.rate_exponent(),
        size_prior_true: pmf[plan.truth.d0],
        top_model: summary.top_models.first().map(|(g, _)| g.to_hex()).unwrap_or_default(),
        mean_log_a: summary.mean_log_a,
        acceptance_rate: summary.acceptance_rate,
        mean_states: mean.n_states(),
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

/// A failed cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellFailure {
    pub n: usize,
    pub rep: usize,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<CellFailure>,
    pub config_hash: String,
}

struct RowSink {
    writer: csv::Writer<std::fs::File>,
}

impl RowSink {
    /// Appends to `path`, writing the header only to an empty file and
    /// refusing files with a different header.
    fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).read(true).open(path)?;
        let empty = file.metadata()?.len() == 0;
        if !empty {
            let mut first = String::new();
            BufReader::new(std::fs::File::open(path)?).read_line(&mut first)?;
            if first.trim_end() != RESULT_COLUMNS.join(",") {
                return Err(Error::Config(format!("{} has a different header: {}", path.display(), first.trim_end())));
            }
        }
        let writer = csv::WriterBuilder::new().has_headers(empty).from_writer(file);
        Ok(Self { writer })
    }

    fn push(&mut self, row: &ResultRow) -> Result<()> {
        self.writer.serialize(row)?;
        self.writer.flush()?;
        Ok(())
    }
}

/// Worker count from [`WORKERS_ENV`], falling back to the available cores.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&w| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs every cell of the plan on a bounded pool. Rows are appended to `out`
/// as cells finish; failed cells are logged and skipped.
pub fn run_consistency(plan: &ExperimentPlan, out: Option<&Path>) -> Result<SweepOutcome> {
    plan.validate()?;
    let truth = make_truth(&plan.truth)?;
    log::info!(
        "truth drawn after {} redraws, signal strength {:?}",
        truth.attempt,
        truth.delta.per_coordinate
    );
    let hash = plan.config_hash();
    let sink = out.map(RowSink::open).transpose()?.map(Mutex::new);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let results: Vec<std::result::Result<ResultRow, CellFailure>> = pool.install(|| {
        plan.cells()
            .into_par_iter()
            .map(|(n, rep)| {
                let res = run_cell(plan, &truth, n, rep, &hash).and_then(|row| {
                    if let Some(sink) = &sink {
                        sink.lock().expect("writer lock").push(&row)?;
                    }
                    Ok(row)
                });
                match res {
                    Ok(row) => {
                        log::info!(
                            "n = {n} rep = {rep}: P(true) = {:.3}, fp = {:.3}, L2 = {:.4} in {:.1}s",
                            row.prob_true_model,
                            row.fp_mass,
                            row.l2_error_of_mean,
                            row.runtime_secs
                        );
                        Ok(row)
                    }
                    Err(e) => {
                        log::error!("cell n = {n} rep = {rep} failed: {e}");
                        Err(CellFailure { n, rep, message: e.to_string() })
                    }
                }
            })
            .collect()
    });
    let (mut rows, mut failures) = (Vec::new(), Vec::new());
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(f) => failures.push(f),
        }
    }
    Ok(SweepOutcome { rows, failures, config_hash: hash })
}

/// Reads a sweep CSV.
pub fn read_results<R: std::io::Read>(reader: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != RESULT_COLUMNS {
        return Err(Error::Config(format!("unexpected result columns: {}", header.join(","))));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_plan() -> ExperimentPlan {
        let mut p = ExperimentPlan::default_experiment();
        p.n_grid = vec![30];
        p.replications = 1;
        p.chains = 2;
        p.iters = 200;
        p.burn_in = 50;
        p.d_n = DimensionRule::Fixed { value: 3 };
        p.l2_points = 200;
        p.mean_states = 10;
        p.truth.delta_samples = 2000;
        p
    }

    #[test]
    fn default_plan_is_valid() {
        let p = ExperimentPlan::default_experiment();
        p.validate().unwrap();
        assert_eq!(p.cells().len(), 40);
        assert_eq!(p.config_hash().len(), 64);
    }

    #[test]
    fn rate_constants() {
        let s = SmoothnessSpec::new_at_boundary(1.0, 1.4, 2).unwrap();
        assert!((log_factor_exponent(&s) - 0.75).abs() < 1e-15);
        assert!((rate_lower(16, &s) - 0.5).abs() < 1e-15);
        assert!((rate_target(16, &s) - 0.5 * 16f64.ln().powf(0.75)).abs() < 1e-15);
    }

    #[test]
    fn dimension_rule_and_assumption_check() {
        let s = SmoothnessSpec::new_at_boundary(1.0, 1.4, 2).unwrap();
        let g = DimensionRule::Growth { c: 0.01, cap: 40 };
        assert_eq!(g.dim(4, &s), 1);
        assert_eq!(g.dim(10_000, &s), 40);
        let mut p = tiny_plan();
        p.d_n = DimensionRule::Fixed { value: 40 };
        p.n_grid = vec![1];
        assert!(p.validate().is_err());
    }

    #[test]
    fn plan_json_round_trip_and_hash() {
        let p = ExperimentPlan::default_experiment();
        let json = serde_json::to_string_pretty(&p).unwrap();
        let back: ExperimentPlan = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.config_hash(), p.config_hash());
        let mut q = p.clone();
        q.seed += 1;
        assert_ne!(q.config_hash(), p.config_hash());
    }

    #[test]
    fn cell_seeds_are_distinct() {
        let p = ExperimentPlan::default_experiment();
        let mut seeds: Vec<u64> = p.cells().iter().map(|&(n, r)| cell_seed(p.seed, n, r)).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 40);
    }

    #[test]
    fn single_cell_plan_gives_one_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.csv");
        let p = tiny_plan();
        let out = run_consistency(&p, Some(&path)).unwrap();
        assert_eq!(out.rows.len(), 1);
        assert!(out.failures.is_empty());
        let row = &out.rows[0];
        let total = row.prob_true_model + row.fp_mass + row.fn_mass + row.other_mass;
        assert!((total - 1.0).abs() < 1e-9);
        assert_eq!(row.config_hash, p.config_hash());
        let back = read_results(std::fs::File::open(&path).unwrap()).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].seed, row.seed);

        run_consistency(&p, Some(&path)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("config_hash")).count(), 1);
        assert_eq!(read_results(text.as_bytes()).unwrap().len(), 2);
    }

    #[test]
    fn failing_cells_are_skipped() {
        let mut p = tiny_plan();
        // The size prior needs n ≥ 3, so the first cell fails.
        p.n_grid = vec![2, 30];
        let out = run_consistency(&p, None).unwrap();
        assert_eq!(out.rows.len(), 1);
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].n, 2);
    }

    #[test]
    fn header_mismatch_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.csv");
        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(run_consistency(&tiny_plan(), Some(&path)).is_err());
    }
}

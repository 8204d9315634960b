use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use segp::eigen::{compute_constants, enumerate_spectrum, truncation_for_tail};
use segp::error::{Error, Result};
use segp::harness::{
    build_report, generate_dataset, make_truth, read_results, run_consistency, ExperimentPlan, TruthSpec,
};
use segp::inference::{mcmc_run, summarize, write_trace_csv, Dataset, McmcConfig};
use segp::pattern::SparsityPattern;
use segp::prior::{sample_gamma, sample_rescaling, size_prior_pmf, PriorConfig};
use segp::rkhs::{decentering, entropy_bounds, Ellipsoid};
use segp::smallball::{centered_small_ball, McConfig, McMethod, TAIL_FRACTION};

#[derive(Parser)]
#[command(name = "segp", version, about = "Rescaled squared-exponential GP regression with variable selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Emit {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Plain,
    Tilted,
    Auto,
}

#[derive(Subcommand)]
enum Command {
    /// Ordered tensor spectrum and its constants.
    Eigen {
        #[arg(long, default_value_t = 1.0)]
        xi: f64,
        #[arg(long, default_value_t = 1.0)]
        a: f64,
        #[arg(long, default_value_t = 1)]
        gamma_size: usize,
        #[arg(long, default_value_t = 20)]
        budget: usize,
        #[arg(long, value_enum, default_value = "json")]
        emit: Emit,
    },
    /// Entropy bounds and decentering over a grid of radii.
    Rkhs {
        #[arg(long, default_value_t = 1.0)]
        xi: f64,
        #[arg(long, default_value_t = 2.0)]
        a: f64,
        #[arg(long, default_value_t = 1)]
        gamma_size: usize,
        /// Comma-separated radii.
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.01,0.001")]
        epsilon_grid: Vec<f64>,
        /// Target coefficients in the eigenbasis.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        target: Vec<f64>,
        #[arg(long, value_enum, default_value = "csv")]
        emit: Emit,
    },
    /// Monte Carlo centered small-ball probability.
    Smallball {
        #[arg(long, default_value_t = 1.0)]
        xi: f64,
        #[arg(long, default_value_t = 2.0)]
        a: f64,
        #[arg(long, default_value_t = 1)]
        gamma_size: usize,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "auto")]
        method: Method,
        #[arg(long, value_enum, default_value = "json")]
        emit: Emit,
    },
    /// Draws `(γ, a)` from the prior.
    PriorSample {
        /// JSON prior block; defaults apply when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        d_n: usize,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "csv")]
        emit: Emit,
    },
    /// Posterior sampling over `(γ, a)` for a dataset.
    Fit {
        /// CSV with columns x1..xd,y.
        #[arg(long)]
        data: PathBuf,
        /// JSON prior block; defaults apply when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Known noise level.
        #[arg(long, required_unless_present = "plugin_sigma")]
        sigma: Option<f64>,
        /// Estimate σ from least-squares residuals instead.
        #[arg(long)]
        plugin_sigma: bool,
        #[arg(long, default_value_t = 10_000)]
        iters: usize,
        #[arg(long, default_value_t = 2_000)]
        burn_in: usize,
        #[arg(long, default_value_t = 4)]
        chains: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `json` prints the posterior summary, `csv` the trace.
        #[arg(long, value_enum, default_value = "json")]
        emit: Emit,
        /// Also persist the trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Synthetic dataset from a truth specification.
    Simulate {
        /// JSON truth block; the default experiment's truth when absent.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        d_n: usize,
        #[arg(long, default_value_t = 0.5)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Selection-consistency sweep.
    Consistency {
        /// JSON plan; the default experiment when absent.
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Rows are appended here as cells finish.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the plan seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Print the plan as JSON and exit.
        #[arg(long)]
        print_plan: bool,
    },
    /// Trend table and contraction slope for a sweep CSV.
    Report {
        #[arg(long)]
        results: PathBuf,
        /// Writes `trend.csv` and `report.json` here; prints JSON otherwise.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        bootstrap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(File::open(path)?)?)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn print_csv<T: Serialize>(rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(io::stdout().lock());
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn emit<T: Serialize>(how: Emit, rows: &[T]) -> Result<()> {
    match how {
        Emit::Json => print_json(&rows),
        Emit::Csv => print_csv(rows),
    }
}

#[derive(Serialize)]
struct SpectrumRow {
    index: usize,
    multi_index: String,
    degree: u32,
    eigenvalue: f64,
}

#[derive(Serialize)]
struct RkhsRow {
    epsilon: f64,
    m_star: Option<f64>,
    tau: Option<String>,
    log_entropy_upper: Option<f64>,
    log_entropy_lower: Option<f64>,
    entropy_note: Option<String>,
    decentering: f64,
    multiplier: f64,
}

#[derive(Serialize)]
struct PriorRow {
    draw: usize,
    gamma: String,
    size: usize,
    a: f64,
}

fn model(gamma_size: usize) -> Result<SparsityPattern> {
    if gamma_size == 0 {
        return Err(Error::EmptyModel);
    }
    Ok(SparsityPattern::full(gamma_size))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Eigen { xi, a, gamma_size, budget, emit: how } => {
            let c = compute_constants(xi, a)?;
            let spec = enumerate_spectrum(&model(gamma_size)?, &c, budget)?;
            match how {
                Emit::Json => print_json(&spec),
                Emit::Csv => {
                    let rows: Vec<SpectrumRow> = spec
                        .entries
                        .iter()
                        .enumerate()
                        .map(|(index, e)| SpectrumRow {
                            index,
                            multi_index: e.multi_index.iter().map(u32::to_string).collect::<Vec<_>>().join(" "),
                            degree: e.degree,
                            eigenvalue: e.eigenvalue,
                        })
                        .collect();
                    print_csv(&rows)
                }
            }
        }
        Command::Rkhs { xi, a, gamma_size, epsilon_grid, target, emit: how } => {
            let c = compute_constants(xi, a)?;
            let gamma = model(gamma_size)?;
            let ell = Ellipsoid::from_spectrum(&enumerate_spectrum(&gamma, &c, target.len().max(1))?);
            let rows = epsilon_grid
                .iter()
                .map(|&eps| {
                    let dec = decentering(&ell, &target, eps)?;
                    let (ent, note) = match entropy_bounds(&ell, eps) {
                        Ok(e) => (Some(e), None),
                        Err(e) => (None, Some(e.to_string())),
                    };
                    Ok(RkhsRow {
                        epsilon: eps,
                        m_star: ent.as_ref().map(|e| e.m_star),
                        tau: ent.as_ref().map(|e| e.tau.to_string()),
                        log_entropy_upper: ent.as_ref().map(|e| e.log_upper),
                        log_entropy_lower: ent.as_ref().map(|e| e.log_lower),
                        entropy_note: note,
                        decentering: dec.inf_sq_norm,
                        multiplier: dec.multiplier,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            emit(how, &rows)
        }
        Command::Smallball { xi, a, gamma_size, epsilon, samples, seed, method, emit: how } => {
            let c = compute_constants(xi, a)?;
            let j = truncation_for_tail(gamma_size, &c, TAIL_FRACTION * epsilon * epsilon)?;
            let ell = Ellipsoid::from_spectrum(&enumerate_spectrum(&model(gamma_size)?, &c, j)?);
            let method = match method {
                Method::Plain => McMethod::Plain,
                Method::Tilted => McMethod::Tilted,
                Method::Auto => McMethod::Auto,
            };
            let est = centered_small_ball(&ell, epsilon, &McConfig::new(samples, seed).with_method(method))?;
            emit(how, &[est])
        }
        Command::PriorSample { config, d_n, n, count, seed, emit: how } => {
            let prior: PriorConfig = config.as_deref().map(read_json).transpose()?.unwrap_or_default();
            let sp = prior.sparsity(d_n, n);
            let rs = prior.rescaling()?;
            log::info!("size prior pmf: {:?}", size_prior_pmf(&sp)?);
            let rows = (0..count)
                .map(|i| {
                    let s = seed.wrapping_add(2 * i as u64);
                    let gamma = sample_gamma(&sp, s)?;
                    let a = sample_rescaling(&rs, gamma.cardinality().max(1), s + 1)?;
                    Ok(PriorRow { draw: i, gamma: gamma.to_hex(), size: gamma.cardinality(), a })
                })
                .collect::<Result<Vec<_>>>()?;
            emit(how, &rows)
        }
        Command::Fit { data, config, sigma, plugin_sigma, iters, burn_in, chains, seed, emit: how, trace } => {
            let prior: PriorConfig = config.as_deref().map(read_json).transpose()?.unwrap_or_default();
            let mut ds = Dataset::read_csv(File::open(&data)?, sigma.unwrap_or(1.0))?;
            if plugin_sigma {
                let s = ds.plugin_sigma()?;
                log::info!("plug-in sigma {s:.4}");
                ds = ds.with_sigma(s)?;
            }
            let cfg = McmcConfig { iters, chains, seed, ..McmcConfig::default() };
            let traces = mcmc_run(Arc::new(ds), &prior, &cfg)?;
            if let Some(path) = trace {
                write_trace_csv(&traces, File::create(path)?)?;
            }
            match how {
                Emit::Json => print_json(&summarize(&traces, None, burn_in)?),
                Emit::Csv => write_trace_csv(&traces, io::stdout().lock()),
            }
        }
        Command::Simulate { truth, n, d_n, sigma, seed, out } => {
            let spec: TruthSpec = match truth {
                Some(p) => read_json(&p)?,
                None => ExperimentPlan::default_experiment().truth,
            };
            let t = make_truth(&spec)?;
            let design = segp::eigen::DesignSpec::new(d_n, spec.xi)?;
            let ds = generate_dataset(&t, &design, n, sigma, seed)?;
            match out {
                Some(p) => ds.write_csv(File::create(p)?),
                None => ds.write_csv(io::stdout().lock()),
            }
        }
        Command::Consistency { plan, out, seed, print_plan } => {
            let mut plan: ExperimentPlan = match plan {
                Some(p) => read_json(&p)?,
                None => ExperimentPlan::default_experiment(),
            };
            if let Some(s) = seed {
                plan.seed = s;
            }
            if print_plan {
                return print_json(&plan);
            }
            let outcome = run_consistency(&plan, Some(&out))?;
            eprintln!(
                "{} rows written to {} ({} failed cells), config hash {}",
                outcome.rows.len(),
                out.display(),
                outcome.failures.len(),
                outcome.config_hash
            );
            Ok(())
        }
        Command::Report { results, out_dir, bootstrap, seed } => {
            let rows = read_results(File::open(&results)?)?;
            let report = build_report(&rows, bootstrap, seed);
            match out_dir {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    let mut w = csv::Writer::from_path(dir.join("trend.csv"))?;
                    for t in &report.trend {
                        w.serialize(t)?;
                    }
                    w.flush()?;
                    serde_json::to_writer_pretty(File::create(dir.join("report.json"))?, &report)?;
                    Ok(())
                }
                None => print_json(&report),
            }
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

//! Simulates a sparse regression problem and samples the posterior over
//! relevant coordinates and rescaling level.

use std::sync::Arc;

use segp::eigen::DesignSpec;
use segp::harness::{generate_dataset, make_truth, ExperimentPlan};
use segp::inference::{decoupled_select, default_candidates, mcmc_run, posterior_mean_predict, summarize, McmcConfig, ProjectionConfig};

fn main() -> segp::error::Result<()> {
    let plan = ExperimentPlan::default_experiment();
    let truth = make_truth(&plan.truth)?;
    let design = DesignSpec::new(6, 1.0)?;
    let data = Arc::new(generate_dataset(&truth, &design, 150, 0.5, 11)?);

    let cfg = McmcConfig { iters: 3_000, chains: 2, seed: 5, ..McmcConfig::default() };
    let traces = mcmc_run(data.clone(), &plan.prior, &cfg)?;
    let burn_in = 500;
    let star = truth.gamma_star(6)?;
    let summary = summarize(&traces, Some(&star), burn_in)?;
    println!("inclusion probabilities {:?}", summary.inclusion_probs.iter().map(|p| format!("{p:.2}")).collect::<Vec<_>>());
    println!("P(γ = γ*) = {:.3}, acceptance {:.3}", summary.prob_true_model.unwrap_or(0.0), summary.acceptance_rate);
    for (g, p) in summary.top_models.iter().take(3) {
        println!("  {g}  {p:.3}");
    }

    let predict = |pts: &[Vec<f64>]| posterior_mean_predict(&traces, data.clone(), burn_in, 50, pts).expect("prediction");
    let candidates = default_candidates(&traces, burn_in)?;
    let sel = decoupled_select(&predict, &design, 0.01, &|k| k as f64, &candidates, &ProjectionConfig::default())?;
    println!("decoupled selection picks {}", sel.gamma);
    Ok(())
}

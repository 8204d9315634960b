//! A reduced selection-consistency sweep with its trend table and
//! contraction-slope fit. Set `SEGP_WORKERS` to bound the worker pool.

use segp::harness::{build_report, run_consistency, DimensionRule, ExperimentPlan};

fn main() -> segp::error::Result<()> {
    let mut plan = ExperimentPlan::default_experiment();
    plan.n_grid = vec![40, 80, 160];
    plan.replications = 3;
    plan.chains = 2;
    plan.iters = 1_500;
    plan.burn_in = 300;
    plan.d_n = DimensionRule::Fixed { value: 5 };
    plan.l2_points = 2_000;
    plan.mean_states = 30;

    let out = std::env::temp_dir().join("segp_consistency_example.csv");
    let _ = std::fs::remove_file(&out);
    let outcome = run_consistency(&plan, Some(&out))?;
    println!("{} rows in {}", outcome.rows.len(), out.display());

    let report = build_report(&outcome.rows, 1000, 0);
    for t in &report.trend {
        println!(
            "n = {:>4}: P(true) {:.3}  fp {:.3}  L2 {:.4}",
            t.n, t.median_prob_true_model, t.median_fp_mass, t.median_l2_error
        );
    }
    if let Some(s) = report.slope {
        println!("slope {:.3} [{:.3}, {:.3}], target {:.3}", s.slope, s.ci_low, s.ci_high, s.target.unwrap_or(f64::NAN));
    }
    Ok(())
}

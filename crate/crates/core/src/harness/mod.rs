//! Synthetic truths, the consistency sweep and its reports.

pub mod plan;
pub mod report;
pub mod truth;

pub use plan::{read_results, run_cell, run_consistency, worker_count, DimensionRule, ExperimentPlan, ResultRow, SweepOutcome};
pub use report::{build_report, contraction_slope, fit_slope, trend_checks, trend_summary, Report, SlopeFit, TrendRow};
pub use truth::{generate_dataset, make_truth, signal_strength, Construction, Truth, TruthSpec};

//! Posterior computation over sparsity patterns and rescaling levels.

mod data;
pub mod marginal;
pub mod mh;
pub mod sampler;
pub mod select;
pub mod summary;

pub use data::Dataset;
pub use marginal::{log_marginal_likelihood, GpFactor, MarginalModel};
pub use sampler::{mcmc_run, run_chain, ChainState, ChainTrace, McmcConfig, MoveMix, TraceRow};
pub use select::{decoupled_select, default_candidates, ProjectionConfig, Selection};
pub use summary::{
    classify, posterior_mean_predict, summarize, thin_states, write_trace_csv, ModelClass, PosteriorMean,
    PosteriorSummary,
};

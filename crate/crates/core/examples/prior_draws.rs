//! Draws from the hierarchical prior: model size, pattern, rescaling level
//! and a sample path.

use segp::eigen::DesignSpec;
use segp::prior::{sample_prior_function, size_prior_pmf, PriorConfig, PriorFunction, SizePrior};

fn main() -> segp::error::Result<()> {
    let prior = PriorConfig { size_prior: SizePrior::Penalized { k: 1.0 }, ..PriorConfig::default() };
    let (d_n, n) = (8, 200);
    let sp = prior.sparsity(d_n, n);
    let pmf = size_prior_pmf(&sp)?;
    println!("q(d) = {:?}", pmf.iter().map(|p| format!("{p:.3}")).collect::<Vec<_>>());

    let rs = prior.rescaling()?;
    let design = DesignSpec::new(d_n, prior.xi)?;
    for seed in 0..5 {
        let draw = sample_prior_function(&sp, &rs, &design, 200, seed)?;
        let x = vec![0.5; d_n];
        let kind = match &draw.function {
            PriorFunction::Constant(_) => "constant",
            PriorFunction::Series(_) => "series",
        };
        println!("γ = {} a = {:.3} {kind} f(0.5·1) = {:.4}", draw.gamma, draw.a, draw.function.eval(&x)?);
    }
    Ok(())
}

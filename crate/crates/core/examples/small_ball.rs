//! Monte Carlo small-ball probabilities of the Gaussian process and the
//! assembled concentration function.

use segp::eigen::{compute_constants, enumerate_spectrum, truncation_for_tail};
use segp::pattern::SparsityPattern;
use segp::rkhs::Ellipsoid;
use segp::smallball::{
    centered_small_ball, concentration, shifted_small_ball, ExponentConstants, McConfig, McMethod, TAIL_FRACTION,
};

fn main() -> segp::error::Result<()> {
    let c = compute_constants(1.0, 2.0)?;
    let eps = 0.1;
    let j = truncation_for_tail(1, &c, TAIL_FRACTION * eps * eps)?;
    let ell = Ellipsoid::from_spectrum(&enumerate_spectrum(&SparsityPattern::full(1), &c, j)?);

    for method in [McMethod::Plain, McMethod::Tilted] {
        let est = centered_small_ball(&ell, eps, &McConfig::new(200_000, 1).with_method(method))?;
        if est.censored {
            println!("{method:?}: no hits, -log P > {:.4}", est.neg_log_prob);
        } else {
            println!("{method:?}: -log P = {:.4} ± {:.4}", est.neg_log_prob, est.mc_std_err);
        }
    }

    let target = [0.3, 0.1];
    let shifted = shifted_small_ball(&ell, &target, eps, &McConfig::new(200_000, 2))?;
    println!("shifted ball: -log P = {:.4} ± {:.4}", shifted.neg_log_prob, shifted.mc_std_err);

    let phi = concentration(&ell, &target, eps, &McConfig::new(200_000, 3), &ExponentConstants::default())?;
    println!(
        "phi({eps}) = {:.4} (decentering {:.4} + centered {:.4})",
        phi.phi, phi.decentering, phi.centered_exponent
    );
    Ok(())
}

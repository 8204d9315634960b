//! Metric-entropy bounds of the RKHS unit ball and the decentering term of
//! the concentration function.

use segp::eigen::{compute_constants, enumerate_spectrum};
use segp::pattern::SparsityPattern;
use segp::rkhs::{decentering, entropy_bounds, lambert_w, Ellipsoid};

fn main() -> segp::error::Result<()> {
    let c = compute_constants(1.0, 2.0)?;
    let ell = Ellipsoid::from_spectrum(&enumerate_spectrum(&SparsityPattern::full(1), &c, 40)?);
    println!("{:>8} {:>10} {:>6} {:>12} {:>12}", "eps", "m*", "tau", "log N upper", "log N lower");
    for k in 2..=6 {
        let eps = 10f64.powi(-k);
        let e = entropy_bounds(&ell, eps)?;
        println!("{eps:>8.0e} {:>10.4} {:>6} {:>12.3} {:>12.3}", e.m_star, e.tau, e.log_upper, e.log_lower);
    }

    let target = [0.8, 0.0, 0.3, 0.0, 0.1];
    for eps in [0.5, 0.2, 0.1, 0.05] {
        let d = decentering(&ell, &target, eps)?;
        println!("eps = {eps}: inf ‖h‖² = {:.5}, shrinkage ν = {:.4e}", d.inf_sq_norm, d.multiplier);
    }
    println!("W(1) = {:.12}", lambert_w(1.0)?);
    Ok(())
}

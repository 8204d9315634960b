//! Eigen-decomposition of the rescaled squared-exponential kernel under a
//! Gaussian design: constants, ordered spectrum and Mercer reconstruction.

use segp::eigen::{compute_constants, enumerate_spectrum, kernel_eval, tail_mass, truncation_for_tail};
use segp::pattern::SparsityPattern;

fn main() -> segp::error::Result<()> {
    let (xi, a) = (1.0, 1.0);
    let c = compute_constants(xi, a)?;
    println!("v1 = {:.6}, v2 = {:.6}, v3 = {:.6}, B = {:.6}", c.v1, c.v2, c.v3, c.b);

    let gamma = SparsityPattern::full(2);
    let spectrum = enumerate_spectrum(&gamma, &c, 10)?;
    for e in &spectrum.entries {
        println!("{:?}  degree {}  mu = {:.6e}", e.multi_index, e.degree, e.eigenvalue);
    }

    let j = truncation_for_tail(2, &c, 1e-8)?;
    let full = enumerate_spectrum(&gamma, &c, j)?;
    println!("J = {j} leaves tail {:.3e}", tail_mass(2, &c, j));
    let (s, t) = ([0.3, -0.5], [1.1, 0.2]);
    println!("k(s,t) = {:.10}, Mercer sum = {:.10}", kernel_eval(&gamma, a, &s, &t), full.mercer_sum(&s, &t)?);
    Ok(())
}

//! A generic Metropolis–Hastings step.

use rand::Rng;

use crate::error::Result;

/// Unnormalized log density over a state space.
pub trait Target {
    type State: Clone;

    fn log_density(&mut self, state: &Self::State) -> Result<f64>;
}

/// A proposal kernel returning the candidate together with
/// `log q(current | candidate) - log q(candidate | current)`.
pub trait Proposal<S> {
    fn propose<R: Rng + ?Sized>(&mut self, current: &S, rng: &mut R) -> (S, f64);
}

/// `min(1, exp(log_ratio))`.
pub fn acceptance_probability(log_ratio: f64) -> f64 {
    if log_ratio >= 0.0 {
        1.0
    } else {
        log_ratio.exp()
    }
}

/// Chain position with its cached log density.
#[derive(Clone, Debug)]
pub struct Position<S> {
    pub state: S,
    pub log_density: f64,
}

/// One Metropolis–Hastings transition. Returns whether the move was accepted.
pub fn mh_step<T, P, R>(target: &mut T, proposal: &mut P, pos: &mut Position<T::State>, rng: &mut R) -> Result<bool>
where
    T: Target,
    P: Proposal<T::State>,
    R: Rng + ?Sized,
{
    let (candidate, log_q) = proposal.propose(&pos.state, rng);
    let u: f64 = rng.gen();
    let cand_ld = target.log_density(&candidate)?;
    let log_ratio = cand_ld - pos.log_density + log_q;
    if u < acceptance_probability(log_ratio) {
        pos.state = candidate;
        pos.log_density = cand_ld;
        Ok(true)
    } else {
        Ok(false)
    }
}

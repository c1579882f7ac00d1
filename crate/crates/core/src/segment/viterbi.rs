//! Log-domain Viterbi decoding for the two-state sticky Gaussian HMM.

use super::{EmissionParams, State};
use crate::num::Float;

/// Per-state Gaussian log-density, indexed by [`State::index`].
pub fn emission_log_probs<F: Float>(x: F, em: &EmissionParams<F>) -> [F; 2] {
    let two_pi = F::lit(std::f64::consts::TAU);
    let lp = |mean: F, var: F| {
        let d = x - mean;
        -F::lit(0.5) * ((two_pi * var).ln() + d * d / var)
    };
    [
        lp(em.mean_exploit, em.var_exploit),
        lp(em.mean_explore, em.var_explore),
    ]
}

/// `[log P(same state), log P(switch)]` for stay probability `rho`.
pub fn transition_log_probs<F: Float>(rho: F) -> [F; 2] {
    [rho.ln(), (F::one() - rho).ln()]
}

/// MAP state path under a uniform initial distribution and a symmetric
/// sticky transition with stay probability `rho`.
///
/// Scores accumulate left to right as `(prev + transition) + emission`.
/// Exact ties resolve toward X, both when choosing a predecessor and when
/// picking the final state.
pub fn viterbi<F: Float>(z: &[F], em: &EmissionParams<F>, rho: F) -> Vec<State> {
    if z.is_empty() {
        return Vec::new();
    }
    let [stay, switch] = transition_log_probs(rho);
    let init = F::lit(0.5).ln();
    let n = z.len();
    let mut back = vec![[0u8; 2]; n];

    let e0 = emission_log_probs(z[0], em);
    let mut delta = [init + e0[0], init + e0[1]];

    for r in 1..n {
        let emit = emission_log_probs(z[r], em);
        let mut next = [F::zero(); 2];
        for j in 0..2 {
            let from_x = delta[0] + if j == 0 { stay } else { switch };
            let from_e = delta[1] + if j == 1 { stay } else { switch };
            let (best, arg) = if from_e > from_x { (from_e, 1) } else { (from_x, 0) };
            next[j] = best + emit[j];
            back[r][j] = arg;
        }
        delta = next;
    }

    let mut state = if delta[1] > delta[0] { 1u8 } else { 0u8 };
    let mut path = vec![State::Exploit; n];
    for r in (0..n).rev() {
        path[r] = State::from_index(state as usize);
        if r > 0 {
            state = back[r][state as usize];
        }
    }
    path
}

/// Joint log-probability of a given path, accumulated in the same order as
/// [`viterbi`].
pub fn path_log_prob<F: Float>(z: &[F], path: &[State], em: &EmissionParams<F>, rho: F) -> F {
    assert_eq!(z.len(), path.len());
    if z.is_empty() {
        return F::zero();
    }
    let [stay, switch] = transition_log_probs(rho);
    let mut score = F::lit(0.5).ln() + emission_log_probs(z[0], em)[path[0].index()];
    for r in 1..z.len() {
        let t = if path[r] == path[r - 1] { stay } else { switch };
        score = (score + t) + emission_log_probs(z[r], em)[path[r].index()];
    }
    score
}

//! E/X segmentation of processed slope series with a GMM-initialized sticky
//! two-state Gaussian HMM.

mod gmm;
mod runs;
mod viterbi;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Float;

pub use gmm::{fit_two_component, init_emissions, GmmOptions, Mixture, VARIANCE_FLOOR};
pub use runs::{extract_cycles, runs, smooth_min_run, Cycle, Run};
pub use viterbi::{emission_log_probs, path_log_prob, transition_log_probs, viterbi};

/// Traces with fewer rows yield no cycles.
pub const MIN_CYCLE_ROWS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum State {
    /// X-phase: reuse of already-recruited neurons.
    #[serde(rename = "X")]
    Exploit,
    /// E-phase: recruitment of new neurons.
    #[serde(rename = "E")]
    Explore,
}

impl State {
    pub fn index(self) -> usize {
        match self {
            State::Exploit => 0,
            State::Explore => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 1 {
            State::Explore
        } else {
            State::Exploit
        }
    }

    pub fn symbol(self) -> char {
        match self {
            State::Explore => 'E',
            State::Exploit => 'X',
        }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

/// Gaussian emission parameters; E is the larger-mean state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmissionParams<F> {
    pub mean_explore: F,
    pub mean_exploit: F,
    pub var_explore: F,
    pub var_exploit: F,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SegmentationError {
    #[error("all observations are identical")]
    DegenerateSeries,
    #[error("need at least 2 rows to fit emissions, got {rows}")]
    TooShort { rows: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HmmConfig {
    pub rho: f64,
    pub min_run: usize,
    pub seed: u64,
    pub em_max_iter: usize,
    pub em_tol: f64,
}

impl Default for HmmConfig {
    fn default() -> Self {
        HmmConfig {
            rho: 0.95,
            min_run: 2,
            seed: 0,
            em_max_iter: 200,
            em_tol: 1e-6,
        }
    }
}

impl HmmConfig {
    pub fn gmm_options(&self) -> GmmOptions {
        GmmOptions {
            seed: self.seed,
            max_iter: self.em_max_iter,
            tol: self.em_tol,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation<F> {
    /// Smoothed per-row states.
    pub states: Vec<State>,
    pub runs: Vec<Run>,
    pub cycles: Vec<Cycle>,
    /// `None` when the series was degenerate or too short to fit.
    pub emissions: Option<EmissionParams<F>>,
}

impl<F> Segmentation<F> {
    pub fn explore_segments(&self) -> usize {
        self.runs.iter().filter(|r| r.state == State::Explore).count()
    }
}

/// Full segmentation: emission init, Viterbi, smoothing, cycle extraction.
///
/// Flat or single-row series decode as pure X. Traces shorter than
/// [`MIN_CYCLE_ROWS`] keep their decoded states but produce no cycles.
pub fn segment<F: Float>(z: &[F], cfg: &HmmConfig) -> Segmentation<F> {
    let emissions = init_emissions(z, &cfg.gmm_options()).ok();
    let decoded = match &emissions {
        Some(em) => viterbi(z, em, F::lit(cfg.rho)),
        None => vec![State::Exploit; z.len()],
    };
    let states = smooth_min_run(&decoded, cfg.min_run);
    let cycles = if z.len() < MIN_CYCLE_ROWS {
        Vec::new()
    } else {
        extract_cycles(&states)
    };
    Segmentation {
        runs: runs(&states),
        states,
        cycles,
        emissions,
    }
}

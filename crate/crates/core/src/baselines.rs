//! Label-free baselines computed from the same traces: length, entropy sum,
//! top-20% row-entropy fraction, and mean log-probability.

use serde::Serialize;
use thiserror::Error;

use crate::cache::TraceCache;
use crate::num::Float;
use crate::stats;

pub const TOP_ENTROPY_QUANTILE: f64 = 0.8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BaselineError {
    #[error("token {0} has no entropy")]
    MissingEntropy(usize),
    #[error("token {0} has no log-probability")]
    MissingLogprob(usize),
    #[error("trace has no tokens")]
    EmptyTrace,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BaselineScores<F> {
    pub length: usize,
    pub hes: F,
    pub top20_fraction: F,
    pub mean_logprob: F,
}

fn entropies(cache: &TraceCache) -> Result<Vec<f64>, BaselineError> {
    cache
        .tokens
        .iter()
        .map(|t| t.entropy.ok_or(BaselineError::MissingEntropy(t.position)))
        .collect()
}

pub fn length(cache: &TraceCache) -> usize {
    cache.tokens.len()
}

/// Plain sum of per-token entropies.
pub fn entropy_sum<F: Float>(cache: &TraceCache) -> Result<F, BaselineError> {
    Ok(entropies(cache)?.into_iter().map(F::lit).sum())
}

/// Fraction of rows whose mean token entropy is at or above the
/// linear-interpolated 80th percentile of row entropies.
pub fn top20_entropy_fraction<F: Float>(cache: &TraceCache) -> Result<F, BaselineError> {
    if cache.tokens.is_empty() {
        return Err(BaselineError::EmptyTrace);
    }
    let ent = entropies(cache)?;
    let rows: Vec<F> = ent
        .chunks(cache.row_width.max(1))
        .map(|c| c.iter().copied().map(F::lit).sum::<F>() / F::from_usize_lossy(c.len()))
        .collect();
    let cut = stats::percentile_linear(&rows, F::lit(TOP_ENTROPY_QUANTILE)).expect("nonempty");
    let above = rows.iter().filter(|&&r| r >= cut).count();
    Ok(F::from_usize_lossy(above) / F::from_usize_lossy(rows.len()))
}

pub fn mean_logprob<F: Float>(cache: &TraceCache) -> Result<F, BaselineError> {
    if cache.tokens.is_empty() {
        return Err(BaselineError::EmptyTrace);
    }
    let lps: Vec<F> = cache
        .tokens
        .iter()
        .map(|t| {
            t.logprob
                .map(F::lit)
                .ok_or(BaselineError::MissingLogprob(t.position))
        })
        .collect::<Result<_, _>>()?;
    Ok(lps.iter().copied().sum::<F>() / F::from_usize_lossy(lps.len()))
}

pub fn compute_baselines<F: Float>(cache: &TraceCache) -> Result<BaselineScores<F>, BaselineError> {
    Ok(BaselineScores {
        length: length(cache),
        hes: entropy_sum(cache)?,
        top20_fraction: top20_entropy_fraction(cache)?,
        mean_logprob: mean_logprob(cache)?,
    })
}

//! Good-Mass Fraction scoring of responses, models, and training samples.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::cache::{NeuronKey, TraceCache};
use crate::num::Float;
use crate::weights::NeuronWeights;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScoringError {
    #[error("no responses to score")]
    EmptySet,
    #[error("{} scored samples were part of the weight mini-set (first: {})", .0.len(), .0[0])]
    MinisetOverlap(Vec<String>),
    #[error("retained fraction {0} must lie in (0, 1]")]
    InvalidFraction(String),
}

/// Response-level neuron masses `b_k = sum_t a_{k,t}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseSummary<F> {
    pub trace_id: String,
    pub prompt_id: String,
    pub mass: BTreeMap<NeuronKey, F>,
}

impl<F: Float> ResponseSummary<F> {
    pub fn from_cache(cache: &TraceCache) -> Self {
        let mut mass: BTreeMap<NeuronKey, f64> = BTreeMap::new();
        for tok in &cache.tokens {
            for &(k, m) in &tok.activations {
                *mass.entry(k).or_insert(0.0) += m;
            }
        }
        ResponseSummary {
            trace_id: cache.trace_id.clone(),
            prompt_id: cache.prompt_id.clone(),
            mass: mass.into_iter().map(|(k, m)| (k, F::lit(m))).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScoreRecord<F> {
    pub score: F,
    pub reward: F,
    pub bad: F,
    pub pos_mass: F,
    pub abs_mass: F,
    pub tot_mass: F,
}

/// Fraction of weighted mass that sits on positively weighted neurons.
/// Summation runs in ascending key order.
pub fn score_response<F: Float>(
    summary: &ResponseSummary<F>,
    weights: &NeuronWeights<F>,
) -> ScoreRecord<F> {
    let mut pos = F::zero();
    let mut abs = F::zero();
    let mut tot = F::zero();
    for (&k, &b) in &summary.mass {
        tot = tot + b;
        let w = weights.weight(k);
        if w > F::zero() {
            pos = pos + b * w;
        }
        abs = abs + b * w.abs();
    }
    let score = if abs > F::zero() { pos / abs } else { F::zero() };
    let (reward, bad) = if tot > F::zero() {
        (pos / tot, (abs - pos) / tot)
    } else {
        (F::zero(), F::zero())
    };
    ScoreRecord {
        score,
        reward,
        bad,
        pos_mass: pos,
        abs_mass: abs,
        tot_mass: tot,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelScore<F> {
    pub mean: F,
    /// Per-prompt mean over runs, ascending prompt id.
    pub per_prompt: Vec<(String, F)>,
}

/// Mean score over prompts, where each prompt is first averaged over its
/// runs. Runs are summed in ascending trace id so the result does not
/// depend on input order.
pub fn aggregate_model_score<F: Float>(
    scored: &[(String, String, F)],
) -> Result<ModelScore<F>, ScoringError> {
    if scored.is_empty() {
        return Err(ScoringError::EmptySet);
    }
    let mut by_prompt: BTreeMap<&str, Vec<(&str, F)>> = BTreeMap::new();
    for (prompt, trace, s) in scored {
        by_prompt.entry(prompt).or_default().push((trace, *s));
    }
    let per_prompt: Vec<(String, F)> = by_prompt
        .into_iter()
        .map(|(p, mut runs)| {
            runs.sort_by(|a, b| a.0.cmp(b.0));
            let sum: F = runs.iter().map(|r| r.1).sum();
            (p.to_string(), sum / F::from_usize_lossy(runs.len()))
        })
        .collect();
    let mean = per_prompt.iter().map(|p| p.1).sum::<F>() / F::from_usize_lossy(per_prompt.len());
    Ok(ModelScore { mean, per_prompt })
}

pub fn score_model<F: Float>(
    summaries: &[ResponseSummary<F>],
    weights: &NeuronWeights<F>,
) -> Result<ModelScore<F>, ScoringError> {
    let scored: Vec<_> = summaries
        .iter()
        .map(|s| {
            (
                s.prompt_id.clone(),
                s.trace_id.clone(),
                score_response(s, weights).score,
            )
        })
        .collect();
    aggregate_model_score(&scored)
}

/// Orders `(id, score)` by descending score, then ascending id.
pub fn rank_descending<F: Float>(items: &mut [(String, F)]) {
    items.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
}

/// Scores a candidate training pool with weights learned elsewhere. Fails
/// if any pool trace was part of the weights' mini-set.
pub fn score_data<F: Float>(
    pool: &[ResponseSummary<F>],
    weights: &NeuronWeights<F>,
) -> Result<Vec<(String, F)>, ScoringError> {
    let overlap: BTreeSet<String> = pool
        .iter()
        .filter(|s| weights.trace_ids.contains(&s.trace_id))
        .map(|s| s.trace_id.clone())
        .collect();
    if !overlap.is_empty() {
        return Err(ScoringError::MinisetOverlap(overlap.into_iter().collect()));
    }
    let mut out: Vec<(String, F)> = pool
        .iter()
        .map(|s| (s.trace_id.clone(), score_response(s, weights).score))
        .collect();
    rank_descending(&mut out);
    Ok(out)
}

/// Number of samples kept by a top-`fraction` cut of `n`.
pub fn retained_count(n: usize, fraction: f64) -> Result<usize, ScoringError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(ScoringError::InvalidFraction(fraction.to_string()));
    }
    Ok(((n as f64) * fraction + 1e-9).floor() as usize)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurationManifest {
    pub fraction: f64,
    pub total: usize,
    pub retained: usize,
    pub ids: Vec<String>,
}

/// Keeps the top `fraction` of an already ranked list.
pub fn curate<F: Float>(
    ranked: &[(String, F)],
    fraction: f64,
) -> Result<CurationManifest, ScoringError> {
    let keep = retained_count(ranked.len(), fraction)?;
    Ok(CurationManifest {
        fraction,
        total: ranked.len(),
        retained: keep,
        ids: ranked[..keep].iter().map(|r| r.0.clone()).collect(),
    })
}

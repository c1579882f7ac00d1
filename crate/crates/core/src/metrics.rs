//! Ranking-quality metrics and best-of-n selection.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Float;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("no candidates")]
    EmptySet,
    #[error("inputs have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("input is constant")]
    ConstantInput,
}

/// Sample Pearson correlation (two-pass, centered).
pub fn pearson<F: Float>(xs: &[F], ys: &[F]) -> Result<F, MetricError> {
    if xs.len() != ys.len() {
        return Err(MetricError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(MetricError::TooFewPoints(xs.len()));
    }
    let n = F::from_usize_lossy(xs.len());
    let mx = xs.iter().copied().sum::<F>() / n;
    let my = ys.iter().copied().sum::<F>() / n;
    let (mut sxy, mut sxx, mut syy) = (F::zero(), F::zero(), F::zero());
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx == F::zero() || syy == F::zero() {
        return Err(MetricError::ConstantInput);
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    Ok(r.max(-F::one()).min(F::one()))
}

/// One model variant on one benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate<F> {
    pub id: String,
    pub score: F,
    /// Accuracy in percentage points.
    pub accuracy: F,
}

/// Candidates ordered by descending score, ties by ascending id.
fn by_score<F: Float>(cands: &[Candidate<F>]) -> Vec<&Candidate<F>> {
    let mut order: Vec<&Candidate<F>> = cands.iter().collect();
    order.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.id.cmp(&b.id))
    });
    order
}

fn best_accuracy<F: Float>(cands: &[Candidate<F>]) -> F {
    cands
        .iter()
        .map(|c| c.accuracy)
        .fold(F::neg_infinity(), |a, b| if b > a { b } else { a })
}

/// Accuracy gap between the truly best candidate and the top-scored one.
pub fn regret_at_1<F: Float>(cands: &[Candidate<F>]) -> Result<F, MetricError> {
    if cands.is_empty() {
        return Err(MetricError::EmptySet);
    }
    let top = by_score(cands)[0];
    Ok(best_accuracy(cands) - top.accuracy)
}

/// Whether a most-accurate candidate is among the `k` best by score.
pub fn hit_at_k<F: Float>(cands: &[Candidate<F>], k: usize) -> Result<bool, MetricError> {
    if cands.is_empty() {
        return Err(MetricError::EmptySet);
    }
    let best = best_accuracy(cands);
    Ok(by_score(cands)
        .iter()
        .take(k)
        .any(|c| c.accuracy == best))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankingReport<F> {
    pub pearson_r: Option<F>,
    pub regret_at_1: F,
    pub hit_at_3: bool,
    pub candidates: Vec<Candidate<F>>,
}

/// All three metrics for one (series, benchmark) group. Pearson is `None`
/// when undefined (fewer than two candidates or constant input).
pub fn ranking_report<F: Float>(cands: &[Candidate<F>]) -> Result<RankingReport<F>, MetricError> {
    let xs: Vec<F> = cands.iter().map(|c| c.score).collect();
    let ys: Vec<F> = cands.iter().map(|c| c.accuracy).collect();
    let mut sorted = cands.to_vec();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(RankingReport {
        pearson_r: pearson(&xs, &ys).ok(),
        regret_at_1: regret_at_1(cands)?,
        hit_at_3: hit_at_k(cands, 3)?,
        candidates: sorted,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectionMode {
    Best,
    Worst,
    Random(u64),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Selection<F> {
    pub prompt_id: String,
    pub trace_id: String,
    pub score: F,
}

/// Picks one response per prompt. Prompts are visited in ascending id and
/// candidates considered in ascending trace id; score ties go to the lowest
/// trace id.
pub fn best_of_n<F: Float>(
    per_prompt: &BTreeMap<String, Vec<(String, F)>>,
    mode: SelectionMode,
) -> Vec<Selection<F>> {
    let mut rng = match mode {
        SelectionMode::Random(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };
    per_prompt
        .iter()
        .filter(|(_, c)| !c.is_empty())
        .map(|(prompt, cands)| {
            let mut cands: Vec<&(String, F)> = cands.iter().collect();
            cands.sort_by(|a, b| a.0.cmp(&b.0));
            let pick = match mode {
                SelectionMode::Best => cands
                    .iter()
                    .copied()
                    .reduce(|acc, c| if c.1 > acc.1 { c } else { acc }),
                SelectionMode::Worst => cands
                    .iter()
                    .copied()
                    .reduce(|acc, c| if c.1 < acc.1 { c } else { acc }),
                SelectionMode::Random(_) => {
                    let idx = rng.as_mut().expect("seeded").random_range(0..cands.len());
                    Some(cands[idx])
                }
            }
            .expect("nonempty");
            Selection {
                prompt_id: prompt.clone(),
                trace_id: pick.0.clone(),
                score: pick.1,
            }
        })
        .collect()
}

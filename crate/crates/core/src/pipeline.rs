//! End-to-end trace analysis and mini-set weight learning.

use rayon::prelude::*;

use crate::cache::{bucket_rows, CacheError, Row, TraceCache};
use crate::credit::{assign_credit, trace_accumulators, CreditConfig, CycleCredit};
use crate::num::Float;
use crate::segment::{segment, HmmConfig, Segmentation};
use crate::slope::{novelty_slopes, preprocess, SlopeSeries};
use crate::weights::NeuronWeights;

#[derive(Clone, Debug, PartialEq)]
pub struct TraceAnalysis<F> {
    pub trace_id: String,
    pub prompt_id: String,
    pub rows: Vec<Row<F>>,
    pub slopes: SlopeSeries<F>,
    pub segmentation: Segmentation<F>,
    pub credits: Vec<CycleCredit<F>>,
}

pub fn analyze_trace<F: Float>(
    cache: &TraceCache,
    hmm: &HmmConfig,
    credit: &CreditConfig,
) -> Result<TraceAnalysis<F>, CacheError> {
    let rows = bucket_rows::<F>(cache)?;
    let raw = novelty_slopes(&rows);
    let slopes = preprocess(&raw);
    let segmentation = segment(&slopes.processed, hmm);
    let credits = assign_credit(&rows, &slopes.raw, &segmentation.cycles, credit);
    Ok(TraceAnalysis {
        trace_id: cache.trace_id.clone(),
        prompt_id: cache.prompt_id.clone(),
        rows,
        slopes,
        segmentation,
        credits,
    })
}

/// Learns weights from a mini-set. Traces are analyzed in parallel; their
/// partial accumulators are merged in ascending trace id (input order among
/// equal ids), so the result is independent of scheduling.
pub fn learn_weights<F: Float>(
    caches: &[TraceCache],
    hmm: &HmmConfig,
    credit: &CreditConfig,
    miniset_id: &str,
) -> Result<NeuronWeights<F>, CacheError> {
    let mut partials = caches
        .par_iter()
        .enumerate()
        .map(|(i, cache)| {
            let analysis = analyze_trace::<F>(cache, hmm, credit)?;
            Ok((cache.trace_id.clone(), i, trace_accumulators(&analysis.credits)))
        })
        .collect::<Result<Vec<_>, CacheError>>()?;
    partials.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut weights = NeuronWeights::with_epsilon(miniset_id, F::lit(credit.epsilon));
    for (trace_id, _, partial) in &partials {
        weights.merge_trace(trace_id, partial);
    }
    Ok(weights)
}

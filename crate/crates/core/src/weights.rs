//! Signed neuron weights and the `.nexweights.jsonl` format.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::NeuronKey;
use crate::credit::{Accumulator, DEFAULT_EPSILON};
use crate::num::Float;
use crate::provenance::Provenance;

pub const WEIGHTS_EXTENSION: &str = ".nexweights.jsonl";

/// `tanh(log((m_pos + eps) / (m_neg + eps)))`.
///
/// The log-ratio is taken as a difference of logs so that swapping the
/// accumulators negates the result bit for bit. Values that would round to
/// ±1 are pulled back to the nearest representable magnitude below one.
pub fn signed_weight<F: Float>(m_pos: F, m_neg: F, eps: F) -> F {
    let log_ratio = (m_pos + eps).ln() - (m_neg + eps).ln();
    let w = log_ratio.tanh();
    if w.abs() >= F::one() {
        F::one_below().copysign(w)
    } else {
        w
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeuronWeights<F> {
    pub epsilon: F,
    pub miniset_id: String,
    /// Traces the weights were learned from.
    pub trace_ids: BTreeSet<String>,
    pub entries: BTreeMap<NeuronKey, Accumulator<F>>,
}

impl<F: Float> NeuronWeights<F> {
    pub fn new(miniset_id: impl Into<String>) -> Self {
        Self::with_epsilon(miniset_id, F::lit(DEFAULT_EPSILON))
    }

    pub fn with_epsilon(miniset_id: impl Into<String>, epsilon: F) -> Self {
        NeuronWeights {
            epsilon,
            miniset_id: miniset_id.into(),
            trace_ids: BTreeSet::new(),
            entries: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Weight of `key`; neurons without evidence weigh zero.
    pub fn weight(&self, key: NeuronKey) -> F {
        self.entries
            .get(&key)
            .map(|a| signed_weight(a.m_pos, a.m_neg, self.epsilon))
            .unwrap_or_else(F::zero)
    }

    /// Adds one cycle's deltas.
    pub fn accumulate(&mut self, credit: &crate::credit::CycleCredit<F>) {
        for (k, dp, dn) in credit.deltas() {
            self.add(k, dp, dn);
        }
    }

    fn add(&mut self, key: NeuronKey, dp: F, dn: F) {
        let e = self.entries.entry(key).or_insert(Accumulator {
            m_pos: F::zero(),
            m_neg: F::zero(),
        });
        e.m_pos = e.m_pos + dp;
        e.m_neg = e.m_neg + dn;
    }

    /// Folds one trace's partial accumulators in ascending key order.
    pub fn merge_trace(&mut self, trace_id: &str, partial: &BTreeMap<NeuronKey, Accumulator<F>>) {
        self.trace_ids.insert(trace_id.to_string());
        for (&k, a) in partial {
            self.add(k, a.m_pos, a.m_neg);
        }
    }

    pub fn iter_weights(&self) -> impl Iterator<Item = (NeuronKey, F)> + '_ {
        self.entries
            .iter()
            .map(|(&k, a)| (k, signed_weight(a.m_pos, a.m_neg, self.epsilon)))
    }
}

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("line {line}: malformed weights record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: stored weight {stored} disagrees with accumulators ({expected})")]
    WeightMismatch {
        line: usize,
        stored: f64,
        expected: f64,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Line {
    Header(HeaderLine),
    Neuron(NeuronLine),
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    epsilon: f64,
    miniset_id: String,
    #[serde(default)]
    trace_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

#[derive(Serialize, Deserialize)]
struct NeuronLine {
    key: u32,
    m_pos: f64,
    m_neg: f64,
    w: f64,
}

pub fn write_weights<F: Float, W: Write>(
    weights: &NeuronWeights<F>,
    provenance: Option<&Provenance>,
    mut out: W,
) -> std::io::Result<()> {
    let header = Line::Header(HeaderLine {
        epsilon: weights.epsilon.to_f64_lossless(),
        miniset_id: weights.miniset_id.clone(),
        trace_ids: weights.trace_ids.iter().cloned().collect(),
        provenance: provenance.cloned(),
    });
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for (&k, a) in &weights.entries {
        let line = Line::Neuron(NeuronLine {
            key: k.packed(),
            m_pos: a.m_pos.to_f64_lossless(),
            m_neg: a.m_neg.to_f64_lossless(),
            w: signed_weight(a.m_pos, a.m_neg, weights.epsilon).to_f64_lossless(),
        });
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a weights file and checks every stored `w` against its
/// accumulators (to 1e-9).
pub fn read_weights<F: Float, R: BufRead>(reader: R) -> Result<NeuronWeights<F>, WeightsError> {
    let mut weights: Option<NeuronWeights<F>> = None;
    for (idx, raw) in reader.lines().enumerate() {
        let line = idx + 1;
        let raw = raw?;
        if raw.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&raw).map_err(|e| WeightsError::Malformed {
            line,
            reason: e.to_string(),
        })?;
        match parsed {
            Line::Header(h) => {
                if weights.is_some() {
                    return Err(WeightsError::Malformed {
                        line,
                        reason: "duplicate header".into(),
                    });
                }
                let mut w = NeuronWeights::with_epsilon(h.miniset_id, F::lit(h.epsilon));
                w.trace_ids = h.trace_ids.into_iter().collect();
                weights = Some(w);
            }
            Line::Neuron(n) => {
                let w = weights.as_mut().ok_or_else(|| WeightsError::Malformed {
                    line,
                    reason: "neuron record before header".into(),
                })?;
                if !(n.m_pos >= 0.0 && n.m_neg >= 0.0) {
                    return Err(WeightsError::Malformed {
                        line,
                        reason: "accumulators must be nonnegative".into(),
                    });
                }
                let expected = signed_weight(n.m_pos, n.m_neg, w.epsilon.to_f64_lossless());
                if (expected - n.w).abs() > 1e-9 {
                    return Err(WeightsError::WeightMismatch {
                        line,
                        stored: n.w,
                        expected,
                    });
                }
                w.add(NeuronKey::from_packed(n.key), F::lit(n.m_pos), F::lit(n.m_neg));
            }
        }
    }
    weights.ok_or(WeightsError::Malformed {
        line: 1,
        reason: "missing header".into(),
    })
}

//! Activation-cache data model, the `.nexcache.jsonl` reader/writer, and
//! row bucketing.
//!
//! A cache holds one response: a header line followed by one line per
//! generated token with that token's sparse top-K MLP activations.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Float;

pub const DEFAULT_ROW_WIDTH: usize = 32;
pub const DEFAULT_TOP_K: usize = 2000;
pub const CACHE_EXTENSION: &str = ".nexcache.jsonl";

/// Packed `(layer << 16) | unit` identifier of one MLP neuron.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NeuronKey(u32);

impl NeuronKey {
    pub const fn new(layer: u16, unit: u16) -> Self {
        NeuronKey(((layer as u32) << 16) | unit as u32)
    }

    pub const fn from_packed(packed: u32) -> Self {
        NeuronKey(packed)
    }

    pub const fn packed(self) -> u32 {
        self.0
    }

    pub const fn layer(self) -> u16 {
        (self.0 >> 16) as u16
    }

    pub const fn unit(self) -> u16 {
        (self.0 & 0xFFFF) as u16
    }
}

impl fmt::Debug for NeuronKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}U{}", self.layer(), self.unit())
    }
}

impl fmt::Display for NeuronKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenRecord {
    pub position: usize,
    /// Next-token entropy in nats.
    pub entropy: Option<f64>,
    /// Log-probability of the sampled token.
    pub logprob: Option<f64>,
    /// Rectified activation masses, descending.
    pub activations: Vec<(NeuronKey, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceCache {
    pub trace_id: String,
    pub prompt_id: String,
    pub model_id: String,
    pub row_width: usize,
    pub top_k: usize,
    pub tokens: Vec<TokenRecord>,
}

impl TraceCache {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Total mass of every recorded entry.
    pub fn total_mass(&self) -> f64 {
        self.tokens
            .iter()
            .flat_map(|t| t.activations.iter().map(|&(_, m)| m))
            .sum()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CacheError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: negative activation mass {mass} for neuron {key}")]
    NegativeMass { line: usize, key: u32, mass: f64 },
    #[error("line {line}: neuron {key} appears twice in one token")]
    DuplicateNeuronInToken { line: usize, key: u32 },
    #[error("line {line}: expected token position {expected}, found {found}")]
    NonContiguousPositions {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: {count} activations exceed top_k = {top_k}")]
    TooManyActivations {
        line: usize,
        count: usize,
        top_k: usize,
    },
    #[error("line {line}: activations are not sorted by descending mass")]
    UnsortedActivations { line: usize },
    #[error("trace has no tokens")]
    EmptyTrace,
    #[error("i/o error: {0}")]
    Io(String),
}

impl CacheError {
    /// 1-based line number the error refers to, if any.
    pub fn line(&self) -> Option<usize> {
        match self {
            CacheError::MalformedRecord { line, .. }
            | CacheError::NegativeMass { line, .. }
            | CacheError::DuplicateNeuronInToken { line, .. }
            | CacheError::NonContiguousPositions { line, .. }
            | CacheError::TooManyActivations { line, .. }
            | CacheError::UnsortedActivations { line } => Some(*line),
            CacheError::EmptyTrace | CacheError::Io(_) => None,
        }
    }
}

// wire format

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Line {
    Header(HeaderLine),
    Token(TokenLine),
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    trace_id: String,
    prompt_id: String,
    model_id: String,
    #[serde(default = "default_row_width")]
    row_width: usize,
    #[serde(default = "default_top_k")]
    top_k: usize,
}

#[derive(Serialize, Deserialize)]
struct TokenLine {
    t: usize,
    #[serde(default)]
    entropy: Option<f64>,
    #[serde(default)]
    logprob: Option<f64>,
    acts: Vec<(u32, f64)>,
}

fn default_row_width() -> usize {
    DEFAULT_ROW_WIDTH
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

fn malformed(line: usize, reason: impl Into<String>) -> CacheError {
    CacheError::MalformedRecord {
        line,
        reason: reason.into(),
    }
}

/// Reads and validates one cache. Blank lines are skipped; unknown fields
/// are ignored.
pub fn parse_cache<R: BufRead>(reader: R) -> Result<TraceCache, CacheError> {
    let mut header: Option<HeaderLine> = None;
    let mut tokens = Vec::new();

    for (idx, raw) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let raw = raw.map_err(|e| CacheError::Io(e.to_string()))?;
        if raw.trim().is_empty() {
            continue;
        }
        let parsed: Line =
            serde_json::from_str(&raw).map_err(|e| malformed(line_no, e.to_string()))?;
        match parsed {
            Line::Header(h) => {
                if header.is_some() {
                    return Err(malformed(line_no, "duplicate header"));
                }
                if h.row_width == 0 {
                    return Err(malformed(line_no, "row_width must be at least 1"));
                }
                header = Some(h);
            }
            Line::Token(tok) => {
                let h = header
                    .as_ref()
                    .ok_or_else(|| malformed(line_no, "token record before header"))?;
                tokens.push(validate_token(tok, tokens.len(), h.top_k, line_no)?);
            }
        }
    }

    let h = header.ok_or_else(|| malformed(1, "missing header"))?;
    Ok(TraceCache {
        trace_id: h.trace_id,
        prompt_id: h.prompt_id,
        model_id: h.model_id,
        row_width: h.row_width,
        top_k: h.top_k,
        tokens,
    })
}

fn validate_token(
    tok: TokenLine,
    expected: usize,
    top_k: usize,
    line: usize,
) -> Result<TokenRecord, CacheError> {
    if tok.t != expected {
        return Err(CacheError::NonContiguousPositions {
            line,
            expected,
            found: tok.t,
        });
    }
    if tok.acts.len() > top_k {
        return Err(CacheError::TooManyActivations {
            line,
            count: tok.acts.len(),
            top_k,
        });
    }
    if let Some(h) = tok.entropy {
        if !h.is_finite() || h < 0.0 {
            return Err(malformed(line, format!("entropy {h} must be finite and >= 0")));
        }
    }
    if let Some(lp) = tok.logprob {
        if lp.is_nan() || lp > 0.0 {
            return Err(malformed(line, format!("logprob {lp} must be <= 0")));
        }
    }
    let mut seen = HashSet::with_capacity(tok.acts.len());
    let mut prev = f64::INFINITY;
    for &(key, mass) in &tok.acts {
        if !mass.is_finite() {
            return Err(malformed(line, format!("non-finite mass for neuron {key}")));
        }
        if mass < 0.0 {
            return Err(CacheError::NegativeMass { line, key, mass });
        }
        if !seen.insert(key) {
            return Err(CacheError::DuplicateNeuronInToken { line, key });
        }
        if mass > prev {
            return Err(CacheError::UnsortedActivations { line });
        }
        prev = mass;
    }
    Ok(TokenRecord {
        position: tok.t,
        entropy: tok.entropy,
        logprob: tok.logprob,
        activations: tok
            .acts
            .into_iter()
            .map(|(k, m)| (NeuronKey::from_packed(k), m))
            .collect(),
    })
}

/// Writes `cache` in the line-delimited format read by [`parse_cache`].
pub fn write_cache<W: Write>(cache: &TraceCache, mut out: W) -> std::io::Result<()> {
    let header = Line::Header(HeaderLine {
        trace_id: cache.trace_id.clone(),
        prompt_id: cache.prompt_id.clone(),
        model_id: cache.model_id.clone(),
        row_width: cache.row_width,
        top_k: cache.top_k,
    });
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for tok in &cache.tokens {
        let line = Line::Token(TokenLine {
            t: tok.position,
            entropy: tok.entropy,
            logprob: tok.logprob,
            acts: tok
                .activations
                .iter()
                .map(|&(k, m)| (k.packed(), m))
                .collect(),
        });
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Fixed-width bucket of consecutive tokens with per-neuron summed mass.
#[derive(Clone, Debug, PartialEq)]
pub struct Row<F> {
    pub index: usize,
    /// Token positions `[start, end)`.
    pub start: usize,
    pub end: usize,
    /// Neurons with at least one token mass above the inclusion threshold.
    pub neurons: BTreeSet<NeuronKey>,
    /// `A_{k,r}`: summed mass of every recorded entry in the row.
    pub masses: BTreeMap<NeuronKey, F>,
}

impl<F: Float> Row<F> {
    pub fn token_count(&self) -> usize {
        self.end - self.start
    }

    pub fn mass(&self, key: NeuronKey) -> F {
        self.masses.get(&key).copied().unwrap_or_else(F::zero)
    }

    pub fn total_mass(&self) -> F {
        self.masses.values().copied().sum()
    }
}

/// Buckets tokens into rows of `cache.row_width`; a shorter final row is
/// kept. Membership threshold is `tau = 0` (strictly positive mass).
pub fn bucket_rows<F: Float>(cache: &TraceCache) -> Result<Vec<Row<F>>, CacheError> {
    bucket_rows_with_threshold(cache, 0.0)
}

pub fn bucket_rows_with_threshold<F: Float>(
    cache: &TraceCache,
    tau: f64,
) -> Result<Vec<Row<F>>, CacheError> {
    if cache.tokens.is_empty() {
        return Err(CacheError::EmptyTrace);
    }
    let width = cache.row_width.max(1);
    let rows = cache
        .tokens
        .chunks(width)
        .enumerate()
        .map(|(index, chunk)| {
            let mut masses: BTreeMap<NeuronKey, f64> = BTreeMap::new();
            let mut neurons = BTreeSet::new();
            for tok in chunk {
                for &(key, mass) in &tok.activations {
                    *masses.entry(key).or_insert(0.0) += mass;
                    if mass > tau {
                        neurons.insert(key);
                    }
                }
            }
            let start = index * width;
            Row {
                index,
                start,
                end: start + chunk.len(),
                neurons,
                masses: masses.into_iter().map(|(k, m)| (k, F::lit(m))).collect(),
            }
        })
        .collect();
    Ok(rows)
}

//! On-disk formats owned by the CLI: score reports, accuracy files, and
//! cache discovery.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::CliError;
use crate::cache::{parse_cache, TraceCache, CACHE_EXTENSION};
use crate::metrics::Candidate;
use crate::provenance::{InputDigest, Provenance};

pub const SCORES_EXTENSION: &str = ".scores.jsonl";
pub const ACCURACIES_EXTENSION: &str = ".accuracies.jsonl";

/// Expands directories to the caches they contain (sorted by file name) and
/// keeps plain files as given.
pub fn cache_paths(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.is_file()
                        && p.file_name()
                            .is_some_and(|n| n.to_string_lossy().ends_with(CACHE_EXTENSION))
                })
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    let mut seen = BTreeSet::new();
    out.retain(|p| seen.insert(p.clone()));
    Ok(out)
}

pub fn read_input(path: &Path) -> Result<(Vec<u8>, InputDigest), CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let digest = InputDigest::of_file(path, &bytes);
    Ok((bytes, digest))
}

pub struct LoadedCaches {
    /// Sorted by trace id.
    pub caches: Vec<TraceCache>,
    pub digests: Vec<InputDigest>,
}

/// Parses every cache in parallel. Fails on the first bad file (in path
/// order) and on duplicate trace ids.
pub fn load_caches(paths: &[PathBuf]) -> Result<LoadedCaches, CliError> {
    let parsed: Vec<(TraceCache, InputDigest)> = paths
        .par_iter()
        .map(|p| {
            let (bytes, digest) = read_input(p)?;
            let cache = parse_cache(bytes.as_slice())
                .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            Ok((cache, digest))
        })
        .collect::<Result<_, CliError>>()?;
    let (mut caches, digests): (Vec<_>, Vec<_>) = parsed.into_iter().unzip();
    caches.sort_by(|a, b| a.trace_id.cmp(&b.trace_id));
    if let Some(w) = caches.windows(2).find(|w| w[0].trace_id == w[1].trace_id) {
        return Err(CliError::Input(format!("duplicate trace id {:?}", w[0].trace_id)));
    }
    Ok(LoadedCaches { caches, digests })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoresHeader {
    /// `reference` when scored against a weights file, `self` when each
    /// candidate learned weights from its own caches.
    pub calibration: String,
    pub miniset_id: String,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub length: usize,
    pub hes: Option<f64>,
    pub top20_fraction: Option<f64>,
    pub mean_logprob: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceScore {
    pub prompt_id: String,
    pub trace_id: String,
    pub score: f64,
    pub reward: f64,
    pub bad: f64,
    pub pos_mass: f64,
    pub abs_mass: f64,
    pub tot_mass: f64,
    pub baselines: Baselines,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptScore {
    pub prompt_id: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub candidate_id: String,
    pub mean: f64,
    pub per_prompt: Vec<PromptScore>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ScoresLine {
    Header(ScoresHeader),
    Score(TraceScore),
    Model(ModelSummary),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoresFile {
    pub header: ScoresHeader,
    pub traces: Vec<TraceScore>,
    pub model: ModelSummary,
}

pub fn write_jsonl<T: Serialize, W: Write>(items: &[T], mut out: W) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_scores<W: Write>(file: &ScoresFile, out: W) -> std::io::Result<()> {
    let mut lines = vec![ScoresLine::Header(file.header.clone())];
    lines.extend(file.traces.iter().cloned().map(ScoresLine::Score));
    lines.push(ScoresLine::Model(file.model.clone()));
    write_jsonl(&lines, out)
}

pub fn read_scores(path: &Path, bytes: &[u8]) -> Result<ScoresFile, CliError> {
    let bad = |line: usize, msg: String| CliError::Input(format!("{}:{line}: {msg}", path.display()));
    let mut header = None;
    let mut traces = Vec::new();
    let mut model = None;
    for (i, raw) in BufReader::new(bytes).lines().enumerate() {
        let raw = raw.map_err(|e| bad(i + 1, e.to_string()))?;
        if raw.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&raw).map_err(|e| bad(i + 1, e.to_string()))? {
            ScoresLine::Header(h) if header.is_none() => header = Some(h),
            ScoresLine::Score(s) if header.is_some() && model.is_none() => traces.push(s),
            ScoresLine::Model(m) if header.is_some() && model.is_none() => model = Some(m),
            _ => return Err(bad(i + 1, "record out of order".into())),
        }
    }
    match (header, model) {
        (Some(header), Some(model)) => Ok(ScoresFile { header, traces, model }),
        _ => Err(CliError::Input(format!(
            "{}: missing header or model summary",
            path.display()
        ))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccuracyRecord {
    pub candidate_id: String,
    pub benchmark: String,
    pub accuracy_pp: f64,
}

pub fn read_accuracies(path: &Path, bytes: &[u8]) -> Result<Vec<AccuracyRecord>, CliError> {
    let bad = |line: usize, msg: String| CliError::Input(format!("{}:{line}: {msg}", path.display()));
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, raw) in BufReader::new(bytes).lines().enumerate() {
        let raw = raw.map_err(|e| bad(i + 1, e.to_string()))?;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: AccuracyRecord =
            serde_json::from_str(&raw).map_err(|e| bad(i + 1, e.to_string()))?;
        if !rec.accuracy_pp.is_finite() {
            return Err(bad(i + 1, "accuracy_pp must be finite".into()));
        }
        if !seen.insert((rec.candidate_id.clone(), rec.benchmark.clone())) {
            return Err(bad(i + 1, format!("duplicate entry for {}/{}", rec.candidate_id, rec.benchmark)));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Pairs model scores with accuracies, grouped by benchmark. Candidates
/// without a score are skipped with a warning.
pub fn join_candidates(
    scores: &BTreeMap<String, f64>,
    accuracies: &[AccuracyRecord],
) -> BTreeMap<String, Vec<Candidate<f64>>> {
    let mut groups: BTreeMap<String, Vec<Candidate<f64>>> = BTreeMap::new();
    for a in accuracies {
        match scores.get(&a.candidate_id) {
            Some(&score) => groups.entry(a.benchmark.clone()).or_default().push(Candidate {
                id: a.candidate_id.clone(),
                score,
                accuracy: a.accuracy_pp,
            }),
            None => log::warn!(
                "no scores for candidate {:?} ({}); skipped",
                a.candidate_id,
                a.benchmark
            ),
        }
    }
    for g in groups.values_mut() {
        g.sort_by(|a, b| a.id.cmp(&b.id));
    }
    groups
}

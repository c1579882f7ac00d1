//! Synthetic activation caches drawn from a known explore/exploit process.
//!
//! Each row is in E or X. E-rows recruit `Poisson(lambda_explore)` new
//! neurons, X-rows `Poisson(lambda_exploit)`. A fraction `reuse_profile` of
//! the E→X cycles is productive: the neurons their E-phase introduced keep
//! firing through the following X-phase. Neurons of redundant cycles only
//! fire sporadically afterwards. Neurons first seen in X-rows form a filler
//! pool that fires at a steady rate and carries most of the X-phase mass.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{NeuronKey, TokenRecord, TraceCache, DEFAULT_TOP_K};
use crate::credit::CreditConfig;
use crate::num::Float;
use crate::pipeline::{analyze_trace, learn_weights};
use crate::scoring::{score_response, ResponseSummary};
use crate::segment::{extract_cycles, HmmConfig, State};
use crate::weights::NeuronWeights;

pub const TRUTH_EXTENSION: &str = ".truth.jsonl";

/// Layers used for shared-pool neurons; fresh neurons start above them.
const PRODUCTIVE_POOL_LAYER: u16 = 1;
const REDUNDANT_POOL_LAYER: u16 = 2;
const FRESH_LAYER: u16 = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub rows: usize,
    pub row_width: usize,
    /// Probability an E-row is followed by another E-row.
    pub p_stay: f64,
    /// Same for X-rows; `None` reuses `p_stay`.
    pub exploit_stay: Option<f64>,
    /// Lay out exactly this many equal-length E→X cycles instead of drawing
    /// the state sequence from the Markov chain.
    pub cycles: Option<usize>,
    pub lambda_explore: f64,
    pub lambda_exploit: f64,
    /// Fraction of cycles (rounded down) that are productive.
    pub reuse_profile: f64,
    /// Per X-row firing probability of a productive cycle's neurons.
    pub productive_refire: f64,
    /// Per X-row firing probability of a redundant cycle's neurons.
    pub redundant_refire: f64,
    /// Per-row firing probability of each filler neuron.
    pub filler_refire: f64,
    /// Productive cycles only reuse their neurons when the X-phase lasts at
    /// least this many rows.
    pub consolidation_rows: usize,
    /// Log-normal mass parameters.
    pub mass_mu: f64,
    pub mass_sigma: f64,
    /// Draw E-phase neurons from two fixed pools of this size (productive and
    /// redundant) so that neuron identity carries across traces.
    pub shared_pool: Option<u16>,
    pub seed: u64,
    pub trace_id: String,
    pub prompt_id: String,
    pub model_id: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            rows: 100,
            row_width: 32,
            p_stay: 0.9,
            exploit_stay: None,
            cycles: None,
            lambda_explore: 8.0,
            lambda_exploit: 1.0,
            reuse_profile: 0.5,
            productive_refire: 0.7,
            redundant_refire: 0.05,
            filler_refire: 0.3,
            consolidation_rows: 1,
            mass_mu: 0.0,
            mass_sigma: 0.5,
            shared_pool: None,
            seed: 0,
            trace_id: "synth".into(),
            prompt_id: "synth".into(),
            model_id: "synth".into(),
        }
    }
}

fn is_prob(p: f64) -> bool {
    (0.0..=1.0).contains(&p)
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.rows == 0 || self.row_width == 0 {
            return bad("rows and row_width must be positive".into());
        }
        if !(self.lambda_explore > self.lambda_exploit && self.lambda_exploit >= 0.0) {
            return bad(format!(
                "need lambda_explore > lambda_exploit >= 0, got {} and {}",
                self.lambda_explore, self.lambda_exploit
            ));
        }
        let probs = [
            ("p_stay", self.p_stay),
            ("exploit_stay", self.exploit_stay.unwrap_or(self.p_stay)),
            ("reuse_profile", self.reuse_profile),
            ("productive_refire", self.productive_refire),
            ("redundant_refire", self.redundant_refire),
            ("filler_refire", self.filler_refire),
        ];
        for (name, p) in probs {
            if !is_prob(p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if let Some(m) = self.cycles {
            if m == 0 || 2 * m > self.rows {
                return bad(format!("{m} cycles do not fit in {} rows", self.rows));
            }
        }
        if !(self.mass_sigma >= 0.0 && self.mass_mu.is_finite()) {
            return bad("mass parameters must be finite, sigma >= 0".into());
        }
        Ok(())
    }

    /// Copy with a new seed and trace id suffix.
    pub fn trial(&self, index: usize) -> SynthConfig {
        SynthConfig {
            seed: derive_seed(self.seed, index as u64),
            trace_id: format!("{}-{index:04}", self.trace_id),
            prompt_id: format!("{}-{index:04}", self.prompt_id),
            ..self.clone()
        }
    }
}

/// SplitMix64 step; decorrelates per-trial seeds from a base seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TruthCycle {
    pub explore: Range<usize>,
    pub exploit: Range<usize>,
    pub productive: bool,
    /// Productive and consolidated: its neurons are reused.
    pub effective: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NeuronTruth {
    pub key: NeuronKey,
    pub cycle: usize,
    pub reused: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub states: Vec<State>,
    /// Poisson draws: new neurons recruited in each row.
    pub novelty_counts: Vec<usize>,
    pub cycles: Vec<TruthCycle>,
    /// E-phase neurons of every cycle.
    pub neurons: Vec<NeuronTruth>,
}

impl GroundTruth {
    pub fn effective_cycles(&self) -> usize {
        self.cycles.iter().filter(|c| c.effective).count()
    }

    pub fn explore_segments(&self) -> usize {
        crate::segment::runs(&self.states)
            .iter()
            .filter(|r| r.state == State::Explore)
            .count()
    }

    /// Synthetic task proxy: share of `concepts` covered by effective cycles.
    pub fn task_proxy(&self, concepts: usize) -> f64 {
        if concepts == 0 {
            return 0.0;
        }
        self.effective_cycles().min(concepts) as f64 / concepts as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthTrace {
    pub cache: TraceCache,
    pub truth: GroundTruth,
}

fn state_sequence(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<State> {
    if let Some(m) = cfg.cycles {
        let base = cfg.rows / m;
        let extra = cfg.rows % m;
        let mut states = Vec::with_capacity(cfg.rows);
        for c in 0..m {
            let len = base + usize::from(c < extra);
            let e = (len / 2).max(1);
            states.extend(std::iter::repeat_n(State::Explore, e));
            states.extend(std::iter::repeat_n(State::Exploit, len - e));
        }
        return states;
    }
    let x_stay = cfg.exploit_stay.unwrap_or(cfg.p_stay);
    let mut states = Vec::with_capacity(cfg.rows);
    let mut s = State::Explore;
    for _ in 0..cfg.rows {
        states.push(s);
        let stay = if s == State::Explore { cfg.p_stay } else { x_stay };
        if !rng.random_bool(stay) {
            s = match s {
                State::Explore => State::Exploit,
                State::Exploit => State::Explore,
            };
        }
    }
    states
}

fn poisson(lambda: f64, rng: &mut ChaCha8Rng) -> usize {
    if lambda <= 0.0 {
        return 0;
    }
    let d = Poisson::new(lambda).expect("positive rate");
    d.sample(rng) as usize
}

struct KeyAllocator {
    next_fresh: u32,
    productive: Vec<u16>,
    redundant: Vec<u16>,
}

impl KeyAllocator {
    fn new(pool: Option<u16>, rng: &mut ChaCha8Rng) -> Self {
        let (mut productive, mut redundant) = match pool {
            Some(n) => ((0..n).collect::<Vec<_>>(), (0..n).collect::<Vec<_>>()),
            None => (Vec::new(), Vec::new()),
        };
        productive.shuffle(rng);
        redundant.shuffle(rng);
        KeyAllocator {
            next_fresh: NeuronKey::new(FRESH_LAYER, 0).packed(),
            productive,
            redundant,
        }
    }

    fn fresh(&mut self) -> NeuronKey {
        let k = NeuronKey::from_packed(self.next_fresh);
        self.next_fresh += 1;
        k
    }

    fn for_cycle(&mut self, productive: bool) -> NeuronKey {
        let (pool, layer) = if productive {
            (&mut self.productive, PRODUCTIVE_POOL_LAYER)
        } else {
            (&mut self.redundant, REDUNDANT_POOL_LAYER)
        };
        match pool.pop() {
            Some(unit) => NeuronKey::new(layer, unit),
            None => self.fresh(),
        }
    }
}

/// Draws one trace and its ground truth. Identical configs give identical
/// output.
pub fn generate(cfg: &SynthConfig) -> Result<SynthTrace, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let states = state_sequence(cfg, &mut rng);
    let cycles = extract_cycles(&states);

    let n_productive = ((cycles.len() as f64) * cfg.reuse_profile + 1e-9).floor() as usize;
    let mut order: Vec<usize> = (0..cycles.len()).collect();
    order.shuffle(&mut rng);
    let productive: BTreeSet<usize> = order.into_iter().take(n_productive).collect();
    let truth_cycles: Vec<TruthCycle> = cycles
        .iter()
        .map(|c| {
            let p = productive.contains(&c.index);
            TruthCycle {
                explore: c.explore.clone(),
                exploit: c.exploit.clone(),
                productive: p,
                effective: p && c.exploit.len() >= cfg.consolidation_rows,
            }
        })
        .collect();
    let mut row_cycle_e: Vec<Option<usize>> = vec![None; cfg.rows];
    let mut row_cycle_x: Vec<Option<usize>> = vec![None; cfg.rows];
    for c in &cycles {
        c.explore.clone().for_each(|r| row_cycle_e[r] = Some(c.index));
        c.exploit.clone().for_each(|r| row_cycle_x[r] = Some(c.index));
    }

    let mass = LogNormal::new(cfg.mass_mu, cfg.mass_sigma)
        .map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    let mut keys = KeyAllocator::new(cfg.shared_pool, &mut rng);
    let mut cycle_neurons: Vec<Vec<NeuronKey>> = vec![Vec::new(); cycles.len()];
    let mut filler: Vec<NeuronKey> = Vec::new();
    let mut neurons_truth = Vec::new();
    let mut novelty_counts = Vec::with_capacity(cfg.rows);
    let w = cfg.row_width;
    let mut tokens: Vec<BTreeMap<NeuronKey, f64>> = vec![BTreeMap::new(); cfg.rows * w];

    for (r, &state) in states.iter().enumerate() {
        let base = r * w;
        let mut fire = |k: NeuronKey, rng: &mut ChaCha8Rng| {
            let t = base + rng.random_range(0..w);
            *tokens[t].entry(k).or_insert(0.0) += mass.sample(rng);
        };

        // Filler neurons seen before this row.
        for &k in &filler {
            if rng.random_bool(cfg.filler_refire) {
                fire(k, &mut rng);
            }
        }
        // Reuse of the current cycle's E-phase neurons.
        if let Some(ci) = row_cycle_x[r] {
            let p = if truth_cycles[ci].effective {
                cfg.productive_refire
            } else {
                cfg.redundant_refire
            };
            for &k in &cycle_neurons[ci] {
                if rng.random_bool(p) {
                    fire(k, &mut rng);
                }
            }
        }
        // Novel neurons.
        let lambda = match state {
            State::Explore => cfg.lambda_explore,
            State::Exploit => cfg.lambda_exploit,
        };
        let n = poisson(lambda, &mut rng);
        novelty_counts.push(n);
        for _ in 0..n {
            let k = match row_cycle_e[r] {
                Some(ci) => {
                    let k = keys.for_cycle(truth_cycles[ci].productive);
                    cycle_neurons[ci].push(k);
                    neurons_truth.push(NeuronTruth {
                        key: k,
                        cycle: ci,
                        reused: truth_cycles[ci].effective,
                    });
                    k
                }
                None => {
                    let k = keys.fresh();
                    if state == State::Exploit {
                        filler.push(k);
                    }
                    k
                }
            };
            fire(k, &mut rng);
        }
    }

    let tokens = tokens
        .into_iter()
        .enumerate()
        .map(|(t, acts)| {
            let explore = states[t / w] == State::Explore;
            let entropy = if explore {
                rng.random_range(1.0..2.5)
            } else {
                rng.random_range(0.1..1.0)
            };
            let logprob = -entropy * rng.random_range(0.3..0.7);
            let mut activations: Vec<(NeuronKey, f64)> = acts.into_iter().collect();
            activations.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            activations.truncate(DEFAULT_TOP_K);
            TokenRecord {
                position: t,
                entropy: Some(entropy),
                logprob: Some(logprob),
                activations,
            }
        })
        .collect();

    Ok(SynthTrace {
        cache: TraceCache {
            trace_id: cfg.trace_id.clone(),
            prompt_id: cfg.prompt_id.clone(),
            model_id: cfg.model_id.clone(),
            row_width: w,
            top_k: DEFAULT_TOP_K,
            tokens,
        },
        truth: GroundTruth {
            states,
            novelty_counts,
            cycles: truth_cycles,
            neurons: neurons_truth,
        },
    })
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum TruthLine<'a> {
    Row { r: usize, state: State, novel: usize },
    Cycle { index: usize, #[serde(flatten)] cycle: &'a TruthCycle },
    Neuron(&'a NeuronTruth),
}

/// Writes the `.truth.jsonl` sidecar.
pub fn write_truth<W: Write>(truth: &GroundTruth, mut out: W) -> std::io::Result<()> {
    let mut line = |l: TruthLine| -> std::io::Result<()> {
        serde_json::to_writer(&mut out, &l)?;
        out.write_all(b"\n")
    };
    for (r, (&state, &novel)) in truth.states.iter().zip(&truth.novelty_counts).enumerate() {
        line(TruthLine::Row { r, state, novel })?;
    }
    for (index, cycle) in truth.cycles.iter().enumerate() {
        line(TruthLine::Cycle { index, cycle })?;
    }
    for n in &truth.neurons {
        line(TruthLine::Neuron(n))?;
    }
    Ok(())
}

/// One setting of a sweep.
#[derive(Clone, Debug)]
pub struct SweepLevel {
    pub label: String,
    pub config: SynthConfig,
}

#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub trials: usize,
    /// Concepts the synthetic task needs, for [`GroundTruth::task_proxy`].
    pub concepts: usize,
    pub hmm: HmmConfig,
    pub credit: CreditConfig,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            trials: 30,
            concepts: 6,
            hmm: HmmConfig::default(),
            credit: CreditConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub label: String,
    pub trials: usize,
    /// Decoded E-segments per trace.
    pub mean_explore_segments: f64,
    pub mean_score: f64,
    pub mean_task_proxy: f64,
}

/// Generates `trials` traces per level, decodes them, and scores them.
///
/// With `reference` weights every level is scored against them; without,
/// each level learns its own weights from its own traces first.
pub fn sweep_exploration<F: Float>(
    levels: &[SweepLevel],
    opts: &SweepOptions,
    reference: Option<&NeuronWeights<F>>,
) -> Result<Vec<SweepRow>, SynthError> {
    if levels.is_empty() {
        return Err(SynthError::InvalidConfig("sweep needs at least one level".into()));
    }
    if opts.trials == 0 {
        return Err(SynthError::InvalidConfig("sweep needs at least one trial per level".into()));
    }
    levels
        .iter()
        .map(|level| {
            let traces: Vec<SynthTrace> = (0..opts.trials)
                .map(|i| generate(&level.config.trial(i)))
                .collect::<Result<_, _>>()?;
            let caches: Vec<TraceCache> = traces.iter().map(|t| t.cache.clone()).collect();
            let own;
            let weights = match reference {
                Some(w) => w,
                None => {
                    own = learn_weights::<F>(&caches, &opts.hmm, &opts.credit, &level.label)
                        .map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
                    &own
                }
            };
            let mut segs = 0.0;
            let mut score = 0.0;
            let mut proxy = 0.0;
            for t in &traces {
                let a = analyze_trace::<F>(&t.cache, &opts.hmm, &opts.credit)
                    .map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
                segs += a.segmentation.explore_segments() as f64;
                let summary = ResponseSummary::<F>::from_cache(&t.cache);
                score += score_response(&summary, weights).score.to_f64_lossless();
                proxy += t.truth.task_proxy(opts.concepts);
            }
            let n = opts.trials as f64;
            Ok(SweepRow {
                label: level.label.clone(),
                trials: opts.trials,
                mean_explore_segments: segs / n,
                mean_score: score / n,
                mean_task_proxy: proxy / n,
            })
        })
        .collect()
}

/// Learns weights from `trials` traces of `config`.
pub fn reference_weights<F: Float>(
    config: &SynthConfig,
    trials: usize,
    hmm: &HmmConfig,
    credit: &CreditConfig,
) -> Result<NeuronWeights<F>, SynthError> {
    let caches: Vec<TraceCache> = (0..trials)
        .map(|i| generate(&config.trial(i)).map(|t| t.cache))
        .collect::<Result<_, _>>()?;
    learn_weights::<F>(&caches, hmm, credit, &config.trace_id)
        .map_err(|e| SynthError::InvalidConfig(e.to_string()))
}

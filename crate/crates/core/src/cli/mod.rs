//! The `nex` command line.

mod files;
mod report;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args as ClapArgs, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::baselines::{entropy_sum, length, mean_logprob, top20_entropy_fraction};
use crate::cache::{bucket_rows, parse_cache, write_cache, CACHE_EXTENSION};
use crate::config::RunConfig;
use crate::metrics::ranking_report;
use crate::pipeline::learn_weights;
use crate::provenance::{InputDigest, Provenance};
use crate::scoring::{aggregate_model_score, curate, rank_descending, score_response, ResponseSummary};
use crate::synth::{generate, write_truth, SynthConfig, TRUTH_EXTENSION};
use crate::weights::{read_weights, write_weights, NeuronWeights};

pub use files::{
    AccuracyRecord, Baselines, ModelSummary, PromptScore, ScoresFile, ScoresHeader, ScoresLine,
    TraceScore, ACCURACIES_EXTENSION, SCORES_EXTENSION,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Invariant(_) => 2,
        }
    }
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> CliError + '_ {
    move |e| CliError::Input(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "nex", version, about = "Label-free reasoning-trace scoring from activation caches")]
pub struct Cli {
    /// JSON run config; unknown keys are rejected.
    #[arg(long, global = true, env = "NEX_CONFIG")]
    pub config: Option<PathBuf>,

    /// Overrides the HMM seed (and the base seed of `synth`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads. Output does not depend on this.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Output file, or directory for `synth` and `report`. Files default to stdout.
    #[arg(long, short, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and check activation caches.
    Validate {
        /// Cache files or directories of caches.
        paths: Vec<PathBuf>,
    },
    /// Learn signed neuron weights from a mini-set of caches.
    LearnWeights {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "miniset")]
        miniset_id: String,
    },
    /// Score caches, per trace and as one model.
    Score(ScoreArgs),
    /// Join model scores with benchmark accuracies and compute r, Regret@1, Hit@3.
    Rank {
        /// Score reports, one per candidate.
        #[arg(required = true)]
        scores: Vec<PathBuf>,
        #[arg(long)]
        accuracies: PathBuf,
    },
    /// Keep the top fraction of scored samples.
    Curate {
        scores: PathBuf,
        /// Defaults to `scoring.curate_fraction` from the config.
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Write synthetic caches with ground truth.
    Synth {
        /// JSON generator settings; defaults apply to missing keys.
        #[arg(long)]
        synth_config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        traces: usize,
    },
    /// Write CSV plot data from run artifacts.
    Report(report::ReportArgs),
}

#[derive(Debug, ClapArgs)]
pub struct ScoreArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Reference weights. Without them the caches calibrate their own weights.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Refuse to score traces that were part of the weights' mini-set.
    #[arg(long, requires = "weights")]
    pub disjoint: bool,
    /// Defaults to the caches' shared model id.
    #[arg(long)]
    pub candidate_id: Option<String>,
}

struct Context {
    config: RunConfig,
    out: Option<PathBuf>,
    seed: Option<u64>,
}

impl Context {
    fn provenance(&self, inputs: Vec<InputDigest>) -> Provenance {
        Provenance::new(&self.config, inputs)
    }

    fn writer(&self) -> Result<Box<dyn Write>, CliError> {
        Ok(match &self.out {
            Some(p) => Box::new(BufWriter::new(File::create(p).map_err(io_err(p))?)),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        })
    }

    fn out_dir(&self) -> Result<&Path, CliError> {
        let dir = self
            .out
            .as_deref()
            .ok_or_else(|| CliError::Input("--out DIR is required".into()))?;
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(dir)
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| CliError::Input(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.hmm.seed = s;
    }
    if cli.jobs.is_some() {
        config.jobs = cli.jobs;
    }
    config.validate().map_err(|e| CliError::Input(e.to_string()))?;
    if let Some(j) = config.jobs {
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let ctx = Context {
        config,
        out: cli.out,
        seed: cli.seed,
    };
    match cli.command {
        Command::Validate { paths } => validate(&paths),
        Command::LearnWeights { inputs, miniset_id } => learn(&ctx, &inputs, &miniset_id),
        Command::Score(args) => score(&ctx, &args),
        Command::Rank { scores, accuracies } => rank(&ctx, &scores, &accuracies),
        Command::Curate { scores, fraction } => curate_cmd(&ctx, &scores, fraction),
        Command::Synth { synth_config, traces } => synth(&ctx, synth_config.as_deref(), traces),
        Command::Report(args) => report::run(&ctx, &args),
    }
}

fn validate(paths: &[PathBuf]) -> Result<(), CliError> {
    let files = files::cache_paths(paths)?;
    if files.is_empty() {
        log::warn!("no caches found");
        return Ok(());
    }
    let results: Vec<Result<String, String>> = files
        .par_iter()
        .map(|p| {
            let bytes = fs::read(p).map_err(|e| format!("{}: {e}", p.display()))?;
            let cache = parse_cache(bytes.as_slice()).map_err(|e| format!("{}: {e}", p.display()))?;
            let rows = bucket_rows::<f64>(&cache).map_err(|e| format!("{}: {e}", p.display()))?;
            Ok(format!(
                "ok {} ({} tokens, {} rows)",
                p.display(),
                cache.len(),
                rows.len()
            ))
        })
        .collect();
    let mut failed = 0;
    for r in &results {
        match r {
            Ok(msg) => println!("{msg}"),
            Err(msg) => {
                failed += 1;
                eprintln!("error {msg}");
            }
        }
    }
    if failed > 0 {
        return Err(CliError::Input(format!("{failed} of {} caches invalid", files.len())));
    }
    Ok(())
}

fn learn(ctx: &Context, inputs: &[PathBuf], miniset_id: &str) -> Result<(), CliError> {
    let paths = files::cache_paths(inputs)?;
    if paths.is_empty() {
        return Err(CliError::Input("no caches to learn from".into()));
    }
    let loaded = files::load_caches(&paths)?;
    let weights = learn_weights::<f64>(&loaded.caches, &ctx.config.hmm, &ctx.config.credit, miniset_id)
        .map_err(|e| CliError::Input(e.to_string()))?;
    if weights.is_empty() {
        log::warn!("no cycles found in {} traces; weights are empty", loaded.caches.len());
    }
    if let Some((k, w)) = weights.iter_weights().find(|(_, w)| w.is_nan() || w.abs() >= 1.0) {
        return Err(CliError::Invariant(format!("weight {w} of {k:?} outside (-1, 1)")));
    }
    let prov = ctx.provenance(loaded.digests);
    let mut out = ctx.writer()?;
    write_weights(&weights, Some(&prov), &mut out)
        .and_then(|_| out.flush())
        .map_err(|e| CliError::Input(e.to_string()))
}

fn baselines_of(cache: &crate::cache::TraceCache) -> Baselines {
    Baselines {
        length: length(cache),
        hes: entropy_sum::<f64>(cache).ok(),
        top20_fraction: top20_entropy_fraction::<f64>(cache).ok(),
        mean_logprob: mean_logprob::<f64>(cache).ok(),
    }
}

fn score(ctx: &Context, args: &ScoreArgs) -> Result<(), CliError> {
    let paths = files::cache_paths(&args.inputs)?;
    if paths.is_empty() {
        return Err(CliError::Input("no caches to score".into()));
    }
    let loaded = files::load_caches(&paths)?;
    let caches = &loaded.caches;
    let mut digests = loaded.digests.clone();

    let candidate_id = match &args.candidate_id {
        Some(c) => c.clone(),
        None => {
            let first = &caches[0].model_id;
            if caches.iter().any(|c| &c.model_id != first) {
                return Err(CliError::Input(
                    "caches come from several models; pass --candidate-id".into(),
                ));
            }
            first.clone()
        }
    };

    let (weights, calibration) = match &args.weights {
        Some(p) => {
            let (bytes, digest) = files::read_input(p)?;
            digests.push(digest);
            let w = read_weights::<f64, _>(bytes.as_slice())
                .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            (w, "reference")
        }
        None => {
            let w = learn_weights::<f64>(caches, &ctx.config.hmm, &ctx.config.credit, &candidate_id)
                .map_err(|e| CliError::Input(e.to_string()))?;
            (w, "self")
        }
    };
    if args.disjoint {
        let overlap: Vec<&str> = caches
            .iter()
            .filter(|c| weights.trace_ids.contains(&c.trace_id))
            .map(|c| c.trace_id.as_str())
            .collect();
        if !overlap.is_empty() {
            return Err(CliError::Input(format!(
                "{} scored traces were part of the weight mini-set (first: {})",
                overlap.len(),
                overlap[0]
            )));
        }
    }
    if weights.is_empty() {
        log::warn!("weights are empty; every score is 0");
    }

    let traces = score_caches(caches, &weights)?;
    let scored: Vec<(String, String, f64)> = traces
        .iter()
        .map(|t| (t.prompt_id.clone(), t.trace_id.clone(), t.score))
        .collect();
    let model = aggregate_model_score(&scored).map_err(|e| CliError::Input(e.to_string()))?;
    let file = ScoresFile {
        header: ScoresHeader {
            calibration: calibration.into(),
            miniset_id: weights.miniset_id.clone(),
            provenance: ctx.provenance(digests),
        },
        traces,
        model: ModelSummary {
            candidate_id,
            mean: model.mean,
            per_prompt: model
                .per_prompt
                .into_iter()
                .map(|(prompt_id, score)| PromptScore { prompt_id, score })
                .collect(),
        },
    };
    let mut out = ctx.writer()?;
    files::write_scores(&file, &mut out).map_err(|e| CliError::Input(e.to_string()))
}

fn score_caches(
    caches: &[crate::cache::TraceCache],
    weights: &NeuronWeights<f64>,
) -> Result<Vec<TraceScore>, CliError> {
    caches
        .par_iter()
        .map(|c| {
            let r = score_response(&ResponseSummary::<f64>::from_cache(c), weights);
            if !(0.0..=1.0).contains(&r.score) {
                return Err(CliError::Invariant(format!(
                    "score {} of {} outside [0, 1]",
                    r.score, c.trace_id
                )));
            }
            Ok(TraceScore {
                prompt_id: c.prompt_id.clone(),
                trace_id: c.trace_id.clone(),
                score: r.score,
                reward: r.reward,
                bad: r.bad,
                pos_mass: r.pos_mass,
                abs_mass: r.abs_mass,
                tot_mass: r.tot_mass,
                baselines: baselines_of(c),
            })
        })
        .collect()
}

/// Reads score reports and returns each candidate's model score.
fn load_model_scores(
    paths: &[PathBuf],
    digests: &mut Vec<InputDigest>,
) -> Result<BTreeMap<String, f64>, CliError> {
    let mut scores = BTreeMap::new();
    for p in paths {
        let (bytes, digest) = files::read_input(p)?;
        digests.push(digest);
        let f = files::read_scores(p, &bytes)?;
        if scores.insert(f.model.candidate_id.clone(), f.model.mean).is_some() {
            return Err(CliError::Input(format!(
                "{}: candidate {:?} scored twice",
                p.display(),
                f.model.candidate_id
            )));
        }
    }
    Ok(scores)
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum RankLine {
    Header {
        provenance: Provenance,
    },
    Benchmark {
        benchmark: String,
        #[serde(flatten)]
        report: crate::metrics::RankingReport<f64>,
    },
    Summary {
        benchmarks: usize,
        mean_pearson_r: Option<f64>,
        mean_regret_at_1: Option<f64>,
        mean_hit_at_3: Option<f64>,
    },
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn rank(ctx: &Context, scores: &[PathBuf], accuracies: &Path) -> Result<(), CliError> {
    let mut digests = Vec::new();
    let model_scores = load_model_scores(scores, &mut digests)?;
    let (bytes, digest) = files::read_input(accuracies)?;
    digests.push(digest);
    let accs = files::read_accuracies(accuracies, &bytes)?;
    let groups = files::join_candidates(&model_scores, &accs);

    let mut lines = vec![RankLine::Header {
        provenance: ctx.provenance(digests),
    }];
    let (mut rs, mut regrets, mut hits) = (Vec::new(), Vec::new(), Vec::new());
    for (benchmark, cands) in groups {
        let report = ranking_report(&cands).map_err(|e| CliError::Input(format!("{benchmark}: {e}")))?;
        if report.regret_at_1 < 0.0 {
            return Err(CliError::Invariant(format!("{benchmark}: negative regret")));
        }
        rs.extend(report.pearson_r);
        regrets.push(report.regret_at_1);
        hits.push(if report.hit_at_3 { 1.0 } else { 0.0 });
        lines.push(RankLine::Benchmark { benchmark, report });
    }
    lines.push(RankLine::Summary {
        benchmarks: regrets.len(),
        mean_pearson_r: mean(&rs),
        mean_regret_at_1: mean(&regrets),
        mean_hit_at_3: mean(&hits),
    });
    let mut out = ctx.writer()?;
    files::write_jsonl(&lines, &mut out).map_err(|e| CliError::Input(e.to_string()))
}

#[derive(Serialize)]
struct Manifest {
    #[serde(flatten)]
    manifest: crate::scoring::CurationManifest,
    provenance: Provenance,
}

fn curate_cmd(ctx: &Context, scores: &Path, fraction: Option<f64>) -> Result<(), CliError> {
    let (bytes, digest) = files::read_input(scores)?;
    let file = files::read_scores(scores, &bytes)?;
    if file.header.calibration == "self" {
        log::warn!("scores were self-calibrated; curated samples overlap the weight mini-set");
    }
    let fraction = fraction.unwrap_or(ctx.config.scoring.curate_fraction);
    let mut ranked: Vec<(String, f64)> = file
        .traces
        .iter()
        .map(|t| (t.trace_id.clone(), t.score))
        .collect();
    rank_descending(&mut ranked);
    let manifest = curate(&ranked, fraction).map_err(|e| CliError::Input(e.to_string()))?;
    let doc = Manifest {
        manifest,
        provenance: ctx.provenance(vec![digest]),
    };
    let mut out = ctx.writer()?;
    serde_json::to_writer_pretty(&mut out, &doc)
        .map_err(io::Error::from)
        .and_then(|_| out.write_all(b"\n"))
        .and_then(|_| out.flush())
        .map_err(|e| CliError::Input(e.to_string()))
}

fn synth(ctx: &Context, config: Option<&Path>, traces: usize) -> Result<(), CliError> {
    let mut cfg: SynthConfig = match config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?
        }
        None => SynthConfig::default(),
    };
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| CliError::Input(e.to_string()))?;
    let dir = ctx.out_dir()?;
    let written: Vec<Result<(), CliError>> = (0..traces)
        .into_par_iter()
        .map(|i| {
            let t = generate(&cfg.trial(i)).map_err(|e| CliError::Input(e.to_string()))?;
            let id = &t.cache.trace_id;
            let cache_path = dir.join(format!("{id}{CACHE_EXTENSION}"));
            let truth_path = dir.join(format!("{id}{TRUTH_EXTENSION}"));
            let mut f = BufWriter::new(File::create(&cache_path).map_err(io_err(&cache_path))?);
            write_cache(&t.cache, &mut f)
                .and_then(|_| f.flush())
                .map_err(io_err(&cache_path))?;
            let mut f = BufWriter::new(File::create(&truth_path).map_err(io_err(&truth_path))?);
            write_truth(&t.truth, &mut f)
                .and_then(|_| f.flush())
                .map_err(io_err(&truth_path))
        })
        .collect();
    written.into_iter().collect()
}

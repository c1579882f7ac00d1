//! `nex report`: CSV plot data for external tools.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use serde::Serialize;

use super::{files, io_err, load_model_scores, CliError, Context};
use crate::metrics::ranking_report;
use crate::pipeline::{analyze_trace, TraceAnalysis};

pub const SCORE_VS_ACCURACY_CSV: &str = "score_vs_accuracy.csv";
pub const RANKING_CSV: &str = "ranking.csv";
pub const SLOPES_CSV: &str = "slopes.csv";
pub const SEGMENTS_CSV: &str = "segments.csv";
pub const PROVENANCE_JSON: &str = "report.provenance.json";
pub const SLOPES_EXTENSION: &str = ".slopes.jsonl";

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Score reports, one per candidate.
    #[arg(long, num_args = 1..)]
    pub scores: Vec<PathBuf>,
    #[arg(long)]
    pub accuracies: Option<PathBuf>,
    /// Caches (or directories) whose slopes and segments to export.
    #[arg(long, num_args = 1..)]
    pub caches: Vec<PathBuf>,
    /// Also write one `.slopes.jsonl` per trace.
    #[arg(long)]
    pub slopes_jsonl: bool,
}

#[derive(Serialize)]
struct ScatterRow<'a> {
    candidate_id: &'a str,
    benchmark: &'a str,
    score: f64,
    accuracy_pp: f64,
}

#[derive(Serialize)]
struct RankingRow<'a> {
    benchmark: &'a str,
    candidates: usize,
    pearson_r: Option<f64>,
    regret_at_1: f64,
    hit_at_3: u8,
}

#[derive(Serialize)]
struct SlopeRow<'a> {
    trace_id: &'a str,
    r: usize,
    s: f64,
    z: f64,
    state: char,
}

#[derive(Serialize)]
struct SegmentRow<'a> {
    trace_id: &'a str,
    start: usize,
    end: usize,
    state: char,
}

const SCATTER_HEADER: [&str; 4] = ["candidate_id", "benchmark", "score", "accuracy_pp"];
const RANKING_HEADER: [&str; 5] = ["benchmark", "candidates", "pearson_r", "regret_at_1", "hit_at_3"];
const SLOPES_HEADER: [&str; 5] = ["trace_id", "r", "s", "z", "state"];
const SEGMENTS_HEADER: [&str; 4] = ["trace_id", "start", "end", "state"];

/// Writes `rows` with an explicit header so empty inputs still give a
/// well-formed file.
fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), CliError> {
    let err = |e: csv::Error| CliError::Input(format!("{}: {e}", path.display()));
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(err)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(io_err(path))
}

pub(super) fn run(ctx: &Context, args: &ReportArgs) -> Result<(), CliError> {
    let dir = ctx.out_dir()?;
    let mut digests = Vec::new();

    let model_scores = load_model_scores(&args.scores, &mut digests)?;
    let accs = match &args.accuracies {
        Some(p) => {
            let (bytes, digest) = files::read_input(p)?;
            digests.push(digest);
            files::read_accuracies(p, &bytes)?
        }
        None => Vec::new(),
    };
    let groups = files::join_candidates(&model_scores, &accs);
    let mut scatter = Vec::new();
    let mut ranking = Vec::new();
    for (benchmark, cands) in &groups {
        for c in cands {
            scatter.push(ScatterRow {
                candidate_id: &c.id,
                benchmark,
                score: c.score,
                accuracy_pp: c.accuracy,
            });
        }
        let rep = ranking_report(cands).map_err(|e| CliError::Input(format!("{benchmark}: {e}")))?;
        ranking.push(RankingRow {
            benchmark,
            candidates: cands.len(),
            pearson_r: rep.pearson_r,
            regret_at_1: rep.regret_at_1,
            hit_at_3: u8::from(rep.hit_at_3),
        });
    }
    if scatter.is_empty() {
        log::warn!("no score/accuracy pairs; {SCORE_VS_ACCURACY_CSV} and {RANKING_CSV} are empty");
    }
    write_csv(&dir.join(SCORE_VS_ACCURACY_CSV), &SCATTER_HEADER, &scatter)?;
    write_csv(&dir.join(RANKING_CSV), &RANKING_HEADER, &ranking)?;

    let paths = files::cache_paths(&args.caches)?;
    let loaded = files::load_caches(&paths)?;
    digests.extend(loaded.digests);
    let analyses: Vec<TraceAnalysis<f64>> = loaded
        .caches
        .par_iter()
        .map(|c| {
            analyze_trace::<f64>(c, &ctx.config.hmm, &ctx.config.credit)
                .map_err(|e| CliError::Input(format!("{}: {e}", c.trace_id)))
        })
        .collect::<Result<_, _>>()?;
    if analyses.is_empty() {
        log::warn!("no caches; {SLOPES_CSV} and {SEGMENTS_CSV} are empty");
    }
    let mut slopes = Vec::new();
    let mut segments = Vec::new();
    for a in &analyses {
        for (d, st) in a.slopes.dump_rows().into_iter().zip(&a.segmentation.states) {
            slopes.push(SlopeRow {
                trace_id: &a.trace_id,
                r: d.r,
                s: d.s,
                z: d.z,
                state: st.symbol(),
            });
        }
        for run in &a.segmentation.runs {
            segments.push(SegmentRow {
                trace_id: &a.trace_id,
                start: run.start,
                end: run.end,
                state: run.state.symbol(),
            });
        }
        if args.slopes_jsonl {
            let p = dir.join(format!("{}{SLOPES_EXTENSION}", a.trace_id));
            let mut f = BufWriter::new(File::create(&p).map_err(io_err(&p))?);
            files::write_jsonl(&a.slopes.dump_rows(), &mut f).map_err(io_err(&p))?;
        }
    }
    write_csv(&dir.join(SLOPES_CSV), &SLOPES_HEADER, &slopes)?;
    write_csv(&dir.join(SEGMENTS_CSV), &SEGMENTS_HEADER, &segments)?;

    let p = dir.join(PROVENANCE_JSON);
    let mut f = BufWriter::new(File::create(&p).map_err(io_err(&p))?);
    serde_json::to_writer_pretty(&mut f, &ctx.provenance(digests))
        .map_err(std::io::Error::from)
        .and_then(|_| f.write_all(b"\n"))
        .and_then(|_| f.flush())
        .map_err(io_err(&p))
}

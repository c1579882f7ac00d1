//! Label-free scoring of reasoning traces from sparse MLP activation logs.
//!
//! A trace is bucketed into fixed-width rows, each row's novelty slope (new
//! neurons per token) is standardized and segmented into exploration (E) and
//! exploitation (X) phases by a sticky two-state HMM. Every E→X cycle then
//! credits the neurons it introduced, positively when they are reused in the
//! following X-phase and negatively otherwise. The resulting signed neuron
//! weights score any response by the share of its weighted activation mass
//! that lies on positively weighted neurons.
//!
//! The numerical modules are generic over [`Float`]; the aliases below fix
//! the scalar to `f64` (the default everywhere in the CLI) or `f32`.

pub mod baselines;
pub mod cache;
pub mod cli;
pub mod config;
pub mod credit;
pub mod metrics;
pub mod num;
pub mod pipeline;
pub mod provenance;
pub mod scoring;
pub mod segment;
pub mod slope;
pub mod stats;
pub mod synth;
pub mod weights;

pub use cache::{bucket_rows, parse_cache, write_cache, CacheError, NeuronKey, TokenRecord, TraceCache};
pub use config::RunConfig;
pub use num::Float;
pub use segment::State;

pub type Row64 = cache::Row<f64>;
pub type SlopeSeries64 = slope::SlopeSeries<f64>;
pub type EmissionParams64 = segment::EmissionParams<f64>;
pub type Segmentation64 = segment::Segmentation<f64>;
pub type CycleCredit64 = credit::CycleCredit<f64>;
pub type NeuronWeights64 = weights::NeuronWeights<f64>;
pub type ResponseSummary64 = scoring::ResponseSummary<f64>;
pub type ScoreRecord64 = scoring::ScoreRecord<f64>;
pub type TraceAnalysis64 = pipeline::TraceAnalysis<f64>;

pub type Row32 = cache::Row<f32>;
pub type SlopeSeries32 = slope::SlopeSeries<f32>;
pub type EmissionParams32 = segment::EmissionParams<f32>;
pub type Segmentation32 = segment::Segmentation<f32>;
pub type CycleCredit32 = credit::CycleCredit<f32>;
pub type NeuronWeights32 = weights::NeuronWeights<f32>;
pub type ResponseSummary32 = scoring::ResponseSummary<f32>;
pub type ScoreRecord32 = scoring::ScoreRecord<f32>;
pub type TraceAnalysis32 = pipeline::TraceAnalysis<f32>;

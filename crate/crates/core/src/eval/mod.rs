//! Accuracy, NLL, entropy and infilling metrics.

mod accuracy;
mod infill;
mod metrics;
mod report;

pub use accuracy::{accuracy_suite, decode_solution, infill_solution, AccuracyReport, DecodeConfig};
pub use infill::{build_infill_set, InfillExample, SegmentMode};
pub use metrics::{
    generation_metrics, infill_deltas, nll_under, pct_delta, summarize_infill, unigram_entropy, CausalScorer,
    GenerationMetrics, InfillMetrics, InfillSummary,
};
pub use report::{config_hash, Report};

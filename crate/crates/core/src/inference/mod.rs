//! Decoders for every model family.

mod arm;
mod ilm;
mod mdm;
mod sampling;
mod state;

pub use arm::{arm_generate, NextTokenModel};
pub use ilm::{ilm_generate, ilm_step, Generation, InsertionScorer, StepOutcome, TrajectoryStep};
pub use mdm::{mdm_generate, mdm_infill, mdm_solution, Denoiser, MdmSampler};
pub use sampling::{
    nucleus_filter, sample_logits, sample_weighted, top_k_filter, two_step_sample, SampleMode, SamplerConfig,
};
pub use state::{InfillMode, InsertionState, GAP};

//! Insertion language models over token sequences, with autoregressive and
//! masked-diffusion baselines, synthetic planning tasks and evaluation tools.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod inference;
pub mod model;
pub mod oracle;
pub mod scalar;
pub mod training;
pub mod seeding;
pub mod tasks;
pub mod tensor;

pub use error::{Error, ErrorClass, Result};
pub use scalar::Scalar;

/// Model weights in the training precision.
pub type Model = model::ModelWeights<f32>;
/// Double-precision weights, used for gradient checks.
pub type Model64 = model::ModelWeights<f64>;

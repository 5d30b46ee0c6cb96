use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Vocab;
use crate::error::{Error, Result};
use super::infill::InfillExample;
use crate::corpus::CleanSequence;
use crate::inference::{
    arm_generate, ilm_generate, mdm_generate, mdm_infill, mdm_solution, InfillMode, InsertionState, MdmSampler,
    SamplerConfig,
};
use crate::training::mdm_layout;
use crate::model::{ModelWeights, Variant};
use crate::scalar::Scalar;
use crate::seeding::{rng_for, stream};
use crate::tasks::star::Verdict;

/// How each model family decodes a solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub sampler: SamplerConfig,
    pub mdm_steps: usize,
    /// MDM region length after `<s>`; its training value.
    pub mdm_region: usize,
    pub greedy: bool,
    pub seed: u64,
}

impl DecodeConfig {
    pub fn greedy(mdm_region: usize) -> Self {
        DecodeConfig { sampler: SamplerConfig::greedy(), mdm_steps: mdm_region, mdm_region, greedy: true, seed: 0 }
    }
}

/// Decodes the solution region after `prompt <s>`; the flag marks a budget cut.
pub fn decode_solution<T: Scalar, R: Rng + ?Sized>(
    model: &ModelWeights<T>,
    prompt: &[u32],
    vocab: &Vocab,
    cfg: &DecodeConfig,
    rng: &mut R,
) -> Result<(Vec<u32>, bool)> {
    match model.variant() {
        Variant::Ilm | Variant::It => {
            let g = ilm_generate(InsertionState::from_prompt(prompt, vocab), model, vocab, &cfg.sampler, rng)?;
            let bos = prompt.len();
            Ok((g.tokens[bos + 1..g.tokens.len() - 1].to_vec(), g.truncated))
        }
        Variant::Arm => {
            let nucleus = if cfg.greedy { Some(1e-9) } else { cfg.sampler.nucleus_p };
            arm_generate(prompt, model, vocab, nucleus, usize::MAX, rng)
        }
        Variant::Mdm => {
            let sampler = MdmSampler { steps: cfg.mdm_steps, greedy: cfg.greedy };
            let (x, _) = mdm_generate(prompt, cfg.mdm_region, sampler, model, vocab, rng)?;
            let truncated = !x[prompt.len() + 1..].contains(&vocab.eos);
            Ok((mdm_solution(&x, prompt.len(), vocab), truncated))
        }
    }
}

/// Fills the blanks of one infill example and returns the completed content.
/// Insertion models see only the template and choose the fill lengths; the
/// MDM gets one `<mask>` per missing token.
pub fn infill_solution<T: Scalar, R: Rng + ?Sized>(
    model: &ModelWeights<T>,
    ex: &InfillExample,
    vocab: &Vocab,
    cfg: &DecodeConfig,
    rng: &mut R,
) -> Result<Vec<u32>> {
    match model.variant() {
        Variant::Ilm | Variant::It => {
            let st = InsertionState::from_template(&ex.template(vocab), vocab, InfillMode::BlanksOnly)?;
            let g = ilm_generate(st, model, vocab, &cfg.sampler, rng)?;
            Ok(g.tokens[1..g.tokens.len() - 1].to_vec())
        }
        Variant::Mdm => {
            let masked = CleanSequence::unconditioned(&ex.masked(vocab), vocab);
            let row = mdm_layout(&masked, cfg.mdm_region, vocab)?;
            let sampler = MdmSampler { steps: cfg.mdm_steps, greedy: cfg.greedy };
            let out = mdm_infill(&row, 0, sampler, model, vocab, rng)?;
            Ok(out[1..1 + ex.gt.len()].to_vec())
        }
        Variant::Arm => Err(Error::VariantMismatch { expected: "ilm, it or mdm".into(), actual: "arm".into() }),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub seq_acc: f64,
    pub tok_acc: f64,
    pub n: usize,
    pub n_truncated: usize,
    pub predictions: Vec<Vec<u32>>,
    pub verdicts: Vec<Verdict>,
}

/// Decodes every `(prompt, gold)` pair with its own seeded generator and
/// averages the verifier's verdicts.
pub fn accuracy_suite<T, F>(
    model: &ModelWeights<T>,
    tests: &[(Vec<u32>, Vec<u32>)],
    vocab: &Vocab,
    cfg: &DecodeConfig,
    mut verify: F,
) -> Result<AccuracyReport>
where
    T: Scalar,
    F: FnMut(usize, &[u32]) -> Verdict,
{
    if tests.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let mut r = AccuracyReport::default();
    for (i, (prompt, _)) in tests.iter().enumerate() {
        let mut rng = rng_for(cfg.seed, &[stream::DECODE, i as u64]);
        let (pred, truncated) = decode_solution(model, prompt, vocab, cfg, &mut rng)?;
        let v = verify(i, &pred);
        r.seq_acc += v.exact as u8 as f64;
        r.tok_acc += v.token_acc;
        r.n_truncated += truncated as usize;
        r.predictions.push(pred);
        r.verdicts.push(v);
    }
    r.n = tests.len();
    r.seq_acc /= r.n as f64;
    r.tok_acc /= r.n as f64;
    Ok(r)
}

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Result;
use clap::{Args, ValueEnum};
use ilm::corpus::Vocab;
use ilm::eval::generation_metrics;
use ilm::inference::{
    arm_generate, ilm_generate, mdm_generate, mdm_infill, mdm_solution, InfillMode, InsertionState, MdmSampler, SampleMode,
    SamplerConfig,
};
use ilm::model::{load_checkpoint, load_checkpoint_as, Variant};
use ilm::seeding::{rng_for, stream};
use ilm::Model;
use log::info;
use serde_json::json;

use crate::run::{vocab_for, RunManifest};
use crate::usage;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Joint,
    TwoStep,
}

/// Insertion-decoder settings shared by `sample` and `infill`.
#[derive(Args, Clone, Debug, Default)]
pub struct InsertionFlags {
    /// ILM/IT: sample the joint table directly or slot-then-token.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// ILM/IT: keep the k most likely slots.
    #[arg(long)]
    top_k: Option<usize>,
    /// Nucleus mass for token choice (ILM/IT/ARM).
    #[arg(long)]
    nucleus_p: Option<f64>,
    /// ILM: stop when the stop probability exceeds this threshold.
    #[arg(long)]
    tau: Option<f64>,
    /// ILM/IT: cap on insertions.
    #[arg(long)]
    max_insertions: Option<usize>,
}

impl InsertionFlags {
    fn given(&self) -> bool {
        self.mode.is_some() || self.top_k.is_some() || self.tau.is_some() || self.max_insertions.is_some()
    }

    fn sampler(&self) -> SamplerConfig {
        let d = SamplerConfig::default();
        SamplerConfig {
            mode: match self.mode {
                Some(Mode::Joint) => SampleMode::Joint,
                _ => SampleMode::TwoStep,
            },
            top_k: self.top_k,
            nucleus_p: self.nucleus_p,
            stop_threshold: self.tau.unwrap_or(d.stop_threshold),
            max_insertions: self.max_insertions,
            ..d
        }
    }
}

#[derive(Args)]
pub struct SampleArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Vocabulary file; defaults to the one next to the checkpoint.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(short, long, default_value_t = 16)]
    n: usize,
    /// JSONL output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Space-separated prompt tokens placed before `<s>`.
    #[arg(long)]
    prompt: Option<String>,
    #[command(flatten)]
    flags: InsertionFlags,
    /// ILM/IT: write insertion trajectories (JSONL) here.
    #[arg(long)]
    trajectories: Option<PathBuf>,
    /// MDM: unmasking steps; a comma-separated list runs a sweep.
    #[arg(long, value_delimiter = ',')]
    steps: Vec<usize>,
    /// MDM: solution-region length; defaults to the training value.
    #[arg(long)]
    region: Option<usize>,
    /// ARM evaluator; adds NLL and entropy to each MDM sweep record.
    #[arg(long)]
    evaluator: Option<PathBuf>,
    /// MDM sweep records (JSONL: steps, timing, metrics); stderr log only when absent.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| ilm::Error::io(p, e))?)),
        None => Box::new(BufWriter::new(std::io::stdout())),
    })
}

fn encode(text: &str, vocab: &Vocab) -> Result<Vec<u32>> {
    Ok(vocab.encode_line(text, 1)?)
}

fn mdm_region(ckpt: &Path, explicit: Option<usize>, model: &Model, prompt_len: usize) -> Result<usize> {
    let r = match explicit.or_else(|| RunManifest::for_checkpoint(ckpt).map(|m| m.mdm_region)) {
        Some(r) => r,
        None => return usage("MDM decoding needs --region (no run manifest next to the checkpoint)"),
    };
    if prompt_len + 1 + r > model.config.max_seq_len {
        return usage(format!("prompt plus region ({}) exceeds the model context", prompt_len + 1 + r));
    }
    Ok(r)
}

fn is_reversed(ckpt: &Path) -> bool {
    RunManifest::for_checkpoint(ckpt).is_some_and(|m| m.config.reversed())
}

pub fn run_sample(a: SampleArgs) -> Result<()> {
    let model: Model = load_checkpoint(&a.ckpt)?;
    let vocab = vocab_for(&a.ckpt, a.vocab.as_deref())?;
    if vocab.len() != model.config.vocab_size {
        return Err(ilm::Error::Config("vocabulary does not match the checkpoint".into()).into());
    }
    let variant = model.variant();
    let insertion = variant.is_insertion();
    if !insertion && (a.flags.given() || a.trajectories.is_some()) {
        return usage(format!("--mode/--top-k/--tau/--max-insertions/--trajectories need an ILM or IT checkpoint, got {variant}"));
    }
    if variant != Variant::Mdm && (!a.steps.is_empty() || a.region.is_some() || a.evaluator.is_some()) {
        return usage(format!("--steps/--region/--evaluator apply to MDM checkpoints, got {variant}"));
    }
    if variant == Variant::Mdm && a.flags.nucleus_p.is_some() {
        return usage("the MDM decoder has no nucleus filter");
    }
    let prompt = match &a.prompt {
        Some(p) => encode(p, &vocab)?,
        None => vec![],
    };
    let reversed = is_reversed(&a.ckpt);
    let mut out = open_out(a.out.as_deref())?;
    let unreverse = |mut c: Vec<u32>| {
        if reversed {
            c.reverse();
        }
        c
    };

    match variant {
        Variant::Ilm | Variant::It => {
            let sampler = a.flags.sampler();
            let mut traj = match &a.trajectories {
                Some(p) => Some(open_out(Some(p))?),
                None => None,
            };
            for i in 0..a.n {
                let mut rng = rng_for(a.seed, &[stream::DECODE, i as u64]);
                let g = ilm_generate(InsertionState::from_prompt(&prompt, &vocab), &model, &vocab, &sampler, &mut rng)?;
                let content = g.tokens[prompt.len() + 1..g.tokens.len() - 1].to_vec();
                writeln!(out, "{}", json!({ "index": i, "text": vocab.decode(&content), "truncated": g.truncated }))?;
                if let Some(t) = traj.as_mut() {
                    let steps: Vec<_> = g
                        .trajectory
                        .iter()
                        .map(|s| json!({ "step": s.step, "slot": s.slot, "token": vocab.token(s.token), "position": s.position }))
                        .collect();
                    writeln!(t, "{}", json!({ "index": i, "steps": steps }))?;
                }
            }
            if let Some(mut t) = traj {
                t.flush()?;
            }
        }
        Variant::Arm => {
            for i in 0..a.n {
                let mut rng = rng_for(a.seed, &[stream::DECODE, i as u64]);
                let (c, truncated) = arm_generate(&prompt, &model, &vocab, a.flags.nucleus_p, usize::MAX, &mut rng)?;
                writeln!(out, "{}", json!({ "index": i, "text": vocab.decode(&unreverse(c)), "truncated": truncated }))?;
            }
        }
        Variant::Mdm => {
            let region = mdm_region(&a.ckpt, a.region, &model, prompt.len())?;
            let evaluator: Option<Model> = match &a.evaluator {
                Some(p) => Some(load_checkpoint_as(p, &[Variant::Arm])?),
                None => None,
            };
            let mut metrics = match &a.metrics {
                Some(p) => Some(open_out(Some(p))?),
                None => None,
            };
            let settings = if a.steps.is_empty() { vec![region] } else { a.steps.clone() };
            for &steps in &settings {
                if steps == 0 {
                    return usage("--steps values must be positive");
                }
                let t = Instant::now();
                let mut samples = Vec::with_capacity(a.n);
                for i in 0..a.n {
                    let mut rng = rng_for(a.seed, &[stream::DECODE, i as u64]);
                    let (x, _) = mdm_generate(&prompt, region, MdmSampler { steps, greedy: false }, &model, &vocab, &mut rng)?;
                    samples.push(mdm_solution(&x, prompt.len(), &vocab));
                }
                let secs = t.elapsed().as_secs_f64();
                for (i, s) in samples.iter().enumerate() {
                    writeln!(out, "{}", json!({ "index": i, "steps": steps, "text": vocab.decode(s) }))?;
                }
                let mut rec = json!({
                    "steps": steps,
                    "n": a.n,
                    "seconds": secs,
                    "seconds_per_token": secs / (a.n * region).max(1) as f64,
                });
                if let Some(ev) = &evaluator {
                    let m = generation_metrics(ev, &samples, &vocab)?;
                    rec["nll"] = json!(m.nll);
                    rec["entropy"] = json!(m.entropy);
                    rec["mean_len"] = json!(m.mean_len);
                }
                info!("{rec}");
                if let Some(m) = metrics.as_mut() {
                    writeln!(m, "{rec}")?;
                }
            }
            if let Some(mut m) = metrics {
                m.flush()?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Args)]
pub struct InfillArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// One template per line. ILM/IT mark blanks with `<gap>`, MDM with one
    /// `<mask>` per missing token. `<s>`/`</s>` are added when absent.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    flags: InsertionFlags,
    /// ILM/IT: allow insertions anywhere, not just inside the blanks.
    #[arg(long)]
    anywhere: bool,
    /// MDM: unmasking steps; defaults to the region length.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    region: Option<usize>,
}

fn wrap(line: &str) -> String {
    let mut t = line.trim().to_string();
    if !t.split_whitespace().any(|w| w == ilm::corpus::BOS) {
        t = format!("{} {t}", ilm::corpus::BOS);
    }
    if t.split_whitespace().last() != Some(ilm::corpus::EOS) {
        t = format!("{t} {}", ilm::corpus::EOS);
    }
    t
}

pub fn run_infill(a: InfillArgs) -> Result<()> {
    let model: Model = load_checkpoint(&a.ckpt)?;
    let vocab = vocab_for(&a.ckpt, a.vocab.as_deref())?;
    let variant = model.variant();
    if variant == Variant::Arm {
        return usage("left-to-right models cannot infill; use an ILM, IT or MDM checkpoint");
    }
    if variant == Variant::Mdm && (a.flags.given() || a.flags.nucleus_p.is_some() || a.anywhere) {
        return usage("insertion sampler flags do not apply to MDM checkpoints");
    }
    if variant != Variant::Mdm && (a.steps.is_some() || a.region.is_some()) {
        return usage("--steps/--region apply to MDM checkpoints");
    }
    let text = std::fs::read_to_string(&a.input).map_err(|e| ilm::Error::io(&a.input, e))?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.is_empty() {
        return Err(ilm::Error::invalid(format!("{} has no templates", a.input.display())).into());
    }
    let mut out = open_out(a.out.as_deref())?;
    let sampler = a.flags.sampler();
    let mode = if a.anywhere { InfillMode::Anywhere } else { InfillMode::BlanksOnly };
    for (i, line) in lines.iter().enumerate() {
        let tpl = wrap(line);
        let mut rng = rng_for(a.seed, &[stream::INFILL, i as u64]);
        let filled = if variant == Variant::Mdm {
            let row = vocab.encode_line(&tpl, i + 1)?;
            let bos = row.iter().position(|&t| t == vocab.bos).unwrap_or(0);
            let region = mdm_region(&a.ckpt, a.region, &model, bos)?;
            let content_len = row.len() - bos - 1;
            if content_len > region {
                return Err(ilm::Error::invalid(format!("line {}: template longer than the MDM region {region}", i + 1)).into());
            }
            let mut padded = row.clone();
            padded.extend(std::iter::repeat_n(vocab.pad, region - content_len));
            let steps = a.steps.unwrap_or(region);
            let x = mdm_infill(&padded, bos, MdmSampler { steps, greedy: false }, &model, &vocab, &mut rng)?;
            x[bos + 1..row.len() - 1].to_vec()
        } else {
            let st = InsertionState::from_template(&tpl, &vocab, mode)?;
            let bos = st.sequence().iter().position(|&t| t == vocab.bos).unwrap_or(0);
            let g = ilm_generate(st, &model, &vocab, &sampler, &mut rng)?;
            g.tokens[bos + 1..g.tokens.len() - 1].to_vec()
        };
        writeln!(out, "{}", json!({ "index": i, "template": line.trim(), "text": vocab.decode(&filled) }))?;
    }
    out.flush()?;
    Ok(())
}

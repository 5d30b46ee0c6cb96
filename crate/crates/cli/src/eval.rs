use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, ValueEnum};
use ilm::eval::{
    accuracy_suite, build_infill_set, decode_solution, generation_metrics, infill_deltas, infill_solution, summarize_infill,
    DecodeConfig, Report, SegmentMode,
};
use ilm::inference::SamplerConfig;
use ilm::model::{load_checkpoint, load_checkpoint_as, Variant};
use ilm::seeding::{rng_for, stream};
use ilm::tasks::{encode_lines, read_records};
use ilm::Model;
use log::info;
use serde_json::json;

use crate::data::{DataDir, Verifier};
use crate::run::{vocab_for, RunManifest};
use crate::{usage, EvalMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Segments {
    Single,
    Multi,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    mode: EvalMode,
    /// Model under evaluation. Generation mode can take `--samples` instead.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Generation mode: JSONL from `sample` (field `text`) or plain lines.
    #[arg(long)]
    samples: Option<PathBuf>,
    /// Data directory; defaults to the one recorded with the checkpoint's run.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Record file to evaluate on instead of the data directory's test split.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Causal (ARM) evaluator; required for generation and infill modes.
    #[arg(long)]
    evaluator: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Use at most this many test examples (or samples to generate).
    #[arg(short, long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Accuracy mode: sample instead of greedy decoding.
    #[arg(long)]
    sample: bool,
    /// MDM unmasking steps; defaults to the region length.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    region: Option<usize>,
    #[arg(long, value_enum, default_value = "single")]
    segments: Segments,
    /// Include per-example predictions in the report.
    #[arg(long)]
    examples: bool,
    /// Report path; printed to stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
}

struct Loaded {
    model: Model,
    manifest: Option<RunManifest>,
}

fn load_model(a: &EvalArgs) -> Result<Loaded> {
    let Some(ckpt) = &a.ckpt else {
        return usage(format!("--mode {:?} needs --ckpt", a.mode).to_lowercase());
    };
    Ok(Loaded { model: load_checkpoint(ckpt)?, manifest: RunManifest::for_checkpoint(ckpt) })
}

fn data_dir(a: &EvalArgs, manifest: Option<&RunManifest>) -> Result<DataDir> {
    match a.data.clone().or_else(|| manifest.map(|m| m.data_dir.clone())) {
        Some(p) => DataDir::open(&p),
        None => usage("no data directory: pass --data"),
    }
}

fn evaluator(a: &EvalArgs) -> Result<Model> {
    match &a.evaluator {
        Some(p) => Ok(load_checkpoint_as(p, &[Variant::Arm])?),
        None => usage(format!("--mode {} needs --evaluator (an ARM checkpoint)", mode_name(a.mode))),
    }
}

fn mode_name(m: EvalMode) -> &'static str {
    match m {
        EvalMode::Accuracy => "accuracy",
        EvalMode::Generation => "generation",
        EvalMode::Infill => "infill",
    }
}

fn decode_config(a: &EvalArgs, manifest: Option<&RunManifest>) -> Result<DecodeConfig> {
    let region = a.region.or(manifest.map(|m| m.mdm_region)).unwrap_or(0);
    let mut cfg = if a.sample {
        DecodeConfig { sampler: SamplerConfig::default(), mdm_steps: region, mdm_region: region, greedy: false, seed: a.seed }
    } else {
        DecodeConfig { seed: a.seed, ..DecodeConfig::greedy(region) }
    };
    if let Some(s) = a.steps {
        cfg.mdm_steps = s;
    }
    Ok(cfg)
}

fn test_lines(a: &EvalArgs, data: &DataDir) -> Result<Vec<String>> {
    let mut lines = match &a.test {
        Some(p) => read_records(p)?,
        None => data.lines("test")?,
    };
    if let Some(n) = a.n {
        lines.truncate(n);
    }
    if lines.is_empty() {
        return Err(ilm::Error::invalid("the test set is empty").into());
    }
    Ok(lines)
}

pub fn run(a: EvalArgs) -> Result<()> {
    let mut report = Report::new(&json!({
        "mode": mode_name(a.mode),
        "ckpt": a.ckpt,
        "samples": a.samples,
        "data": a.data,
        "test": a.test,
        "evaluator": a.evaluator,
        "n": a.n,
        "seed": a.seed,
        "sample": a.sample,
        "steps": a.steps,
        "segments": format!("{:?}", a.segments),
    }))?;
    match a.mode {
        EvalMode::Accuracy => accuracy(&a, &mut report)?,
        EvalMode::Generation => generation(&a, &mut report)?,
        EvalMode::Infill => infill(&a, &mut report)?,
    }
    match &a.report {
        Some(p) => report.write(p)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

fn accuracy(a: &EvalArgs, report: &mut Report) -> Result<()> {
    let Loaded { model, manifest } = load_model(a)?;
    let data = data_dir(a, manifest.as_ref())?;
    let vocab = &data.vocab;
    if vocab.len() != model.config.vocab_size {
        return Err(ilm::Error::Config("data vocabulary does not match the checkpoint".into()).into());
    }
    let lines = test_lines(a, &data)?;
    let seqs = encode_lines(&lines, vocab, data.task.spec.is_conditioned())?;
    let verifier = Verifier::new(&data.task.spec, &lines, &seqs)?;
    let reversed = manifest.as_ref().is_some_and(|m| m.config.reversed());
    let tests: Vec<(Vec<u32>, Vec<u32>)> = seqs.iter().map(|s| (s.prompt().to_vec(), s.content().to_vec())).collect();
    let cfg = decode_config(a, manifest.as_ref())?;
    if model.variant() == Variant::Mdm && cfg.mdm_region == 0 {
        return usage("MDM decoding needs --region (no run manifest next to the checkpoint)");
    }
    let r = accuracy_suite(&model, &tests, vocab, &cfg, |i, pred| {
        let mut p = pred.to_vec();
        if reversed {
            p.reverse();
        }
        verifier.verify(i, &p, vocab)
    })?;
    info!("seq_acc {:.4} tok_acc {:.4} over {}", r.seq_acc, r.tok_acc, r.n);
    report.set("seq_acc", r.seq_acc)?;
    report.set("tok_acc", r.tok_acc)?;
    report.set("n", r.n)?;
    report.set("n_truncated", r.n_truncated)?;
    if a.examples {
        report.examples = Some(
            r.predictions
                .iter()
                .zip(&r.verdicts)
                .map(|(p, v)| {
                    let mut p = p.clone();
                    if reversed {
                        p.reverse();
                    }
                    json!({ "prediction": vocab.decode(&p), "exact": v.exact, "token_acc": v.token_acc })
                })
                .collect(),
        );
    }
    Ok(())
}

fn read_samples(path: &PathBuf, vocab: &ilm::corpus::Vocab) -> Result<Vec<Vec<u32>>> {
    let text = std::fs::read_to_string(path).map_err(|e| ilm::Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let t = match serde_json::from_str::<serde_json::Value>(l) {
                Ok(v) if v.is_object() => v["text"].as_str().map(str::to_owned).ok_or_else(|| {
                    ilm::Error::Parse { line: i + 1, offset: 0, message: "sample record has no `text`".into() }
                })?,
                _ => l.to_string(),
            };
            Ok(vocab.encode_line(&t, i + 1)?)
        })
        .collect()
}

fn generation(a: &EvalArgs, report: &mut Report) -> Result<()> {
    let ev = evaluator(a)?;
    let ev_path = a.evaluator.as_ref().expect("checked above");
    let samples = match (&a.samples, &a.ckpt) {
        (Some(p), _) => {
            let vocab = vocab_for(ev_path, a.vocab.as_deref())?;
            (read_samples(p, &vocab)?, vocab)
        }
        (None, Some(ckpt)) => {
            let Loaded { model, manifest } = load_model(a)?;
            let vocab = vocab_for(ckpt, a.vocab.as_deref())?;
            let cfg = DecodeConfig { sampler: SamplerConfig::default(), greedy: false, ..decode_config(a, manifest.as_ref())? };
            let n = a.n.unwrap_or(200);
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                let mut rng = rng_for(a.seed, &[stream::DECODE, i as u64]);
                let mut x = decode_solution(&model, &[], &vocab, &cfg, &mut rng)?.0;
                if manifest.as_ref().is_some_and(|m| m.config.reversed()) {
                    x.reverse();
                }
                out.push(x);
            }
            (out, vocab)
        }
        (None, None) => return usage("--mode generation needs --samples or --ckpt"),
    };
    let (samples, vocab) = samples;
    if samples.is_empty() {
        return Err(ilm::Error::invalid("no samples to evaluate").into());
    }
    if vocab.len() != ev.config.vocab_size {
        return Err(ilm::Error::Config("sample vocabulary does not match the evaluator".into()).into());
    }
    let m = generation_metrics(&ev, &samples, &vocab)?;
    info!("nll {:.4} entropy {:.4} mean_len {:.2}", m.nll, m.entropy, m.mean_len);
    report.set("nll", m.nll)?;
    report.set("entropy", m.entropy)?;
    report.set("mean_len", m.mean_len)?;
    report.set("n_samples", m.n_samples)?;
    report.set("n_excluded", m.n_excluded)?;
    Ok(())
}

fn infill(a: &EvalArgs, report: &mut Report) -> Result<()> {
    let ev = evaluator(a)?;
    let Loaded { model, manifest } = load_model(a)?;
    if model.variant() == Variant::Arm {
        return usage("infill evaluation needs an ILM, IT or MDM checkpoint");
    }
    let data = data_dir(a, manifest.as_ref())?;
    let vocab = &data.vocab;
    let lines = test_lines(a, &data)?;
    let content: Vec<Vec<u32>> =
        encode_lines(&lines, vocab, data.task.spec.is_conditioned())?.iter().map(|s| s.content().to_vec()).collect();
    let mode = match a.segments {
        Segments::Single => SegmentMode::Single,
        Segments::Multi => SegmentMode::Multi,
    };
    let (set, skipped) = build_infill_set(&content, mode, &mut rng_for(a.seed, &[stream::INFILL]));
    if set.is_empty() {
        return Err(ilm::Error::invalid("no test sequence is long enough to blank a span").into());
    }
    // infilling always samples, as in unconditional generation
    let cfg = DecodeConfig { sampler: SamplerConfig::default(), greedy: false, ..decode_config(a, manifest.as_ref())? };
    if model.variant() == Variant::Mdm && cfg.mdm_region == 0 {
        return usage("MDM infilling needs --region (no run manifest next to the checkpoint)");
    }
    let mut results = Vec::with_capacity(set.len());
    let mut examples = Vec::new();
    for (i, ex) in set.iter().enumerate() {
        let mut rng = rng_for(a.seed, &[stream::INFILL, i as u64]);
        let filled = infill_solution(&model, ex, vocab, &cfg, &mut rng)?;
        if a.examples {
            examples.push(json!({ "template": ex.template(vocab), "infilled": vocab.decode(&filled), "gt": vocab.decode(&ex.gt) }));
        }
        results.push(infill_deltas(&filled, &ex.gt, &ex.inp(), &ev, vocab));
    }
    let s = summarize_infill(&results);
    info!("d_nll_gt {:.2}% d_nll_inp {:.2}% over {}", s.mean.d_nll_gt, s.mean.d_nll_inp, s.n);
    report.set("d_nll_gt", s.mean.d_nll_gt)?;
    report.set("d_ent_gt", s.mean.d_ent_gt)?;
    report.set("d_nll_inp", s.mean.d_nll_inp)?;
    report.set("d_ent_inp", s.mean.d_ent_inp)?;
    report.set("n", s.n)?;
    report.set("n_excluded", s.n_excluded)?;
    report.set("n_too_short", skipped)?;
    if a.examples {
        report.examples = Some(examples);
    }
    Ok(())
}

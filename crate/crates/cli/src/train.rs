use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Result;
use clap::Args;
use ilm::eval::config_hash;
use ilm::model::{save_checkpoint, ModelWeights};
use ilm::seeding::{rng_for, stream};
use ilm::training::{train, TrainSet, TrainState};
use log::info;
use serde_json::json;

use crate::config::{resolve, Partial, Settings};
use crate::data::{DataDir, VOCAB_FILE};
use crate::run::{MetricStream, RunManifest, CONFIG_FILE, METRICS_FILE, MODEL_FILE, STATE_FILE};

/// Context slack beyond the longest sequence in the data.
const LEN_MARGIN: usize = 4;

#[derive(Args)]
pub struct TrainArgs {
    /// Directory written by `gen-data`.
    #[arg(long)]
    data: PathBuf,
    /// Flat TOML file with any of the settings below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Defaults to `<run-root>/<variant>-<task>-<hash>`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Continue from the run directory's latest training state.
    #[arg(long)]
    resume: bool,
    /// Start over in an existing run directory.
    #[arg(long, conflicts_with = "resume")]
    force: bool,

    #[arg(long, value_parser = ["ilm", "arm", "armo", "mdm", "it"])]
    variant: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    grad_clip: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    log_every: Option<u64>,
    #[arg(long)]
    n_layers: Option<usize>,
    #[arg(long)]
    n_heads: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    d_ff: Option<usize>,
    #[arg(long)]
    max_seq_len: Option<usize>,
    #[arg(long)]
    time_bins: Option<usize>,
}

impl TrainArgs {
    fn flags(&self) -> Partial {
        Partial {
            variant: self.variant.clone(),
            lr: self.lr,
            batch_size: self.batch_size,
            steps: self.steps,
            seed: self.seed,
            grad_clip: self.grad_clip,
            weight_decay: self.weight_decay,
            checkpoint_every: self.checkpoint_every,
            log_every: self.log_every,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_model: self.d_model,
            d_ff: self.d_ff,
            max_seq_len: self.max_seq_len,
            time_bins: self.time_bins,
        }
    }
}

fn save_state(state: &TrainState<f32>, dir: &Path) -> Result<()> {
    let tmp = dir.join(format!("{STATE_FILE}.tmp"));
    state.save(&tmp)?;
    fs::rename(&tmp, dir.join(STATE_FILE)).map_err(|e| ilm::Error::io(dir.join(STATE_FILE), e))?;
    Ok(())
}

pub fn run(run_root: &Path, a: TrainArgs) -> Result<()> {
    let file = match &a.config {
        Some(p) => Partial::load(p)?,
        None => Partial::default(),
    };
    let settings: Settings = resolve(&a.flags(), &file);
    let cfg = settings.train_config()?;
    let data = DataDir::open(&a.data)?;
    let seqs = data.sequences("train", settings.reversed())?;
    let test = data.sequences("test", settings.reversed())?;
    let trainset = TrainSet::new(seqs, data.vocab.clone())?;

    // Longest row any decoder or objective will build from this data.
    let all = trainset.sequences.iter().chain(&test);
    let longest = all.clone().map(|s| s.ids.len() + 1).max().unwrap_or(0);
    let mdm_region = all.clone().map(|s| s.ids.len() - s.condition_len - 1).max().unwrap_or(1);
    let mdm_row = all.map(|s| s.condition_len).max().unwrap_or(0) + 1 + mdm_region;
    let need = longest.max(mdm_row);
    let max_seq_len = match settings.max_seq_len {
        0 => need + LEN_MARGIN,
        n if n < need => {
            return Err(ilm::Error::Config(format!("max_seq_len {n} is shorter than the data needs ({need})")).into())
        }
        n => n,
    };
    let model_cfg = settings.model_config(data.vocab.len(), max_seq_len)?;
    let trainset = TrainSet { mdm_region, ..trainset };

    let corpus_sha256 = data.manifest("train")?.sha256;
    let hash = config_hash(&json!({ "settings": settings, "corpus": corpus_sha256 }))?;
    let run_id = format!("{}-{}-{}", settings.variant, data.task.name, &hash[..8]);
    let dir = a.out_dir.clone().unwrap_or_else(|| run_root.join(&run_id));
    fs::create_dir_all(&dir).map_err(|e| ilm::Error::io(&dir, e))?;

    let resuming = a.resume && dir.join(STATE_FILE).exists();
    if !resuming && !a.force && dir.join(crate::run::MANIFEST_FILE).exists() {
        return Err(ilm::Error::invalid(format!(
            "{} already holds a run; pass --resume to continue or --force to start over",
            dir.display()
        ))
        .into());
    }
    let (mut state, mut metrics) = if resuming {
        let state = TrainState::<f32>::load(&dir.join(STATE_FILE))?;
        if state.weights.config != model_cfg {
            return Err(ilm::Error::Config("saved training state does not match the resolved model config".into()).into());
        }
        info!("resuming {} at step {}", dir.display(), state.step);
        let m = MetricStream::resume(&dir.join(METRICS_FILE), state.step)?;
        (state, m)
    } else {
        let w = ModelWeights::<f32>::init(model_cfg, &mut rng_for(settings.seed, &[stream::INIT]))?;
        (TrainState::new(w, &cfg), MetricStream::create(&dir.join(METRICS_FILE))?)
    };
    info!("run {run_id}: {} parameters, {} training sequences", state.weights.num_params(), trainset.sequences.len());

    data.vocab.save(&dir.join(VOCAB_FILE))?;
    fs::write(dir.join(CONFIG_FILE), settings.to_toml()?).map_err(|e| ilm::Error::io(dir.join(CONFIG_FILE), e))?;
    let mut manifest = RunManifest {
        run_id,
        config: settings.clone(),
        task: data.task.name.clone(),
        data_dir: data.path.clone(),
        corpus_sha256,
        seed: settings.seed,
        max_seq_len,
        mdm_region,
        step: state.step,
        checkpoints: vec![],
        reports: vec![METRICS_FILE.into()],
    };
    manifest.write(&dir)?;

    let t0 = Instant::now();
    let (mut sum, mut count) = (0.0, 0usize);
    train(&cfg, &trainset, &mut state, |r, st| {
        sum += r.total;
        count += 1;
        let io = |e: anyhow::Error| ilm::Error::invalid(format!("{e:#}"));
        if settings.log_every > 0 && (r.step % settings.log_every == 0 || r.step == cfg.max_steps) {
            metrics
                .record(&json!({
                    "step": r.step,
                    "loss": r.total,
                    "mean_loss": sum / count as f64,
                    "tok": r.tok_component,
                    "stop": r.stop_component,
                    "grad_norm": r.grad_norm,
                    "lr": cfg.lr,
                }))
                .map_err(io)?;
            info!("step {} loss {:.4} ({:.0}s)", r.step, sum / count as f64, t0.elapsed().as_secs_f64());
            (sum, count) = (0.0, 0);
        }
        if settings.checkpoint_every > 0 && r.step % settings.checkpoint_every == 0 && r.step < cfg.max_steps {
            save_state(st, &dir).map_err(io)?;
            manifest.step = r.step;
            manifest.checkpoints = vec![STATE_FILE.into()];
            manifest.write(&dir).map_err(io)?;
        }
        Ok(())
    })?;

    save_state(&state, &dir)?;
    save_checkpoint(&state.weights, &dir.join(MODEL_FILE))?;
    manifest.step = state.step;
    manifest.checkpoints = vec![STATE_FILE.into(), MODEL_FILE.into()];
    manifest.write(&dir)?;
    println!("{}", dir.join(MODEL_FILE).display());
    Ok(())
}

use ilm::corpus::{CleanSequence, Vocab};
use ilm::model::{ModelConfig, ModelWeights, Variant};
use ilm::seeding::rng_for;
use ilm::training::{
    batch_objective, mdm_layout, mdm_loss, mdm_noise, train, LogLinear, TrainConfig, TrainSet, TrainState,
};
use ilm::Error;
use rand::Rng;

/// 50 prompts, each followed by a single memorized token. With one content
/// token the target insertion distribution is a point mass, so the loss can
/// reach zero.
fn memorization_set() -> TrainSet {
    let prompts: Vec<String> = (0..50).map(|i| format!("p{i}")).collect();
    let answers = ["x", "y", "z", "w"];
    let vocab = Vocab::new(prompts.iter().map(String::as_str).chain(answers)).unwrap();
    let seqs = (0..50)
        .map(|i| {
            let p = vocab.id(&prompts[i]).unwrap();
            let a = vocab.id(answers[(i * 7) % 4]).unwrap();
            CleanSequence::conditioned(&[p], &[a], &vocab)
        })
        .collect();
    TrainSet::new(seqs, vocab).unwrap()
}

fn config(variant: Variant, steps: u64) -> TrainConfig {
    TrainConfig { lr: 3e-3, batch_size: 32, max_steps: steps, eval_every: 50, ..TrainConfig::new(variant) }
}

fn fresh(data: &TrainSet, cfg: &TrainConfig) -> TrainState<f32> {
    let w = ModelWeights::init(ModelConfig::tiny(cfg.variant, data.vocab.len()), &mut rng_for(cfg.seed, &[3])).unwrap();
    TrainState::new(w, cfg)
}

#[test]
fn ilm_memorizes_small_corpus() {
    let data = memorization_set();
    let cfg = config(Variant::Ilm, 200);
    let mut state = fresh(&data, &cfg);
    let reports = train(&cfg, &data, &mut state, |_, _| Ok(())).unwrap();
    assert_eq!(reports.len(), 200);
    for r in &reports {
        assert!((r.total - (r.tok_component + r.stop_component)).abs() < 1e-9);
    }
    let tail: f64 = reports[190..].iter().map(|r| r.total).sum::<f64>() / 10.0;
    assert!(tail < 0.1, "final ILM loss {tail}");
}

#[test]
fn identical_seeds_identical_reports() {
    let data = memorization_set();
    let cfg = config(Variant::Ilm, 15);
    let a = train(&cfg, &data, &mut fresh(&data, &cfg), |_, _| Ok(())).unwrap();
    let b = train(&cfg, &data, &mut fresh(&data, &cfg), |_, _| Ok(())).unwrap();
    assert_eq!(a, b);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let data = memorization_set();
    for variant in [Variant::Ilm, Variant::Mdm, Variant::Arm, Variant::It] {
        let cfg = config(variant, 12);
        let mut full = fresh(&data, &cfg);
        let want = train(&cfg, &data, &mut full, |_, _| Ok(())).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ckpt");
        let half = TrainConfig { max_steps: 5, ..cfg.clone() };
        let mut first = fresh(&data, &cfg);
        let mut got = train(&half, &data, &mut first, |_, _| Ok(())).unwrap();
        first.save(&path).unwrap();
        let mut resumed = TrainState::<f32>::load(&path).unwrap();
        assert_eq!(resumed, first);
        got.extend(train(&cfg, &data, &mut resumed, |_, _| Ok(())).unwrap());
        assert_eq!(got, want, "{variant}");
        assert_eq!(resumed.weights, full.weights);
    }
}

#[test]
fn wrong_variant_and_bad_config_rejected() {
    let data = memorization_set();
    let cfg = config(Variant::Ilm, 1);
    let mut state = fresh(&data, &config(Variant::Arm, 1));
    assert!(matches!(train(&cfg, &data, &mut state, |_, _| Ok(())), Err(Error::VariantMismatch { .. })));
    let bad = TrainConfig { grad_clip: Some(0.0), ..cfg };
    assert!(matches!(train(&bad, &data, &mut fresh(&data, &bad), |_, _| Ok(())), Err(Error::Config(_))));
}

#[test]
fn non_finite_loss_aborts_with_batch_dump() {
    let data = memorization_set();
    let cfg = config(Variant::Ilm, 3);
    let mut state = fresh(&data, &cfg);
    state.weights.stop.as_mut().unwrap().b.data[0] = f32::NAN;
    match train(&cfg, &data, &mut state, |_, _| Ok(())) {
        Err(Error::NonFinite(msg)) => assert!(msg.contains("<s>"), "{msg}"),
        other => panic!("expected a numerical error, got {other:?}"),
    }
}

#[test]
fn loss_is_invariant_to_batch_order() {
    let data = memorization_set();
    let cfg = config(Variant::Arm, 1);
    let state = fresh(&data, &cfg);
    let rows: Vec<_> = data.sequences[..6].iter().collect();
    let mut rev = rows.clone();
    rev.reverse();
    let mut rng = rng_for(0, &[]);
    let a = batch_objective(&state.weights, &data, &rows, &mut rng, None).unwrap();
    let b = batch_objective(&state.weights, &data, &rev, &mut rng, None).unwrap();
    assert!((a.total - b.total).abs() < 1e-6);
}

/// The single-draw MDM estimator on a fixed example: the running mean
/// settles, and its standard error shrinks like `1/sqrt(N)`.
#[test]
fn mdm_estimator_standard_error_shrinks() {
    let vocab = Vocab::new(["a", "b", "c"]).unwrap();
    let enc = |s: &str| vocab.encode_line(s, 0).unwrap();
    let x = CleanSequence::unconditioned(&enc("a b c a"), &vocab);
    let ids = mdm_layout(&x, 5, &vocab).unwrap();
    let v = vocab.len();
    let logits: Vec<f64> = (0..ids.len() * v).map(|i| (i as f64 * 0.37).sin()).collect();
    let s = LogLinear::default();
    let mut rng = rng_for(8, &[]);
    let draws: Vec<f64> = (0..10_000)
        .map(|_| {
            let t = rng.random_range(1e-3..=1.0);
            let e = mdm_noise(ids.clone(), 1, t, s, vocab.mask, &mut rng);
            mdm_loss(&logits, v, &e.x0, &e.xt, vocab.mask, 1, t, s).unwrap()
        })
        .collect();
    let se = |xs: &[f64]| {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0) / n).sqrt()
    };
    let (small, large) = (se(&draws[..1000]), se(&draws));
    let ratio = small / large;
    // sqrt(10) ~ 3.16; allow for sampling noise in the variance estimates.
    assert!(ratio > 2.0 && ratio < 5.0, "standard error ratio {ratio}");
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    assert!(mean.is_finite() && mean > 0.0);
}

//! Helpers shared by integration test targets.
#![allow(dead_code)]

use ilm::corpus::{batch, build_noised_example, CleanSequence, DropMask, PaddedBatch, Vocab};
use ilm::model::{ModelConfig, ModelWeights, Variant};
use ilm::seeding::rng_for;
use ilm::training::{
    arm_objective, ilm_objective, it_objective, mdm_layout, mdm_noise, mdm_objective, LogLinear, LossParts, MdmExample,
};
use ilm::Result;
use rand::Rng;

pub type Objective = Box<dyn Fn(&ModelWeights<f64>, Option<&mut ModelWeights<f64>>) -> Result<LossParts>>;

fn objective<F>(f: F) -> Objective
where
    F: Fn(&ModelWeights<f64>, Option<&mut ModelWeights<f64>>) -> Result<LossParts> + 'static,
{
    Box::new(f)
}

pub fn vocab() -> Vocab {
    Vocab::new(["a", "b", "c", "d", "e", "f", "g"]).unwrap()
}

pub fn perturbed_model(variant: Variant, v: &Vocab, seed: u64) -> ModelWeights<f64> {
    let mut w = ModelWeights::<f64>::init(ModelConfig::tiny(variant, v.len()), &mut rng_for(seed, &[])).unwrap();
    // move off the symmetric initialization so every parameter matters
    let mut rng = rng_for(seed, &[99]);
    w.visit_mut(|_, t| t.data.iter_mut().for_each(|x| *x += rng.random_range(-0.05..0.05)));
    w
}

#[derive(Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub worst: f64,
    pub failures: Vec<String>,
}

/// Compares analytic gradients with central differences (h = 1e-5) at
/// `per_tensor` random entries of every tensor. Relative error is
/// `|a - fd| / (max(|a|, |fd|) + 1e-7)`.
pub fn gradient_check(w: &ModelWeights<f64>, f: &Objective, per_tensor: usize, seed: u64) -> GradReport {
    let mut grads = w.zeros_like();
    f(w, Some(&mut grads)).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = grads.named().into_iter().map(|(n, t)| (n, t.data.clone())).collect();
    let mut rng = rng_for(seed, &[]);
    let h = 1e-5;
    let mut r = GradReport::default();
    for (ti, (tname, g)) in analytic.iter().enumerate() {
        let picks: Vec<usize> = if g.len() <= per_tensor {
            (0..g.len()).collect()
        } else {
            rand::seq::index::sample(&mut rng, g.len(), per_tensor).into_vec()
        };
        for j in picks {
            let mut plus = w.clone();
            plus.named_mut()[ti].1.data[j] += h;
            let mut minus = w.clone();
            minus.named_mut()[ti].1.data[j] -= h;
            let fd = (f(&plus, None).unwrap().total - f(&minus, None).unwrap().total) / (2.0 * h);
            let a = g[j];
            let err = (a - fd).abs() / (a.abs().max(fd.abs()) + 1e-7);
            if err > 1e-3 {
                r.failures.push(format!("{tname}[{j}] analytic {a:e} vs numeric {fd:e}"));
            }
            r.worst = r.worst.max(err);
            r.checked += 1;
        }
    }
    r
}

fn insertion_batch(v: &Vocab) -> PaddedBatch {
    let enc = |s: &str| v.encode_line(s, 0).unwrap();
    let x1 = CleanSequence::unconditioned(&enc("a b c d e"), v);
    let x2 = CleanSequence::conditioned(&enc("f g"), &enc("b b c"), v);
    let x3 = CleanSequence::unconditioned(&enc("c d"), v);
    let e1 = build_noised_example(&x1, &DropMask::from_bits(vec![false, true, true, false, true]), v);
    let e2 = build_noised_example(&x2, &DropMask::from_bits(vec![true, true, false]), v);
    let e3 = build_noised_example(&x3, &DropMask::none(2), v);
    batch(&[e1, e2, e3], 8, v.pad).unwrap()
}

/// A perturbed 2-layer, d_model 32 model and a fixed batch per objective.
pub fn gradient_cases() -> Vec<(&'static str, ModelWeights<f64>, Objective)> {
    let v = vocab();
    let enc = |s: &str| v.encode_line(s, 0).unwrap();
    let b = insertion_batch(&v);
    let b2 = b.clone();
    let eos = v.eos;

    let x1 = CleanSequence::conditioned(&enc("f g a"), &enc("b c d"), &v);
    let x2 = CleanSequence::unconditioned(&enc("e e a"), &v);
    let arm_b = PaddedBatch::from_sequences(&[&x1.ids, &x2.ids], &[3, 0], 9, v.pad).unwrap();

    let m1 = CleanSequence::conditioned(&enc("f g"), &enc("b c"), &v);
    let m2 = CleanSequence::unconditioned(&enc("a d e"), &v);
    let mut rng = rng_for(5, &[]);
    let s = LogLinear::default();
    let examples: Vec<MdmExample> = [(&m1, 0.8), (&m2, 0.55)]
        .into_iter()
        .map(|(x, t)| mdm_noise(mdm_layout(x, 5, &v).unwrap(), x.condition_len + 1, t, s, v.mask, &mut rng))
        .collect();
    assert!(examples.iter().any(|e| e.xt.contains(&v.mask)));
    let mv = v.clone();

    vec![
        ("ilm", perturbed_model(Variant::Ilm, &v, 1), objective(move |w, g| ilm_objective(w, &b, g))),
        ("it", perturbed_model(Variant::It, &v, 2), objective(move |w, g| it_objective(w, &b2, eos, g))),
        ("arm", perturbed_model(Variant::Arm, &v, 3), objective(move |w, g| arm_objective(w, &arm_b, g))),
        ("mdm", perturbed_model(Variant::Mdm, &v, 4), objective(move |w, g| mdm_objective(w, &examples, &mv, s, g))),
    ]
}

use rand::Rng;

use super::{ModelConfig, Variant};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights<T> {
    pub ln1_g: Tensor<T>,
    pub ln1_b: Tensor<T>,
    /// `d x 3d`: query, key, value projections side by side.
    pub w_qkv: Tensor<T>,
    pub w_o: Tensor<T>,
    pub ln2_g: Tensor<T>,
    pub ln2_b: Tensor<T>,
    pub w_ff1: Tensor<T>,
    pub b_ff1: Tensor<T>,
    pub w_ff2: Tensor<T>,
    pub b_ff2: Tensor<T>,
}

/// One-hidden-layer insertion unembedding `d -> d -> |V|`.
#[derive(Clone, Debug, PartialEq)]
pub struct InsertionHead<T> {
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

/// Binary stop classifier read from the `<stp>` position.
#[derive(Clone, Debug, PartialEq)]
pub struct StopHead<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

/// Per-position vocabulary head for ARM and MDM.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenHead<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights<T> {
    pub config: ModelConfig,
    pub tok_emb: Tensor<T>,
    pub time_emb: Option<Tensor<T>>,
    pub layers: Vec<LayerWeights<T>>,
    pub lnf_g: Tensor<T>,
    pub lnf_b: Tensor<T>,
    pub insertion: Option<InsertionHead<T>>,
    pub stop: Option<StopHead<T>>,
    pub token: Option<TokenHead<T>>,
}

impl<T: Scalar> ModelWeights<T> {
    /// Scaled-normal initialization; residual output projections are further
    /// scaled by `1/sqrt(2 n_layers)` and the stop bias starts at zero.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (d, f, v) = (config.d_model, config.d_ff, config.vocab_size);
        let proj_std = INIT_STD / (2.0 * config.n_layers as f64).sqrt();
        let tok_emb = Tensor::randn(&[v, d], INIT_STD, rng);
        let time_emb = (config.variant == Variant::Mdm).then(|| Tensor::randn(&[config.time_bins, d], INIT_STD, rng));
        let layers = (0..config.n_layers)
            .map(|_| LayerWeights {
                ln1_g: Tensor::filled(&[d], T::one()),
                ln1_b: Tensor::zeros(&[d]),
                w_qkv: Tensor::randn(&[d, 3 * d], INIT_STD, rng),
                w_o: Tensor::randn(&[d, d], proj_std, rng),
                ln2_g: Tensor::filled(&[d], T::one()),
                ln2_b: Tensor::zeros(&[d]),
                w_ff1: Tensor::randn(&[d, f], INIT_STD, rng),
                b_ff1: Tensor::zeros(&[f]),
                w_ff2: Tensor::randn(&[f, d], proj_std, rng),
                b_ff2: Tensor::zeros(&[d]),
            })
            .collect();
        let insertion = config.variant.is_insertion().then(|| InsertionHead {
            w1: Tensor::randn(&[d, d], INIT_STD, rng),
            b1: Tensor::zeros(&[d]),
            w2: Tensor::randn(&[d, v], INIT_STD, rng),
            b2: Tensor::zeros(&[v]),
        });
        let stop = (config.variant == Variant::Ilm)
            .then(|| StopHead { w: Tensor::randn(&[d], INIT_STD, rng), b: Tensor::zeros(&[1]) });
        let token = matches!(config.variant, Variant::Arm | Variant::Mdm)
            .then(|| TokenHead { w: Tensor::randn(&[d, v], INIT_STD, rng), b: Tensor::zeros(&[v]) });
        Ok(ModelWeights {
            lnf_g: Tensor::filled(&[d], T::one()),
            lnf_b: Tensor::zeros(&[d]),
            config,
            tok_emb,
            time_emb,
            layers,
            insertion,
            stop,
            token,
        })
    }

    /// Same structure with every tensor zeroed; used for gradients and
    /// optimizer moments.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(|_, t| t.fill_zero());
        z
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn expect_variant(&self, allowed: &[Variant]) -> Result<()> {
        if allowed.contains(&self.config.variant) {
            Ok(())
        } else {
            Err(Error::VariantMismatch {
                expected: allowed.iter().map(|v| v.as_str()).collect::<Vec<_>>().join("|"),
                actual: self.config.variant.to_string(),
            })
        }
    }

    /// Every tensor with a stable name, in a stable order.
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![("tok_emb".to_string(), &self.tok_emb)];
        if let Some(t) = &self.time_emb {
            out.push(("time_emb".into(), t));
        }
        for (i, l) in self.layers.iter().enumerate() {
            for (n, t) in [
                ("ln1.gain", &l.ln1_g),
                ("ln1.bias", &l.ln1_b),
                ("attn.w_qkv", &l.w_qkv),
                ("attn.w_o", &l.w_o),
                ("ln2.gain", &l.ln2_g),
                ("ln2.bias", &l.ln2_b),
                ("ff.w1", &l.w_ff1),
                ("ff.b1", &l.b_ff1),
                ("ff.w2", &l.w_ff2),
                ("ff.b2", &l.b_ff2),
            ] {
                out.push((format!("layers.{i}.{n}"), t));
            }
        }
        out.push(("lnf.gain".into(), &self.lnf_g));
        out.push(("lnf.bias".into(), &self.lnf_b));
        if let Some(h) = &self.insertion {
            out.push(("insertion.w1".into(), &h.w1));
            out.push(("insertion.b1".into(), &h.b1));
            out.push(("insertion.w2".into(), &h.w2));
            out.push(("insertion.b2".into(), &h.b2));
        }
        if let Some(h) = &self.stop {
            out.push(("stop.w".into(), &h.w));
            out.push(("stop.b".into(), &h.b));
        }
        if let Some(h) = &self.token {
            out.push(("token.w".into(), &h.w));
            out.push(("token.b".into(), &h.b));
        }
        out
    }

    /// Mutable counterpart of [`ModelWeights::named`], same order.
    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = vec![("tok_emb".to_string(), &mut self.tok_emb)];
        if let Some(t) = &mut self.time_emb {
            out.push(("time_emb".into(), t));
        }
        for (i, l) in self.layers.iter_mut().enumerate() {
            for (n, t) in [
                ("ln1.gain", &mut l.ln1_g),
                ("ln1.bias", &mut l.ln1_b),
                ("attn.w_qkv", &mut l.w_qkv),
                ("attn.w_o", &mut l.w_o),
                ("ln2.gain", &mut l.ln2_g),
                ("ln2.bias", &mut l.ln2_b),
                ("ff.w1", &mut l.w_ff1),
                ("ff.b1", &mut l.b_ff1),
                ("ff.w2", &mut l.w_ff2),
                ("ff.b2", &mut l.b_ff2),
            ] {
                out.push((format!("layers.{i}.{n}"), t));
            }
        }
        out.push(("lnf.gain".into(), &mut self.lnf_g));
        out.push(("lnf.bias".into(), &mut self.lnf_b));
        if let Some(h) = &mut self.insertion {
            out.push(("insertion.w1".into(), &mut h.w1));
            out.push(("insertion.b1".into(), &mut h.b1));
            out.push(("insertion.w2".into(), &mut h.w2));
            out.push(("insertion.b2".into(), &mut h.b2));
        }
        if let Some(h) = &mut self.stop {
            out.push(("stop.w".into(), &mut h.w));
            out.push(("stop.b".into(), &mut h.b));
        }
        if let Some(h) = &mut self.token {
            out.push(("token.w".into(), &mut h.w));
            out.push(("token.b".into(), &mut h.b));
        }
        out
    }

    pub fn visit(&self, mut f: impl FnMut(&str, &Tensor<T>)) {
        for (n, t) in self.named() {
            f(&n, t);
        }
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor<T>)) {
        for (n, t) in self.named_mut() {
            f(&n, t);
        }
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(|n, _| out.push(n.to_string()));
        out
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(|_, t| n += t.len());
        n
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit(|_, t| ok &= t.is_finite());
        ok
    }

    /// Converts every tensor to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ModelWeights<U> {
        let mut tensors = Vec::new();
        self.visit(|_, t| tensors.push(t.cast::<U>()));
        let mut out = ModelWeights::<U>::init_shell(self.config.clone());
        let mut it = tensors.into_iter();
        out.visit_mut(|_, t| *t = it.next().expect("same structure"));
        out
    }

    /// Correctly-shaped zero weights, without drawing random numbers.
    pub(crate) fn init_shell(config: ModelConfig) -> Self {
        let mut rng = crate::seeding::rng_for(0, &[]);
        let mut w = ModelWeights::<T>::init(config, &mut rng).expect("config validated by caller");
        w.visit_mut(|_, t| t.fill_zero());
        w
    }

    /// Flat copies of all tensors in visit order.
    pub fn flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(|_, t| out.extend_from_slice(&t.data));
        out
    }
}

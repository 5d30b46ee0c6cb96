//! Transformer backbone: packed forward pass with cached activations and a
//! hand-written backward pass.
//!
//! Rows of a [`PaddedBatch`] are packed end to end with their padding
//! removed, so attention is computed per segment and pad positions take no
//! part in any computation.

use super::rope::Rope;
use super::weights::{LayerWeights, ModelWeights};
use crate::corpus::PaddedBatch;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{gelu, gelu_grad, gemm, linear, linear_backward, softmax_in_place, Op, Tensor};

const LN_EPS: f64 = 1e-5;

/// Valid positions of a batch laid out contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct Packed {
    pub ids: Vec<u32>,
    /// `(start, len)` of each batch row in the packed layout.
    pub segments: Vec<(usize, usize)>,
    pub time_bins: Vec<Option<usize>>,
}

impl Packed {
    pub fn n_positions(&self) -> usize {
        self.ids.len()
    }

    pub fn max_segment(&self) -> usize {
        self.segments.iter().map(|s| s.1).max().unwrap_or(0)
    }
}

/// Final-layer hidden states for every valid position.
#[derive(Clone, Debug)]
pub struct Hidden<T> {
    pub packed: Packed,
    pub d_model: usize,
    pub data: Vec<T>,
}

impl<T> Hidden<T> {
    /// Hidden states of batch row `i`, `len x d_model`.
    pub fn row(&self, i: usize) -> &[T] {
        let (s, n) = self.packed.segments[i];
        &self.data[s * self.d_model..(s + n) * self.d_model]
    }

    /// Hidden state of position `p` in batch row `i`.
    pub fn at(&self, i: usize, p: usize) -> &[T] {
        let s = self.packed.segments[i].0 + p;
        &self.data[s * self.d_model..(s + 1) * self.d_model]
    }
}

/// Maps a noise level in `[0, 1]` to a time-embedding bin.
pub fn time_bin(t: f64, bins: usize) -> usize {
    ((t.clamp(0.0, 1.0) * bins as f64).floor() as usize).min(bins - 1)
}

pub(crate) fn pack<T: Scalar>(w: &ModelWeights<T>, batch: &PaddedBatch, time: Option<&[f64]>) -> Result<Packed> {
    let cfg = &w.config;
    if let Some(t) = time {
        if t.len() != batch.batch_size() {
            return Err(Error::invalid("one noise level per batch row is required"));
        }
    }
    let mut ids = Vec::new();
    let mut segments = Vec::with_capacity(batch.batch_size());
    let mut time_bins = Vec::with_capacity(batch.batch_size());
    for i in 0..batch.batch_size() {
        let row = batch.row(i);
        if row.len() > cfg.max_seq_len {
            return Err(Error::invalid(format!(
                "sequence length {} exceeds max_seq_len {}",
                row.len(),
                cfg.max_seq_len
            )));
        }
        if let Some(&bad) = row.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(Error::invalid(format!("token id {bad} outside vocab of size {}", cfg.vocab_size)));
        }
        segments.push((ids.len(), row.len()));
        ids.extend_from_slice(row);
        time_bins.push(match (time, &w.time_emb) {
            (Some(t), Some(_)) => Some(time_bin(t[i], cfg.time_bins)),
            _ => None,
        });
    }
    Ok(Packed { ids, segments, time_bins })
}

struct LnOut<T> {
    y: Vec<T>,
    xhat: Vec<T>,
    rstd: Vec<T>,
}

fn layer_norm<T: Scalar>(x: &[T], d: usize, g: &Tensor<T>, b: &Tensor<T>) -> LnOut<T> {
    let rows = x.len() / d;
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    let inv_d = T::one() / T::of(d as f64);
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().copied().sum::<T>() * inv_d;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + T::of(LN_EPS)).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (xr[j] - mean) * rs;
            xhat[r * d + j] = h;
            y[r * d + j] = h * g.data[j] + b.data[j];
        }
    }
    LnOut { y, xhat, rstd }
}

fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    ln: &LnOut<T>,
    d: usize,
    g: &Tensor<T>,
    dg: &mut Tensor<T>,
    db: &mut Tensor<T>,
    dx: &mut [T],
) {
    let inv_d = T::one() / T::of(d as f64);
    let mut dxhat = vec![T::zero(); d];
    for r in 0..ln.rstd.len() {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &ln.xhat[r * d..(r + 1) * d];
        let (mut m1, mut m2) = (T::zero(), T::zero());
        for j in 0..d {
            dg.data[j] += dyr[j] * xh[j];
            db.data[j] += dyr[j];
            dxhat[j] = dyr[j] * g.data[j];
            m1 += dxhat[j];
            m2 += dxhat[j] * xh[j];
        }
        m1 *= inv_d;
        m2 *= inv_d;
        let rs = ln.rstd[r];
        for j in 0..d {
            dx[r * d + j] += rs * (dxhat[j] - m1 - xh[j] * m2);
        }
    }
}

struct LayerCache<T> {
    ln1: LnOut<T>,
    /// Post-rotation queries and keys, raw values.
    qkv: Vec<T>,
    /// Attention probabilities per (segment, head), concatenated.
    probs: Vec<T>,
    ctx: Vec<T>,
    ln2: LnOut<T>,
    ff_pre: Vec<T>,
    ff_act: Vec<T>,
}

/// Activations retained for [`backbone_backward`].
pub struct BackboneCache<T> {
    packed: Packed,
    layers: Vec<LayerCache<T>>,
    lnf: LnOut<T>,
}

impl<T> BackboneCache<T> {
    pub fn packed(&self) -> &Packed {
        &self.packed
    }
}

struct Ctx<'a, T> {
    packed: &'a Packed,
    rope: Rope<T>,
    causal: bool,
    d: usize,
    n_heads: usize,
    dh: usize,
}

fn attention_forward<T: Scalar>(c: &Ctx<T>, qkv: &[T]) -> (Vec<T>, Vec<T>) {
    let (d, dh) = (c.d, c.dh);
    let n_total = c.packed.n_positions();
    let mut ctx = vec![T::zero(); n_total * d];
    let probs_len: usize = c.packed.segments.iter().map(|s| s.1 * s.1).sum::<usize>() * c.n_heads;
    let mut probs = vec![T::zero(); probs_len];
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut off = 0;
    for &(s, n) in &c.packed.segments {
        for h in 0..c.n_heads {
            let p = &mut probs[off..off + n * n];
            let q = &qkv[s * 3 * d + h * dh..];
            let k = &qkv[s * 3 * d + d + h * dh..];
            let v = &qkv[s * 3 * d + 2 * d + h * dh..];
            gemm(Op::N, Op::T, n, n, dh, scale, q, 3 * d, k, 3 * d, T::zero(), p, n);
            for i in 0..n {
                let row = &mut p[i * n..(i + 1) * n];
                if c.causal {
                    row[i + 1..].iter_mut().for_each(|x| *x = T::neg_infinity());
                }
                softmax_in_place(row);
            }
            gemm(Op::N, Op::N, n, dh, n, T::one(), p, n, v, 3 * d, T::zero(), &mut ctx[s * d + h * dh..], d);
            off += n * n;
        }
    }
    (ctx, probs)
}

/// Returns `dqkv` with respect to the post-rotation `q`, `k` and raw `v`.
fn attention_backward<T: Scalar>(c: &Ctx<T>, qkv: &[T], probs: &[T], dctx: &[T]) -> Vec<T> {
    let (d, dh) = (c.d, c.dh);
    let mut dqkv = vec![T::zero(); c.packed.n_positions() * 3 * d];
    let scale = T::one() / T::of(dh as f64).sqrt();
    let max_n = c.packed.max_segment();
    let mut dp = vec![T::zero(); max_n * max_n];
    let mut off = 0;
    for &(s, n) in &c.packed.segments {
        for h in 0..c.n_heads {
            let p = &probs[off..off + n * n];
            let dp = &mut dp[..n * n];
            let q = &qkv[s * 3 * d + h * dh..];
            let k = &qkv[s * 3 * d + d + h * dh..];
            let v = &qkv[s * 3 * d + 2 * d + h * dh..];
            let dc = &dctx[s * d + h * dh..];
            gemm(Op::N, Op::T, n, n, dh, T::one(), dc, d, v, 3 * d, T::zero(), dp, n);
            gemm(Op::T, Op::N, n, dh, n, T::one(), p, n, dc, d, T::zero(), &mut dqkv[s * 3 * d + 2 * d + h * dh..], 3 * d);
            for i in 0..n {
                let pr = &p[i * n..(i + 1) * n];
                let dr = &mut dp[i * n..(i + 1) * n];
                let dot = pr.iter().zip(dr.iter()).fold(T::zero(), |a, (&x, &y)| a + x * y);
                for j in 0..n {
                    dr[j] = pr[j] * (dr[j] - dot);
                }
            }
            gemm(Op::N, Op::N, n, dh, n, scale, dp, n, k, 3 * d, T::zero(), &mut dqkv[s * 3 * d + h * dh..], 3 * d);
            gemm(Op::T, Op::N, n, dh, n, scale, dp, n, q, 3 * d, T::zero(), &mut dqkv[s * 3 * d + d + h * dh..], 3 * d);
            off += n * n;
        }
    }
    dqkv
}

fn rotate_qk<T: Scalar>(c: &Ctx<T>, qkv: &mut [T], transpose: bool) {
    let (d, dh) = (c.d, c.dh);
    for &(s, n) in &c.packed.segments {
        for p in 0..n {
            let row = &mut qkv[(s + p) * 3 * d..(s + p) * 3 * d + 2 * d];
            for head in row.chunks_exact_mut(dh) {
                if transpose {
                    c.rope.apply_transpose(head, p);
                } else {
                    c.rope.apply(head, p);
                }
            }
        }
    }
}

fn layer_forward<T: Scalar>(c: &Ctx<T>, l: &LayerWeights<T>, x: &mut [T]) -> LayerCache<T> {
    let n = c.packed.n_positions();
    let ln1 = layer_norm(x, c.d, &l.ln1_g, &l.ln1_b);
    let mut qkv = linear(&ln1.y, n, &l.w_qkv, None);
    rotate_qk(c, &mut qkv, false);
    let (ctx, probs) = attention_forward(c, &qkv);
    let attn_out = linear(&ctx, n, &l.w_o, None);
    for (a, b) in x.iter_mut().zip(&attn_out) {
        *a += *b;
    }
    let ln2 = layer_norm(x, c.d, &l.ln2_g, &l.ln2_b);
    let ff_pre = linear(&ln2.y, n, &l.w_ff1, Some(&l.b_ff1));
    let ff_act: Vec<T> = ff_pre.iter().map(|&v| gelu(v)).collect();
    let ff_out = linear(&ff_act, n, &l.w_ff2, Some(&l.b_ff2));
    for (a, b) in x.iter_mut().zip(&ff_out) {
        *a += *b;
    }
    LayerCache { ln1, qkv, probs, ctx, ln2, ff_pre, ff_act }
}

fn layer_backward<T: Scalar>(c: &Ctx<T>, l: &LayerWeights<T>, cache: &LayerCache<T>, g: &mut LayerWeights<T>, dx: &mut [T]) {
    let n = c.packed.n_positions();
    let mut dact = linear_backward(&cache.ff_act, dx, n, &l.w_ff2, &mut g.w_ff2, Some(&mut g.b_ff2));
    for (da, &pre) in dact.iter_mut().zip(&cache.ff_pre) {
        *da *= gelu_grad(pre);
    }
    let dln2 = linear_backward(&cache.ln2.y, &dact, n, &l.w_ff1, &mut g.w_ff1, Some(&mut g.b_ff1));
    layer_norm_backward(&dln2, &cache.ln2, c.d, &l.ln2_g, &mut g.ln2_g, &mut g.ln2_b, dx);

    let dctx = linear_backward(&cache.ctx, dx, n, &l.w_o, &mut g.w_o, None);
    let mut dqkv = attention_backward(c, &cache.qkv, &cache.probs, &dctx);
    rotate_qk(c, &mut dqkv, true);
    let dln1 = linear_backward(&cache.ln1.y, &dqkv, n, &l.w_qkv, &mut g.w_qkv, None);
    layer_norm_backward(&dln1, &cache.ln1, c.d, &l.ln1_g, &mut g.ln1_g, &mut g.ln1_b, dx);
}

fn context<'a, T: Scalar>(w: &ModelWeights<T>, packed: &'a Packed) -> Ctx<'a, T> {
    let cfg = &w.config;
    Ctx {
        packed,
        rope: Rope::new(cfg.head_dim(), packed.max_segment(), cfg.rope_base),
        causal: cfg.variant.is_causal(),
        d: cfg.d_model,
        n_heads: cfg.n_heads,
        dh: cfg.head_dim(),
    }
}

fn embed<T: Scalar>(w: &ModelWeights<T>, packed: &Packed) -> Vec<T> {
    let d = w.config.d_model;
    let mut x = vec![T::zero(); packed.n_positions() * d];
    for (i, &(s, n)) in packed.segments.iter().enumerate() {
        for p in s..s + n {
            let id = packed.ids[p] as usize;
            let out = &mut x[p * d..(p + 1) * d];
            out.copy_from_slice(&w.tok_emb.data[id * d..(id + 1) * d]);
            if let (Some(bin), Some(te)) = (packed.time_bins[i], &w.time_emb) {
                for (o, &e) in out.iter_mut().zip(&te.data[bin * d..(bin + 1) * d]) {
                    *o += e;
                }
            }
        }
    }
    x
}

fn forward_impl<T: Scalar>(w: &ModelWeights<T>, packed: Packed, keep: bool) -> (Hidden<T>, Option<BackboneCache<T>>) {
    let d = w.config.d_model;
    let mut x = embed(w, &packed);
    let mut caches = Vec::new();
    {
        let c = context(w, &packed);
        for l in &w.layers {
            let cache = layer_forward(&c, l, &mut x);
            if keep {
                caches.push(cache);
            }
        }
    }
    let lnf = layer_norm(&x, d, &w.lnf_g, &w.lnf_b);
    let hidden = Hidden { packed: packed.clone(), d_model: d, data: lnf.y.clone() };
    let cache = keep.then(|| BackboneCache { packed, layers: caches, lnf });
    (hidden, cache)
}

/// Hidden states for every valid position of `batch`.
///
/// `time` carries one noise level per row and is used only by models with a
/// time embedding.
pub fn backbone_forward<T: Scalar>(w: &ModelWeights<T>, batch: &PaddedBatch, time: Option<&[f64]>) -> Result<Hidden<T>> {
    let packed = pack(w, batch, time)?;
    Ok(forward_impl(w, packed, false).0)
}

/// Forward pass that also returns the activations needed for the backward pass.
pub fn backbone_forward_train<T: Scalar>(
    w: &ModelWeights<T>,
    batch: &PaddedBatch,
    time: Option<&[f64]>,
) -> Result<(Hidden<T>, BackboneCache<T>)> {
    let packed = pack(w, batch, time)?;
    let (h, c) = forward_impl(w, packed, true);
    Ok((h, c.expect("cache requested")))
}

/// Accumulates parameter gradients into `grads` given `dh`, the gradient of
/// the loss with respect to the hidden states (same layout as [`Hidden::data`]).
pub fn backbone_backward<T: Scalar>(w: &ModelWeights<T>, cache: &BackboneCache<T>, dh: &[T], grads: &mut ModelWeights<T>) {
    let d = w.config.d_model;
    let packed = &cache.packed;
    let mut dx = vec![T::zero(); dh.len()];
    layer_norm_backward(dh, &cache.lnf, d, &w.lnf_g, &mut grads.lnf_g, &mut grads.lnf_b, &mut dx);
    let c = context(w, packed);
    for ((l, lc), g) in w.layers.iter().zip(&cache.layers).zip(grads.layers.iter_mut()).rev() {
        layer_backward(&c, l, lc, g, &mut dx);
    }
    for (i, &(s, n)) in packed.segments.iter().enumerate() {
        for p in s..s + n {
            let id = packed.ids[p] as usize;
            let dxr = &dx[p * d..(p + 1) * d];
            for (g, &v) in grads.tok_emb.data[id * d..(id + 1) * d].iter_mut().zip(dxr) {
                *g += v;
            }
            if let (Some(bin), Some(te)) = (packed.time_bins[i], grads.time_emb.as_mut()) {
                for (g, &v) in te.data[bin * d..(bin + 1) * d].iter_mut().zip(dxr) {
                    *g += v;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Variant};
    use crate::seeding::rng_for;

    fn model(v: Variant) -> ModelWeights<f64> {
        ModelWeights::init(ModelConfig::tiny(v, 12), &mut rng_for(7, &[])).unwrap()
    }

    #[test]
    fn pad_tokens_do_not_leak() {
        let w = model(Variant::Ilm);
        let a = PaddedBatch::from_sequences(&[&[1, 2, 6, 7, 3], &[1, 2, 3]], &[1, 1], 8, 0).unwrap();
        let mut b = a.clone();
        for (id, m) in b.ids.iter_mut().zip(&b.mask) {
            if !m {
                *id = 9;
            }
        }
        let ha = backbone_forward(&w, &a, None).unwrap();
        let hb = backbone_forward(&w, &b, None).unwrap();
        assert_eq!(ha.data, hb.data);
        let single = backbone_forward(&w, &PaddedBatch::single(&[1, 2, 3], 1), None).unwrap();
        assert_eq!(single.row(0), ha.row(1));
    }

    #[test]
    fn overlong_rejected() {
        let w = model(Variant::Ilm);
        let long = vec![6u32; 65];
        assert!(backbone_forward(&w, &PaddedBatch::single(&long, 0), None).is_err());
    }

    #[test]
    fn causal_and_bidirectional() {
        let arm = model(Variant::Arm);
        let ilm = model(Variant::Ilm);
        let x = PaddedBatch::single(&[2, 6, 7, 8, 3], 0);
        let y = PaddedBatch::single(&[2, 6, 7, 9, 10], 0);
        let d = 32;
        let (ha, hb) = (backbone_forward(&arm, &x, None).unwrap(), backbone_forward(&arm, &y, None).unwrap());
        assert_eq!(ha.data[..3 * d], hb.data[..3 * d]);
        let (ha, hb) = (backbone_forward(&ilm, &x, None).unwrap(), backbone_forward(&ilm, &y, None).unwrap());
        assert_ne!(ha.data[..d], hb.data[..d]);
    }
}

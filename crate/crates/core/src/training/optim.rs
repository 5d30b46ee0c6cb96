use crate::model::ModelWeights;
use crate::scalar::Scalar;

/// AdamW with decoupled weight decay applied to matrices only.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub m: ModelWeights<T>,
    pub v: ModelWeights<T>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(params: &ModelWeights<T>, weight_decay: f64) -> Self {
        AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, m: params.zeros_like(), v: params.zeros_like() }
    }

    /// Applies update number `t` (1-based) with learning rate `lr`.
    pub fn step(&mut self, params: &mut ModelWeights<T>, grads: &ModelWeights<T>, lr: f64, t: u64) {
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powf(t as f64);
        let c2 = 1.0 - b2.powf(t as f64);
        let (wd, eps) = (self.weight_decay, self.eps);
        let tensors = params.named_mut().into_iter().zip(grads.named()).zip(self.m.named_mut()).zip(self.v.named_mut());
        for ((((_, p), (_, g)), (_, m)), (_, v)) in tensors {
            let decay = if p.shape.len() == 2 { wd } else { 0.0 };
            for j in 0..p.data.len() {
                let gj = g.data[j].f64();
                let mj = b1 * m.data[j].f64() + (1.0 - b1) * gj;
                let vj = b2 * v.data[j].f64() + (1.0 - b2) * gj * gj;
                m.data[j] = T::of(mj);
                v.data[j] = T::of(vj);
                let x = p.data[j].f64();
                let upd = (mj / c1) / ((vj / c2).sqrt() + eps) + decay * x;
                p.data[j] = T::of(x - lr * upd);
            }
        }
    }
}

/// Global L2 norm of all gradients.
pub fn grad_norm<T: Scalar>(grads: &ModelWeights<T>) -> f64 {
    let mut s = 0.0;
    grads.visit(|_, g| s += g.sum_sq());
    s.sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut ModelWeights<T>, max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm > max_norm && norm.is_finite() {
        let scale = T::of(max_norm / norm);
        grads.visit_mut(|_, g| g.data.iter_mut().for_each(|x| *x *= scale));
    }
    norm
}

use crate::scalar::Scalar;

/// Rotary position tables. Pair `(i, i + dh/2)` at position `p` is rotated by
/// `p * base^(-2i/dh)`.
#[derive(Clone, Debug)]
pub struct Rope<T> {
    half: usize,
    cos: Vec<T>,
    sin: Vec<T>,
}

impl<T: Scalar> Rope<T> {
    pub fn new(head_dim: usize, max_len: usize, base: f64) -> Self {
        let half = head_dim / 2;
        let mut cos = Vec::with_capacity(max_len * half);
        let mut sin = Vec::with_capacity(max_len * half);
        for p in 0..max_len {
            for i in 0..half {
                let theta = base.powf(-2.0 * i as f64 / head_dim as f64);
                let a = p as f64 * theta;
                cos.push(T::of(a.cos()));
                sin.push(T::of(a.sin()));
            }
        }
        Rope { half, cos, sin }
    }

    pub fn max_len(&self) -> usize {
        if self.half == 0 {
            0
        } else {
            self.cos.len() / self.half
        }
    }

    /// Rotates one head vector in place.
    #[inline]
    pub fn apply(&self, x: &mut [T], pos: usize) {
        let h = self.half;
        let (c, s) = (&self.cos[pos * h..(pos + 1) * h], &self.sin[pos * h..(pos + 1) * h]);
        let (a, b) = x.split_at_mut(h);
        for i in 0..h {
            let (x1, x2) = (a[i], b[i]);
            a[i] = x1 * c[i] - x2 * s[i];
            b[i] = x1 * s[i] + x2 * c[i];
        }
    }

    /// Applies the transpose (inverse) rotation; this is the backward pass.
    #[inline]
    pub fn apply_transpose(&self, x: &mut [T], pos: usize) {
        let h = self.half;
        let (c, s) = (&self.cos[pos * h..(pos + 1) * h], &self.sin[pos * h..(pos + 1) * h]);
        let (a, b) = x.split_at_mut(h);
        for i in 0..h {
            let (x1, x2) = (a[i], b[i]);
            a[i] = x1 * c[i] + x2 * s[i];
            b[i] = -x1 * s[i] + x2 * c[i];
        }
    }
}

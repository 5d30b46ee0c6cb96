//! Dense row-major tensors and the matrix kernels the model is built from.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); n] }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("std is finite and non-negative");
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::of(normal.sample(rng))).collect();
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn zeros_like(&self) -> Self {
        Tensor::zeros(&self.shape)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|x| *x = T::zero());
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|x| U::of(x.f64())).collect() }
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|x| x.f64() * x.f64()).sum()
    }
}

/// Whether a gemm operand is read as stored or transposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    N,
    T,
}

/// Row-major `C (m x n) <- alpha * op(A) op(B) + beta * C`.
///
/// `lda`, `ldb` and `ldc` are the row strides of the matrices *as stored*, so
/// `A` is stored `m x k` for [`Op::N`] and `k x m` for [`Op::T`].
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    op_a: Op,
    op_b: Op,
    m: usize,
    n: usize,
    k: usize,
    alpha: T,
    a: &[T],
    lda: usize,
    b: &[T],
    ldb: usize,
    beta: T,
    c: &mut [T],
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match op_a {
        Op::N => (lda, 1),
        Op::T => (1, lda),
    };
    let (rsb, csb) = match op_b {
        Op::N => (ldb, 1),
        Op::T => (1, ldb),
    };
    if k > 0 {
        assert!((m - 1) * rsa + (k - 1) * csa < a.len(), "gemm: A out of bounds");
        assert!((k - 1) * rsb + (n - 1) * csb < b.len(), "gemm: B out of bounds");
    }
    assert!((m - 1) * ldc + n - 1 < c.len(), "gemm: C out of bounds");
    // SAFETY: extents checked above; `c` is a unique borrow so it cannot alias.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

/// `y = x W + b` for `x: rows x d_in`, `W: d_in x d_out`.
pub fn linear<T: Scalar>(x: &[T], rows: usize, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Vec<T> {
    let (d_in, d_out) = (w.shape[0], w.shape[1]);
    let mut y = vec![T::zero(); rows * d_out];
    if let Some(b) = b {
        for row in y.chunks_exact_mut(d_out) {
            row.copy_from_slice(&b.data);
        }
    }
    let beta = if b.is_some() { T::one() } else { T::zero() };
    gemm(Op::N, Op::N, rows, d_out, d_in, T::one(), x, d_in, &w.data, d_out, beta, &mut y, d_out);
    y
}

/// Backward of [`linear`]: accumulates `dW`, `db` and returns `dx`.
pub fn linear_backward<T: Scalar>(
    x: &[T],
    dy: &[T],
    rows: usize,
    w: &Tensor<T>,
    dw: &mut Tensor<T>,
    db: Option<&mut Tensor<T>>,
) -> Vec<T> {
    let (d_in, d_out) = (w.shape[0], w.shape[1]);
    gemm(Op::T, Op::N, d_in, d_out, rows, T::one(), x, d_in, dy, d_out, T::one(), &mut dw.data, d_out);
    if let Some(db) = db {
        for row in dy.chunks_exact(d_out) {
            for (g, &d) in db.data.iter_mut().zip(row) {
                *g += d;
            }
        }
    }
    let mut dx = vec![T::zero(); rows * d_in];
    gemm(Op::N, Op::T, rows, d_in, d_out, T::one(), dy, d_out, &w.data, d_out, T::zero(), &mut dx, d_in);
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

/// tanh-approximated GELU.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let k = T::of(0.044715);
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let k = T::of(0.044715);
    let half = T::of(0.5);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * k * x * x)
}

/// In-place numerically stable softmax of one row; returns log-sum-exp.
pub fn softmax_in_place<T: Scalar>(row: &mut [T]) -> T {
    let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    if max == T::neg_infinity() {
        row.iter_mut().for_each(|x| *x = T::zero());
        return max;
    }
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
    max + sum.ln()
}

/// Log-sum-exp of a slice computed in `f64` with max subtraction.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

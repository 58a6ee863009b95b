//! Dense building blocks: matrix products, two-layer perceptrons with GELU,
//! and layer normalization, each with a hand-written backward pass.
//!
//! All matrices are row-major and contiguous.

use std::fmt::Debug;

use num_traits::{Float, NumAssign};

pub trait Scalar: Float + NumAssign + Default + Debug + Send + Sync + 'static {
    /// `c = beta * c + op(a) * op(b)` where `op(a)` is `m x k` and `op(b)` is `k x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        beta: Self,
        c: &mut [Self],
    );

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                trans_a: bool,
                b: &[Self],
                trans_b: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
                let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
                // SAFETY: the asserts above bound every index the kernel touches.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }

            #[inline]
            fn from_f64(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t)
        + half * x * (T::one() - t * t) * c * (T::one() + T::from_f64(3.0) * a * x * x)
}

/// Offsets of a two-layer perceptron `d_in -> d_hid -> d_out` inside the flat
/// parameter vector. Weights are stored `in x out`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub d_in: usize,
    pub d_hid: usize,
    pub d_out: usize,
}

impl MlpSpec {
    pub fn w1<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.w1..self.w1 + self.d_in * self.d_hid]
    }
    pub fn b1<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.b1..self.b1 + self.d_hid]
    }
    pub fn w2<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.w2..self.w2 + self.d_hid * self.d_out]
    }
    pub fn b2<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.b2..self.b2 + self.d_out]
    }
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct MlpCache<T> {
    pub rows: usize,
    pub pre: Vec<T>,
    pub act: Vec<T>,
}

pub fn add_bias<T: Scalar>(out: &mut [T], bias: &[T]) {
    for row in out.chunks_exact_mut(bias.len()) {
        for (o, &b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

pub fn col_sum_into<T: Scalar>(acc: &mut [T], m: &[T]) {
    for row in m.chunks_exact(acc.len()) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
}

/// Second half of an MLP, given the hidden pre-activation.
pub fn mlp_finish<T: Scalar>(spec: &MlpSpec, p: &[T], pre: Vec<T>, rows: usize) -> (Vec<T>, MlpCache<T>) {
    let act: Vec<T> = pre.iter().map(|&x| gelu(x)).collect();
    let mut out = vec![T::zero(); rows * spec.d_out];
    T::gemm(rows, spec.d_hid, spec.d_out, &act, false, spec.w2(p), false, T::zero(), &mut out);
    add_bias(&mut out, spec.b2(p));
    (out, MlpCache { rows, pre, act })
}

pub fn mlp_forward<T: Scalar>(spec: &MlpSpec, p: &[T], x: &[T], rows: usize) -> (Vec<T>, MlpCache<T>) {
    debug_assert_eq!(x.len(), rows * spec.d_in);
    let mut pre = vec![T::zero(); rows * spec.d_hid];
    T::gemm(rows, spec.d_in, spec.d_hid, x, false, spec.w1(p), false, T::zero(), &mut pre);
    add_bias(&mut pre, spec.b1(p));
    mlp_finish(spec, p, pre, rows)
}

/// Backward through the output layer and the nonlinearity. Returns the
/// gradient with respect to the hidden pre-activation.
pub fn mlp_back_to_pre<T: Scalar>(
    spec: &MlpSpec,
    p: &[T],
    grad: &mut [T],
    cache: &MlpCache<T>,
    dout: &[T],
) -> Vec<T> {
    let rows = cache.rows;
    T::gemm(
        spec.d_hid,
        rows,
        spec.d_out,
        &cache.act,
        true,
        dout,
        false,
        T::one(),
        &mut grad[spec.w2..spec.w2 + spec.d_hid * spec.d_out],
    );
    col_sum_into(&mut grad[spec.b2..spec.b2 + spec.d_out], dout);
    let mut dpre = vec![T::zero(); rows * spec.d_hid];
    T::gemm(rows, spec.d_out, spec.d_hid, dout, false, spec.w2(p), true, T::zero(), &mut dpre);
    for (d, &x) in dpre.iter_mut().zip(&cache.pre) {
        *d *= gelu_grad(x);
    }
    col_sum_into(&mut grad[spec.b1..spec.b1 + spec.d_hid], &dpre);
    dpre
}

/// Full MLP backward for an input `x`. Returns `d x`.
pub fn mlp_backward<T: Scalar>(
    spec: &MlpSpec,
    p: &[T],
    grad: &mut [T],
    cache: &MlpCache<T>,
    x: &[T],
    dout: &[T],
) -> Vec<T> {
    let rows = cache.rows;
    let dpre = mlp_back_to_pre(spec, p, grad, cache, dout);
    T::gemm(
        spec.d_in,
        rows,
        spec.d_hid,
        x,
        true,
        &dpre,
        false,
        T::one(),
        &mut grad[spec.w1..spec.w1 + spec.d_in * spec.d_hid],
    );
    let mut dx = vec![T::zero(); rows * spec.d_in];
    T::gemm(rows, spec.d_hid, spec.d_in, &dpre, false, spec.w1(p), true, T::zero(), &mut dx);
    dx
}

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, Default)]
pub struct LayerNormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Per-row normalization with learned gain and bias.
pub fn layer_norm<T: Scalar>(x: &[T], gain: &[T], bias: &[T]) -> (Vec<T>, LayerNormCache<T>) {
    let h = gain.len();
    let rows = x.len() / h;
    let hf = T::from_f64(h as f64);
    let eps = T::from_f64(LN_EPS);
    let mut out = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); rows];
    for r in 0..rows {
        let row = &x[r * h..(r + 1) * h];
        let mean = row.iter().fold(T::zero(), |a, &v| a + v) / hf;
        let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / hf;
        let is = T::one() / (var + eps).sqrt();
        inv_std[r] = is;
        for c in 0..h {
            let xh = (row[c] - mean) * is;
            xhat[r * h + c] = xh;
            out[r * h + c] = gain[c] * xh + bias[c];
        }
    }
    (out, LayerNormCache { xhat, inv_std })
}

/// Returns `d x`; accumulates gain and bias gradients.
pub fn layer_norm_backward<T: Scalar>(
    cache: &LayerNormCache<T>,
    gain: &[T],
    dgain: &mut [T],
    dbias: &mut [T],
    dout: &[T],
) -> Vec<T> {
    let h = gain.len();
    let rows = dout.len() / h;
    let hf = T::from_f64(h as f64);
    let mut dx = vec![T::zero(); dout.len()];
    let mut dxhat = vec![T::zero(); h];
    for r in 0..rows {
        let xh = &cache.xhat[r * h..(r + 1) * h];
        let dy = &dout[r * h..(r + 1) * h];
        let mut mean_d = T::zero();
        let mut mean_dx = T::zero();
        for c in 0..h {
            dgain[c] += dy[c] * xh[c];
            dbias[c] += dy[c];
            dxhat[c] = dy[c] * gain[c];
            mean_d += dxhat[c];
            mean_dx += dxhat[c] * xh[c];
        }
        mean_d /= hf;
        mean_dx /= hf;
        let is = cache.inv_std[r];
        for c in 0..h {
            dx[r * h + c] = is * (dxhat[c] - mean_d - xh[c] * mean_dx);
        }
    }
    dx
}

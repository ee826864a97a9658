//! Row-major dense kernels with hand-written backward passes.
//!
//! Every buffer is a flat slice; an `n x k` matrix stores row `i` at
//! `[i * k .. (i + 1) * k]`. Backward functions accumulate parameter
//! gradients into a gradient buffer laid out like the parameters.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of the kernel (`f32` for training, `f64` for
/// gradient verification).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + Default
    + Debug
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
pub fn c<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("representable constant")
}

/// `out (n x m) += a (n x k) * b (k x m)`.
pub fn matmul_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], n: usize, k: usize, m: usize) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    debug_assert_eq!(out.len(), n * m);
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for (p, &x) in a[i * k..(i + 1) * k].iter().enumerate() {
            if x == T::zero() {
                continue;
            }
            for (o, &w) in row.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *o += x * w;
            }
        }
    }
}

/// `out (k x m) += a^T b` with `a: n x k`, `b: n x m`.
pub fn matmul_at_b_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], n: usize, k: usize, m: usize) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), n * m);
    debug_assert_eq!(out.len(), k * m);
    for i in 0..n {
        let brow = &b[i * m..(i + 1) * m];
        for (p, &x) in a[i * k..(i + 1) * k].iter().enumerate() {
            if x == T::zero() {
                continue;
            }
            for (o, &y) in out[p * m..(p + 1) * m].iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
}

/// `out (n x m) += a b^T` with `a: n x k`, `b: m x k`.
pub fn matmul_a_bt_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], n: usize, k: usize, m: usize) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), m * k);
    debug_assert_eq!(out.len(), n * m);
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..m {
            out[i * m + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

pub fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Offsets of a dense layer `y = x W + b` inside the parameter buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
    pub inp: usize,
    pub out: usize,
}

impl Linear {
    pub fn weight<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.w..self.w + self.inp * self.out]
    }

    pub fn bias<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.b..self.b + self.out]
    }

    pub fn forward<T: Scalar>(&self, p: &[T], x: &[T], n: usize) -> Vec<T> {
        let mut y = Vec::with_capacity(n * self.out);
        for _ in 0..n {
            y.extend_from_slice(self.bias(p));
        }
        matmul_acc(x, self.weight(p), &mut y, n, self.inp, self.out);
        y
    }

    /// Accumulates `dW`, `db` into `g` and returns `dx`.
    pub fn backward<T: Scalar>(&self, p: &[T], g: &mut [T], x: &[T], dy: &[T], n: usize) -> Vec<T> {
        matmul_at_b_acc(x, dy, &mut g[self.w..self.w + self.inp * self.out], n, self.inp, self.out);
        let gb = &mut g[self.b..self.b + self.out];
        for row in dy.chunks_exact(self.out) {
            add_into(gb, row);
        }
        let mut dx = vec![T::zero(); n * self.inp];
        matmul_a_bt_acc(dy, self.weight(p), &mut dx, n, self.out, self.inp);
        dx
    }
}

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Norm {
    pub g: usize,
    pub b: usize,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct NormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl Norm {
    pub fn forward<T: Scalar>(&self, p: &[T], x: &[T]) -> (Vec<T>, NormCache<T>) {
        let d = self.dim;
        let n = x.len() / d;
        let (gain, bias) = (&p[self.g..self.g + d], &p[self.b..self.b + d]);
        let mut y = vec![T::zero(); x.len()];
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv_std = Vec::with_capacity(n);
        let dn = c::<T>(d as f64);
        for i in 0..n {
            let row = &x[i * d..(i + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let inv = T::one() / (var + c(LN_EPS)).sqrt();
            inv_std.push(inv);
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[i * d + j] = h;
                y[i * d + j] = h * gain[j] + bias[j];
            }
        }
        (y, NormCache { xhat, inv_std })
    }

    pub fn backward<T: Scalar>(&self, p: &[T], g: &mut [T], cache: &NormCache<T>, dy: &[T]) -> Vec<T> {
        let d = self.dim;
        let gain = &p[self.g..self.g + d];
        let dn = c::<T>(d as f64);
        let mut dx = vec![T::zero(); dy.len()];
        let mut dxhat = vec![T::zero(); d];
        for (i, &inv) in cache.inv_std.iter().enumerate() {
            let xh = &cache.xhat[i * d..(i + 1) * d];
            let dyr = &dy[i * d..(i + 1) * d];
            for j in 0..d {
                g[self.g + j] += dyr[j] * xh[j];
                g[self.b + j] += dyr[j];
                dxhat[j] = dyr[j] * gain[j];
            }
            let s1: T = dxhat.iter().copied().sum();
            let s2: T = dxhat.iter().zip(xh).map(|(&a, &b)| a * b).sum();
            for j in 0..d {
                dx[i * d + j] = inv / dn * (dn * dxhat[j] - s1 - xh[j] * s2);
            }
        }
        dx
    }
}

/// In-place numerically stable log-softmax of one row.
pub fn log_softmax_row<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
    for v in row.iter_mut() {
        *v = *v - lse;
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

pub fn gelu<T: Scalar>(x: T) -> T {
    let inner = c::<T>(GELU_K) * (x + c::<T>(GELU_C) * x * x * x);
    c::<T>(0.5) * x * (T::one() + inner.tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let k = c::<T>(GELU_K);
    let cc = c::<T>(GELU_C);
    let t = (k * (x + cc * x * x * x)).tanh();
    let half = c::<T>(0.5);
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + c::<T>(3.0) * cc * x * x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

#[derive(Debug, Clone)]
pub struct FfnCache<T> {
    x: Vec<T>,
    pre: Vec<T>,
    act: Vec<T>,
}

impl FeedForward {
    pub fn forward<T: Scalar>(&self, p: &[T], x: &[T]) -> (Vec<T>, FfnCache<T>) {
        let n = x.len() / self.up.inp;
        let pre = self.up.forward(p, x, n);
        let act: Vec<T> = pre.iter().map(|&v| gelu(v)).collect();
        let y = self.down.forward(p, &act, n);
        (
            y,
            FfnCache {
                x: x.to_vec(),
                pre,
                act,
            },
        )
    }

    pub fn backward<T: Scalar>(&self, p: &[T], g: &mut [T], cache: &FfnCache<T>, dy: &[T]) -> Vec<T> {
        let n = cache.x.len() / self.up.inp;
        let mut dact = self.down.backward(p, g, &cache.act, dy, n);
        for (d, &z) in dact.iter_mut().zip(&cache.pre) {
            *d *= gelu_grad(z);
        }
        self.up.backward(p, g, &cache.x, &dact, n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

#[derive(Debug, Clone)]
pub struct AttnCache<T> {
    xq: Vec<T>,
    xkv: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// `heads x n x m` attention weights
    probs: Vec<T>,
    ctx: Vec<T>,
    causal: bool,
}

impl Attention {
    fn dim(&self) -> usize {
        self.q.out
    }

    /// Multi-head attention of queries `xq` (n rows) over `xkv` (m rows).
    /// With `causal`, query `i` sees keys `0..=i` only.
    pub fn forward<T: Scalar>(&self, p: &[T], xq: &[T], xkv: &[T], causal: bool) -> (Vec<T>, AttnCache<T>) {
        let d = self.dim();
        let (n, m) = (xq.len() / d, xkv.len() / d);
        let q = self.q.forward(p, xq, n);
        let k = self.k.forward(p, xkv, m);
        let v = self.v.forward(p, xkv, m);
        let dh = d / self.heads;
        let scale = T::one() / c::<T>(dh as f64).sqrt();
        let mut probs = vec![T::zero(); self.heads * n * m];
        let mut ctx = vec![T::zero(); n * d];
        for h in 0..self.heads {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..n {
                let visible = if causal { (i + 1).min(m) } else { m };
                let row = &mut probs[(h * n + i) * m..(h * n + i) * m + visible];
                let qi = &q[i * d + cols.start..i * d + cols.end];
                for (j, s) in row.iter_mut().enumerate() {
                    *s = dot(qi, &k[j * d + cols.start..j * d + cols.end]) * scale;
                }
                softmax_in_place(row);
                let out = &mut ctx[i * d + cols.start..i * d + cols.end];
                for (j, &pj) in row.iter().enumerate() {
                    for (o, &vv) in out.iter_mut().zip(&v[j * d + cols.start..j * d + cols.end]) {
                        *o += pj * vv;
                    }
                }
            }
        }
        let y = self.o.forward(p, &ctx, n);
        let cache = AttnCache {
            xq: xq.to_vec(),
            xkv: xkv.to_vec(),
            q,
            k,
            v,
            probs,
            ctx,
            causal,
        };
        (y, cache)
    }

    /// Returns `(dxq, dxkv)`.
    pub fn backward<T: Scalar>(
        &self,
        p: &[T],
        g: &mut [T],
        cache: &AttnCache<T>,
        dy: &[T],
    ) -> (Vec<T>, Vec<T>) {
        let d = self.dim();
        let (n, m) = (cache.xq.len() / d, cache.xkv.len() / d);
        let dh = d / self.heads;
        let scale = T::one() / c::<T>(dh as f64).sqrt();
        let dctx = self.o.backward(p, g, &cache.ctx, dy, n);
        let mut dq = vec![T::zero(); n * d];
        let mut dk = vec![T::zero(); m * d];
        let mut dv = vec![T::zero(); m * d];
        let mut dp = vec![T::zero(); m];
        for h in 0..self.heads {
            let (c0, c1) = (h * dh, (h + 1) * dh);
            for i in 0..n {
                let visible = if cache.causal { (i + 1).min(m) } else { m };
                let pr = &cache.probs[(h * n + i) * m..(h * n + i) * m + visible];
                let dci = &dctx[i * d + c0..i * d + c1];
                for j in 0..visible {
                    dp[j] = dot(dci, &cache.v[j * d + c0..j * d + c1]);
                    for (o, &x) in dv[j * d + c0..j * d + c1].iter_mut().zip(dci) {
                        *o += pr[j] * x;
                    }
                }
                let inner: T = (0..visible).map(|j| dp[j] * pr[j]).sum();
                for j in 0..visible {
                    let ds = pr[j] * (dp[j] - inner) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    for t in c0..c1 {
                        dq[i * d + t] += ds * cache.k[j * d + t];
                        dk[j * d + t] += ds * cache.q[i * d + t];
                    }
                }
            }
        }
        let dxq = self.q.backward(p, g, &cache.xq, &dq, n);
        let mut dxkv = self.k.backward(p, g, &cache.xkv, &dk, m);
        add_into(&mut dxkv, &self.v.backward(p, g, &cache.xkv, &dv, m));
        (dxq, dxkv)
    }
}

pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let a: Vec<f64> = (0..6).map(f64::from).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| f64::from(v) * 0.5).collect(); // 3x4
        let mut ab = vec![0.0; 8];
        matmul_acc(&a, &b, &mut ab, 2, 3, 4);
        assert_eq!(ab[0], 0.0 * 0.0 + 1.0 * 2.0 + 2.0 * 4.0);
        // a b = (b^T a^T)^T, check via the transposed kernels
        let mut bt = vec![0.0; 12];
        for i in 0..3 {
            for j in 0..4 {
                bt[j * 3 + i] = b[i * 4 + j];
            }
        }
        let mut ab2 = vec![0.0; 8];
        matmul_a_bt_acc(&a, &bt, &mut ab2, 2, 3, 4);
        assert_eq!(ab, ab2);
        let mut at = vec![0.0; 6];
        for i in 0..2 {
            for j in 0..3 {
                at[j * 2 + i] = a[i * 3 + j];
            }
        }
        let mut ab3 = vec![0.0; 8];
        matmul_at_b_acc(&at, &b, &mut ab3, 3, 2, 4);
        assert_eq!(ab, ab3);
    }

    #[test]
    fn gelu_derivative_matches_difference_quotient() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "{x}");
        }
    }

    #[test]
    fn log_softmax_normalizes() {
        let mut row = vec![1.0f64, 2.0, -4.0, 1000.0];
        log_softmax_row(&mut row);
        let total: f64 = row.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

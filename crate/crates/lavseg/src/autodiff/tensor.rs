//! Dense NCHW tensors generic over the arithmetic scalar.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Arithmetic scalar: `f32` in production, `f64` for gradient checks.
pub trait Scalar:
    Copy
    + Send
    + Sync
    + Debug
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn is_finite(self) -> bool;
    fn maximum(self, other: Self) -> Self;

    /// `C = alpha * A@B + beta * C` over row-major buffers with explicit
    /// strides, dims `m×k` times `k×n`. Backed by a blocked kernel with a
    /// deterministic accumulation order.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    const ZERO: f32 = 0.0;
    const ONE: f32 = 1.0;

    fn from_f64(v: f64) -> f32 {
        v as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }

    fn exp(self) -> f32 {
        f32::exp(self)
    }

    fn sqrt(self) -> f32 {
        f32::sqrt(self)
    }

    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }

    fn maximum(self, other: f32) -> f32 {
        f32::max(self, other)
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: &[f32],
        rsa: isize,
        csa: isize,
        b: &[f32],
        rsb: isize,
        csb: isize,
        beta: f32,
        c: &mut [f32],
        rsc: isize,
        csc: isize,
    ) {
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            );
        }
    }
}

impl Scalar for f64 {
    const ZERO: f64 = 0.0;
    const ONE: f64 = 1.0;

    fn from_f64(v: f64) -> f64 {
        v
    }

    fn to_f64(self) -> f64 {
        self
    }

    fn exp(self) -> f64 {
        f64::exp(self)
    }

    fn sqrt(self) -> f64 {
        f64::sqrt(self)
    }

    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }

    fn maximum(self, other: f64) -> f64 {
        f64::max(self, other)
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: &[f64],
        rsa: isize,
        csa: isize,
        b: &[f64],
        rsb: isize,
        csb: isize,
        beta: f64,
        c: &mut [f64],
        rsc: isize,
        csc: isize,
    ) {
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            );
        }
    }
}

/// Dense `N×C×H×W` tensor, row-major and channel-planar.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Tensor<S> {
        Tensor {
            n,
            c,
            h,
            w,
            data: vec![S::ZERO; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<S>) -> Tensor<S> {
        assert_eq!(data.len(), n * c * h * w, "tensor data length mismatch");
        Tensor { n, c, h, w, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn same_shape(&self, other: &Tensor<S>) -> bool {
        self.shape() == other.shape()
    }

    /// One `H×W` plane.
    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[S] {
        let hw = self.h * self.w;
        let off = (n * self.c + c) * hw;
        &self.data[off..off + hw]
    }

    #[inline]
    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [S] {
        let hw = self.h * self.w;
        let off = (n * self.c + c) * hw;
        &mut self.data[off..off + hw]
    }

    /// All planes of one batch item (`C×H×W`).
    #[inline]
    pub fn item(&self, n: usize) -> &[S] {
        let stride = self.c * self.h * self.w;
        &self.data[n * stride..(n + 1) * stride]
    }

    #[inline]
    pub fn item_mut(&mut self, n: usize) -> &mut [S] {
        let stride = self.c * self.h * self.w;
        &mut self.data[n * stride..(n + 1) * stride]
    }

    pub fn fill(&mut self, v: S) {
        self.data.fill(v);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise cast to another scalar type (through f64).
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|v| T::from_f64(v.to_f64())).collect(),
        }
    }
}

/// A trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
    /// True for convolution weights (subject to L2 decay), false for biases.
    pub decay_eligible: bool,
}

impl<S: Scalar> Parameter<S> {
    pub fn new(name: impl Into<String>, value: Tensor<S>, decay_eligible: bool) -> Parameter<S> {
        let grad = Tensor::zeros(value.n, value.c, value.h, value.w);
        Parameter {
            name: name.into(),
            value,
            grad,
            decay_eligible,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(S::ZERO);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_small_case() {
        // [1 2; 3 4] @ [5 6; 7 8] = [19 22; 43 50]
        let a = [1.0f32, 2.0, 3.0, 4.0];
        let b = [5.0f32, 6.0, 7.0, 8.0];
        let mut c = [0.0f32; 4];
        f32::gemm(2, 2, 2, 1.0, &a, 2, 1, &b, 2, 1, 0.0, &mut c, 2, 1);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn gemm_transposed_view() {
        // A (2x3) times B^T where B is stored 2x3 row-major: strides swap.
        let a = [1.0f64, 0.0, 2.0, 0.0, 1.0, -1.0];
        let b = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut c = [0.0f64; 4];
        // C (2x2) = A (2x3) @ B^T (3x2): B^T strides rsb=1, csb=3.
        f64::gemm(2, 3, 2, 1.0, &a, 3, 1, &b, 1, 3, 0.0, &mut c, 2, 1);
        // Row 0: [1,0,2]·[1,2,3]=7, [1,0,2]·[4,5,6]=16
        // Row 1: [0,1,-1]·[1,2,3]=-1, [0,1,-1]·[4,5,6]=-1
        assert_eq!(c, [7.0, 16.0, -1.0, -1.0]);
    }

    #[test]
    fn plane_access() {
        let mut t: Tensor<f32> = Tensor::zeros(2, 3, 4, 5);
        t.plane_mut(1, 2)[7] = 9.0;
        assert_eq!(t.plane(1, 2)[7], 9.0);
        assert_eq!(t.data[(1 * 3 + 2) * 20 + 7], 9.0);
    }

    #[test]
    fn cast_roundtrip() {
        let t: Tensor<f32> = Tensor::from_vec(1, 1, 1, 3, vec![0.5, -1.25, 3.0]);
        let d: Tensor<f64> = t.cast();
        let back: Tensor<f32> = d.cast();
        assert_eq!(t.data, back.data);
    }
}

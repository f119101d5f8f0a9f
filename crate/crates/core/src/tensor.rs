//! Dense row-major tensors and the scalar trait shared by the f32 training
//! path and the f64 verification path.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Floating point element type. Implemented for `f32` and `f64`.
pub trait Scalar:
    Copy
    + Clone
    + Debug
    + Display
    + Default
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn max(self, other: Self) -> Self;
    fn min(self, other: Self) -> Self;
    fn is_finite(self) -> bool;

    /// `c = alpha * a * b + beta * c` with arbitrary (row, column) strides.
    ///
    /// # Safety
    /// Strides and dimensions must describe memory inside the given slices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;

            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline]
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            #[inline]
            fn max(self, other: Self) -> Self {
                <$t>::max(self, other)
            }
            #[inline]
            fn min(self, other: Self) -> Self {
                <$t>::min(self, other)
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }

            unsafe fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: *const Self,
                rsa: isize,
                csa: isize,
                b: *const Self,
                rsb: isize,
                csb: isize,
                beta: Self,
                c: *mut Self,
                rsc: isize,
                csc: isize,
            ) {
                $gemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Row-major dense tensor. Image tensors use the `[N, C, H, W]` layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match {} elements",
            data.len()
        );
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::ZERO)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::ONE)
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self::new(shape, vec![v; shape.iter().product()])
    }

    pub fn scalar(v: T) -> Self {
        Self::new(&[1], vec![v])
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Self {
        Self::new(shape, data.iter().map(|&v| T::from_f64(v)).collect())
    }

    /// Standard normal entries scaled by `std`.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::from_f64(z * std)
            })
            .collect();
        Self::new(shape, data)
    }

    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64(rng.random_range(lo..hi)))
            .collect();
        Self::new(shape, data)
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Shape as `[N, C, H, W]`; panics if the tensor is not 4-D.
    pub fn dims4(&self) -> [usize; 4] {
        assert_eq!(self.shape.len(), 4, "expected a 4-D tensor, got {:?}", self.shape);
        [self.shape[0], self.shape[1], self.shape[2], self.shape[3]]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape.to_vec();
        self
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_f64(self.data.len() as f64)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::ZERO, |m, &v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }

    /// Copies channels `start..start+len` of a 4-D tensor.
    pub fn narrow_channels(&self, start: usize, len: usize) -> Self {
        let [n, c, h, w] = self.dims4();
        assert!(start + len <= c);
        let plane = h * w;
        let mut out = Vec::with_capacity(n * len * plane);
        for b in 0..n {
            let base = (b * c + start) * plane;
            out.extend_from_slice(&self.data[base..base + len * plane]);
        }
        Self::new(&[n, len, h, w], out)
    }

    /// Concatenates 4-D tensors along the channel axis.
    pub fn cat_channels(parts: &[&Self]) -> Self {
        assert!(!parts.is_empty());
        let [n, _, h, w] = parts[0].dims4();
        let plane = h * w;
        let total: usize = parts.iter().map(|p| p.dims4()[1]).sum();
        let mut out = Vec::with_capacity(n * total * plane);
        for b in 0..n {
            for p in parts {
                let [pn, pc, ph, pw] = p.dims4();
                assert_eq!((pn, ph, pw), (n, h, w), "cat_channels shape mismatch");
                out.extend_from_slice(&p.data[b * pc * plane..(b + 1) * pc * plane]);
            }
        }
        Self::new(&[n, total, h, w], out)
    }

    /// Selects batch element `i`, keeping a leading unit batch axis.
    pub fn batch_item(&self, i: usize) -> Self {
        let [n, c, h, w] = self.dims4();
        assert!(i < n);
        let sz = c * h * w;
        Self::new(&[1, c, h, w], self.data[i * sz..(i + 1) * sz].to_vec())
    }

    /// Stacks `[1, C, H, W]` tensors into `[N, C, H, W]`.
    pub fn stack_batch(items: &[Self]) -> Self {
        assert!(!items.is_empty());
        let [_, c, h, w] = items[0].dims4();
        let mut data = Vec::with_capacity(items.len() * c * h * w);
        for it in items {
            let [n1, c1, h1, w1] = it.dims4();
            assert_eq!((n1, c1, h1, w1), (1, c, h, w), "stack_batch shape mismatch");
            data.extend_from_slice(&it.data);
        }
        Self::new(&[items.len(), c, h, w], data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_cat_and_narrow_are_inverse() {
        let a = Tensor::<f64>::from_f64(&[2, 1, 1, 2], &[1., 2., 3., 4.]);
        let b = Tensor::<f64>::from_f64(&[2, 2, 1, 2], &[5., 6., 7., 8., 9., 10., 11., 12.]);
        let c = Tensor::cat_channels(&[&a, &b]);
        assert_eq!(c.shape(), &[2, 3, 1, 2]);
        assert_eq!(c.data(), &[1., 2., 5., 6., 7., 8., 3., 4., 9., 10., 11., 12.]);
        assert_eq!(c.narrow_channels(0, 1), a);
        assert_eq!(c.narrow_channels(1, 2), b);
    }

    #[test]
    fn gemm_dispatch() {
        let a = [1.0f32, 2.0, 3.0, 4.0];
        let b = [5.0f32, 6.0, 7.0, 8.0];
        let mut c = [0.0f32; 4];
        unsafe {
            f32::gemm(2, 2, 2, 1.0, a.as_ptr(), 2, 1, b.as_ptr(), 2, 1, 0.0, c.as_mut_ptr(), 2, 1);
        }
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
    }
}

//! Floating-point abstraction shared by every numerical kernel in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive};
use rustfft::FftNum;

/// Real scalar usable by the spectral, quadrature, network and optimizer code.
///
/// Implemented for `f32` and `f64`. Everything that touches an FFT goes
/// through `rustfft`, so the bound includes [`FftNum`].
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + FftNum
    + Default
    + Debug
    + Display
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Step used for complex-step differentiation of closed-form solutions.
    fn complex_step() -> Self;

    /// `c <- alpha a b + beta c` for strided `m x k` and `k x n` operands.
    fn gemm(dims: (usize, usize, usize), alpha: Self, a: Strided<'_, Self>, b: Strided<'_, Self>, beta: Self, c: StridedMut<'_, Self>) {
        gemm_generic(dims, alpha, a, b, beta, c);
    }
}

/// Read-only matrix view: `data[i * row_stride + j * col_stride]`.
#[derive(Debug, Clone, Copy)]
pub struct Strided<'a, T> {
    pub data: &'a [T],
    pub row_stride: usize,
    pub col_stride: usize,
}

#[derive(Debug)]
pub struct StridedMut<'a, T> {
    pub data: &'a mut [T],
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a, T> Strided<'a, T> {
    pub fn row_major(data: &'a [T], cols: usize) -> Self {
        Self { data, row_stride: cols, col_stride: 1 }
    }

    /// The transpose of a row-major matrix with `cols` columns.
    pub fn transposed(data: &'a [T], cols: usize) -> Self {
        Self { data, row_stride: 1, col_stride: cols }
    }

    fn check(&self, rows: usize, cols: usize) {
        if rows > 0 && cols > 0 {
            assert!((rows - 1) * self.row_stride + (cols - 1) * self.col_stride < self.data.len(), "matrix view out of bounds");
        }
    }
}

impl<'a, T> StridedMut<'a, T> {
    pub fn row_major(data: &'a mut [T], cols: usize) -> Self {
        Self { data, row_stride: cols, col_stride: 1 }
    }

    fn check(&self, rows: usize, cols: usize) {
        if rows > 0 && cols > 0 {
            assert!((rows - 1) * self.row_stride + (cols - 1) * self.col_stride < self.data.len(), "matrix view out of bounds");
        }
    }
}

fn gemm_generic<T: Real>((m, k, n): (usize, usize, usize), alpha: T, a: Strided<'_, T>, b: Strided<'_, T>, beta: T, c: StridedMut<'_, T>) {
    a.check(m, k);
    b.check(k, n);
    c.check(m, n);
    for i in 0..m {
        for j in 0..n {
            let mut acc = T::zero();
            for l in 0..k {
                acc = acc + a.data[i * a.row_stride + l * a.col_stride] * b.data[l * b.row_stride + j * b.col_stride];
            }
            let dst = &mut c.data[i * c.row_stride + j * c.col_stride];
            *dst = if beta == T::zero() { alpha * acc } else { alpha * acc + beta * *dst };
        }
    }
}

macro_rules! blas_like {
    ($t:ty, $f:path) => {
        impl Real for $t {
            fn complex_step() -> Self {
                1e-20
            }

            fn gemm((m, k, n): (usize, usize, usize), alpha: Self, a: Strided<'_, Self>, b: Strided<'_, Self>, beta: Self, c: StridedMut<'_, Self>) {
                a.check(m, k);
                b.check(k, n);
                c.check(m, n);
                if m == 0 || n == 0 {
                    return;
                }
                let st = |x: usize| x as isize;
                // SAFETY: the three views were bounds-checked for their shapes above.
                unsafe {
                    $f(
                        m,
                        k,
                        n,
                        alpha,
                        a.data.as_ptr(),
                        st(a.row_stride),
                        st(a.col_stride),
                        b.data.as_ptr(),
                        st(b.row_stride),
                        st(b.col_stride),
                        beta,
                        c.data.as_mut_ptr(),
                        st(c.row_stride),
                        st(c.col_stride),
                    );
                }
            }
        }
    };
}

blas_like!(f32, matrixmultiply::sgemm);
blas_like!(f64, matrixmultiply::dgemm);

/// Converts an `f64` literal into `T`.
#[inline(always)]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in target float type")
}

/// Converts a count into `T`.
#[inline(always)]
pub fn count<T: Real>(n: usize) -> T {
    T::from_usize(n).expect("count representable in target float type")
}

/// Sums a slice by recursive halving.
///
/// The split points depend only on the length, so the result is independent
/// of how callers partition work.
pub fn pairwise_sum<T: Real>(xs: &[T]) -> T {
    const LEAF: usize = 8;
    if xs.len() <= LEAF {
        let mut acc = T::zero();
        for &x in xs {
            acc = acc + x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Largest relative deviation between two slices, measured against the
/// largest magnitude in `reference`.
pub fn max_rel_diff<T: Real>(actual: &[T], reference: &[T]) -> T {
    assert_eq!(actual.len(), reference.len());
    let scale = reference
        .iter()
        .fold(T::zero(), |m, &r| m.max(r.abs()))
        .max(T::min_positive_value());
    actual
        .iter()
        .zip(reference)
        .fold(T::zero(), |m, (&a, &r)| m.max((a - r).abs()))
        / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_sum_matches_naive_on_small_integers() {
        let xs: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500_500.0);
        assert_eq!(pairwise_sum::<f64>(&[]), 0.0);
    }

    #[test]
    fn literal_conversion_is_exact_for_f32_representable_values() {
        assert_eq!(lit::<f32>(0.5), 0.5f32);
        assert_eq!(count::<f64>(7), 7.0);
    }

    #[test]
    fn blocked_gemm_matches_reference_with_strides() {
        let (m, k, n) = (7, 5, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..n * k).map(|i| (i as f64 * 0.91).cos()).collect();
        let c0: Vec<f64> = (0..m * n).map(|i| i as f64).collect();
        let mut fast = c0.clone();
        let mut slow = c0.clone();
        // b is stored as n x k and used transposed.
        f64::gemm((m, k, n), 2.0, Strided::row_major(&a, k), Strided::transposed(&b, k), 0.5, StridedMut::row_major(&mut fast, n));
        gemm_generic((m, k, n), 2.0, Strided::row_major(&a, k), Strided::transposed(&b, k), 0.5, StridedMut::row_major(&mut slow, n));
        assert!(max_rel_diff(&fast, &slow) < 1e-14);
        assert!((slow[0] - 2.0 * (0..k).map(|l| a[l] * b[l]).sum::<f64>()).abs() < 1e-14);
    }
}

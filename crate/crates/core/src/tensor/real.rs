use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Floating-point element type of the engine.
///
/// The engine is monomorphized once per precision: `f64` for verification
/// suites (finite differences need the headroom) and `f32` for training.
pub trait Real:
    Float + AddAssign + SubAssign + MulAssign + Sum + Send + Sync + Debug + Display + Default + 'static
{
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    #[inline]
    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }

    /// `c = a·b + beta·c` on strided row/column layouts.
    ///
    /// # Safety
    /// Every index reachable through the given extents and strides must lie
    /// inside the respective buffers.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
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

impl Real for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
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
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
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
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// A dense matrix view into a slice: `(data, row_stride, col_stride)`.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, F> {
    pub data: &'a [F],
    pub rs: usize,
    pub cs: usize,
}

impl<'a, F> MatRef<'a, F> {
    pub fn rows(data: &'a [F], cols: usize) -> Self {
        MatRef { data, rs: cols, cs: 1 }
    }

    /// Transposed view of a row-major `rows × cols` buffer.
    pub fn transposed(data: &'a [F], cols: usize) -> Self {
        MatRef { data, rs: 1, cs: cols }
    }

    fn reach(&self, r: usize, c: usize) -> usize {
        if r == 0 || c == 0 {
            0
        } else {
            (r - 1) * self.rs + (c - 1) * self.cs + 1
        }
    }
}

/// Safe wrapper: `c[m×n] = a[m×k]·b[k×n] + beta·c`, with `c` row-major of width `n`.
pub(crate) fn gemm<F: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: MatRef<'_, F>,
    b: MatRef<'_, F>,
    beta: F,
    c: &mut [F],
) {
    assert!(a.reach(m, k) <= a.data.len(), "gemm: lhs view out of bounds");
    assert!(b.reach(k, n) <= b.data.len(), "gemm: rhs view out of bounds");
    assert!(m * n <= c.len(), "gemm: output view out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c[..m * n].iter_mut() {
            *v = *v * beta;
        }
        return;
    }
    // SAFETY: bounds of all three views were checked above.
    unsafe {
        F::gemm_raw(
            m,
            k,
            n,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_product() {
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2×3
        let b = [7.0f64, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3×2
        let mut c = [0.0f64; 4];
        gemm(2, 3, 2, MatRef::rows(&a, 3), MatRef::rows(&b, 2), 0.0, &mut c);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);

        // aᵀ·a via a transposed view: 3×3
        let mut g = [0.0f64; 9];
        gemm(3, 2, 3, MatRef::transposed(&a, 3), MatRef::rows(&a, 3), 0.0, &mut g);
        assert_eq!(g, [17.0, 22.0, 27.0, 22.0, 29.0, 36.0, 27.0, 36.0, 45.0]);
    }

    #[test]
    fn gemm_accumulates_with_beta_one() {
        let a = [2.0f32];
        let b = [3.0f32];
        let mut c = [1.0f32];
        gemm(1, 1, 1, MatRef::rows(&a, 1), MatRef::rows(&b, 1), 1.0, &mut c);
        assert_eq!(c, [7.0]);
    }
}

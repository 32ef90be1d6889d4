//! Scalar abstraction: training runs in f32, verification in f64.
//!
//! The only operation beyond what `num_traits::Float` offers is a strided
//! GEMM, dispatched to matrixmultiply's sgemm/dgemm so both precisions share
//! one code path through the conv/fc kernels.

use num_traits::Float;

pub trait Real:
    Float
    + num_traits::NumAssignOps
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Copy
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;

    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
    fn from_f32(x: f32) -> Self;
    fn as_f32(self) -> f32;
    fn from_usize(x: usize) -> Self {
        Self::from_f64(x as f64)
    }

    /// `c ← alpha·a·b + beta·c` where `a` is m×k, `b` is k×n, `c` is m×n,
    /// each given by (row stride, col stride) over its slice.
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

impl Real for f32 {
    const NAME: &'static str = "f32";

    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn from_f32(x: f32) -> Self {
        x
    }
    fn as_f32(self) -> f32 {
        self
    }

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
    ) {
        debug_assert!(gemm_bounds_ok(m, k, n, a.len(), rsa, csa, b.len(), rsb, csb, c.len(), rsc, csc));
        unsafe {
            matrixmultiply::sgemm(
                m, k, n, alpha, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta,
                c.as_mut_ptr(), rsc, csc,
            );
        }
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn from_f32(x: f32) -> Self {
        x as f64
    }
    fn as_f32(self) -> f32 {
        self as f32
    }

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
    ) {
        debug_assert!(gemm_bounds_ok(m, k, n, a.len(), rsa, csa, b.len(), rsb, csb, c.len(), rsc, csc));
        unsafe {
            matrixmultiply::dgemm(
                m, k, n, alpha, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta,
                c.as_mut_ptr(), rsc, csc,
            );
        }
    }
}

/// Highest linear index any (i,j) of an m×n matrix with the given strides can
/// touch must stay inside the slice. Debug-only guard for the unsafe GEMM.
#[allow(clippy::too_many_arguments)]
fn gemm_bounds_ok(
    m: usize,
    k: usize,
    n: usize,
    alen: usize,
    rsa: isize,
    csa: isize,
    blen: usize,
    rsb: isize,
    csb: isize,
    clen: usize,
    rsc: isize,
    csc: isize,
) -> bool {
    fn max_index(rows: usize, cols: usize, rs: isize, cs: isize) -> Option<usize> {
        if rows == 0 || cols == 0 {
            return Some(0);
        }
        let corner = |i: usize, j: usize| i as isize * rs + j as isize * cs;
        let mut hi = isize::MIN;
        let mut lo = isize::MAX;
        for (i, j) in [(0, 0), (rows - 1, 0), (0, cols - 1), (rows - 1, cols - 1)] {
            hi = hi.max(corner(i, j));
            lo = lo.min(corner(i, j));
        }
        if lo < 0 {
            None
        } else {
            Some(hi as usize)
        }
    }
    matches!(
        (max_index(m, k, rsa, csa), max_index(k, n, rsb, csb), max_index(m, n, rsc, csc)),
        (Some(a), Some(b), Some(c)) if a < alen.max(1) && b < blen.max(1) && c < clen.max(1)
    )
}

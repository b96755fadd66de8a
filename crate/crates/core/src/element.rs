use std::fmt;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Scalar element type of a tensor. Training runs at `f32`; gradient
/// verification selects `f64` for the headroom the finite-difference
/// tolerances need.
pub trait Element:
    Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Tag written into checkpoint manifests.
    const TAG: &'static str;

    fn of_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Draw from N(0, 1). Sampling happens in f64 and is then narrowed, so a
    /// given RNG stream yields the same values (up to rounding) in both
    /// precisions.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let v: f64 = StandardNormal.sample(rng);
        Self::of_f64(v)
    }

    /// Row-major general matrix multiply: C = alpha * A(m x k) * B(k x n) + beta * C.
    /// Strides are in elements; negative strides are not used here.
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

fn check_bounds(len: usize, rows: usize, cols: usize, rs: isize, cs: isize, what: &str) {
    if rows == 0 || cols == 0 {
        return;
    }
    let max = (rows as isize - 1) * rs + (cols as isize - 1) * cs;
    assert!(
        max >= 0 && (max as usize) < len,
        "gemm: {what} buffer too small: len {len}, max index {max}"
    );
}

macro_rules! impl_element {
    ($ty:ty, $tag:literal, $gemm:path) => {
        impl Element for $ty {
            const TAG: &'static str = $tag;

            #[inline]
            fn of_f64(v: f64) -> Self {
                v as $ty
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

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
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                check_bounds(a.len(), m, k, rsa, csa, "a");
                check_bounds(b.len(), k, n, rsb, csb, "b");
                check_bounds(c.len(), m, n, rsc, csc, "c");
                unsafe {
                    $gemm(
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
    };
}

impl_element!(f32, "f32", matrixmultiply::sgemm);
impl_element!(f64, "f64", matrixmultiply::dgemm);

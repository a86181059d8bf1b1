//! Floating-point abstraction so the same pipeline runs in single precision
//! for training and double precision for gradient verification.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + AddAssign + SubAssign + MulAssign + Sum + 'static
{
    /// `c ← alpha·a·b + beta·c` with arbitrary strides (see `matrixmultiply`).
    ///
    /// # Safety
    /// The pointers and strides must describe valid, non-overlapping
    /// `m×k`, `k×n` and `m×n` matrices.
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

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("representable")
    }
}

macro_rules! impl_scalar {
    ($t:ty, $f:path) => {
        impl Scalar for $t {
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
                $f(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

fn beta<S: Scalar>(accumulate: bool) -> S {
    if accumulate {
        S::one()
    } else {
        S::zero()
    }
}

/// `c (m×n) [+]= a (m×k) · b (k×n)`, all row-major.
pub fn matmul<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize, accumulate: bool) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: bounds asserted above; `c` is uniquely borrowed.
    unsafe {
        S::gemm(
            m,
            k,
            n,
            S::one(),
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta(accumulate),
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// `c (k×n) [+]= aᵀ · b` for row-major `a (m×k)` and `b (m×n)`.
pub fn matmul_tn<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize, accumulate: bool) {
    assert!(a.len() >= m * k && b.len() >= m * n && c.len() >= k * n);
    // SAFETY: bounds asserted above; `c` is uniquely borrowed.
    unsafe {
        S::gemm(
            k,
            m,
            n,
            S::one(),
            a.as_ptr(),
            1,
            k as isize,
            b.as_ptr(),
            n as isize,
            1,
            beta(accumulate),
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// `c (m×k) = a · bᵀ` for row-major `a (m×n)` and `b (k×n)`.
pub fn matmul_nt<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, n: usize, k: usize) {
    assert!(a.len() >= m * n && b.len() >= k * n && c.len() >= m * k);
    // SAFETY: bounds asserted above; `c` is uniquely borrowed.
    unsafe {
        S::gemm(
            m,
            n,
            k,
            S::one(),
            a.as_ptr(),
            n as isize,
            1,
            b.as_ptr(),
            1,
            n as isize,
            S::zero(),
            c.as_mut_ptr(),
            k as isize,
            1,
        )
    }
}

/// Numerically stable `ln(1 + eˣ)`; exactly zero for very negative inputs.
pub fn softplus<S: Scalar>(x: S) -> S {
    if x > S::lit(20.0) {
        x
    } else if x < S::lit(-20.0) {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

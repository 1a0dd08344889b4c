//! Row-major matrix helpers over `f32`/`f64`.
//!
//! The model is generic over its scalar so the gradient check can compare
//! the `f32` backward pass with finite differences taken in `f64`.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

pub trait Scalar: Float + FromPrimitive + Default + Debug + Sum + Send + Sync + 'static {
    /// `c = alpha * a @ b + beta * c` for strided matrices.
    ///
    /// # Safety
    /// Strides must keep every addressed element inside the slices; the safe
    /// wrappers below check this.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
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

    fn from_f64c(v: f64) -> Self {
        Self::from_f64(v).unwrap()
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// A strided read-only view of an `rows x cols` matrix.
#[derive(Clone, Copy)]
pub struct View<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T: Scalar> View<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, rs: cols, cs: 1 }
    }

    /// Columns `[c0, c0 + width)` of a row-major matrix with `stride` columns.
    pub fn cols_of(data: &'a [T], rows: usize, stride: usize, c0: usize, width: usize) -> Self {
        Self { data: &data[c0..], rows, cols: width, rs: stride, cs: 1 }
    }

    pub fn t(self) -> Self {
        Self { rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs, data: self.data }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

/// `out = a @ b` (or `out += a @ b` when `accumulate`), with `out` a strided
/// window of `out_data`.
pub fn matmul_into<T: Scalar>(
    a: View<T>,
    b: View<T>,
    out_data: &mut [T],
    out_rs: usize,
    out_cs: usize,
    accumulate: bool,
) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    a.check();
    b.check();
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    assert!((m - 1) * out_rs + (n - 1) * out_cs < out_data.len(), "output view out of bounds");
    let beta = if accumulate { T::one() } else { T::zero() };
    if k == 0 {
        if !accumulate {
            for i in 0..m {
                for j in 0..n {
                    out_data[i * out_rs + j * out_cs] = T::zero();
                }
            }
        }
        return;
    }
    // SAFETY: all three views were bounds-checked above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            out_data.as_mut_ptr(),
            out_rs as isize,
            out_cs as isize,
        )
    }
}

pub fn matmul<T: Scalar>(a: View<T>, b: View<T>) -> Vec<T> {
    let mut out = vec![T::zero(); a.rows * b.cols];
    matmul_into(a, b, &mut out, b.cols, 1, false);
    out
}

pub fn add_assign<T: Scalar>(dst: &mut [T], src: &[T]) {
    assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + *s;
    }
}

pub fn sum_sq<T: Scalar>(x: &[T]) -> f64 {
    x.iter().map(|v| v.to_f64().unwrap().powi(2)).sum()
}

/// Sinusoidal position encoding row for position `pos`.
pub fn position_encoding<T: Scalar>(pos: usize, d: usize) -> impl Iterator<Item = T> {
    (0..d).map(move |i| {
        let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        let angle = pos as f64 * rate;
        T::from_f64c(if i % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

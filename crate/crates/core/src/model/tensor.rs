//! Scalar abstraction and channel-major feature maps.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Floating-point element type of the network (f32 for training, f64 for
/// gradient checks).
pub trait Scalar:
    Copy
    + Debug
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
    fn sqrt(self) -> Self;
    fn is_finite(self) -> bool;

    /// `C = alpha * A * B + beta * C` with arbitrary strides.
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

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
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
                if m == 0 || n == 0 {
                    return;
                }
                // Bounds for the strided views are checked by the callers,
                // which always pass dense row- or column-major buffers.
                debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
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

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Row-major dense matrix product helpers.
pub(crate) fn matmul<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    accumulate: bool,
) {
    let beta = if accumulate { T::ONE } else { T::ZERO };
    T::gemm(
        m,
        k,
        n,
        T::ONE,
        a,
        k as isize,
        1,
        b,
        n as isize,
        1,
        beta,
        c,
        n as isize,
        1,
    );
}

/// `C (m x n) (+)= A^T B` where A is stored `k x m` row-major.
pub(crate) fn matmul_at_b<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    accumulate: bool,
) {
    let beta = if accumulate { T::ONE } else { T::ZERO };
    T::gemm(
        m,
        k,
        n,
        T::ONE,
        a,
        1,
        m as isize,
        b,
        n as isize,
        1,
        beta,
        c,
        n as isize,
        1,
    );
}

/// `C (m x n) (+)= A B^T` where B is stored `n x k` row-major.
pub(crate) fn matmul_a_bt<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    accumulate: bool,
) {
    let beta = if accumulate { T::ONE } else { T::ZERO };
    T::gemm(
        m,
        k,
        n,
        T::ONE,
        a,
        k as isize,
        1,
        b,
        1,
        k as isize,
        beta,
        c,
        n as isize,
        1,
    );
}

/// A `channels x height x width` feature map, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Map<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Map<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![T::ZERO; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), c * h * w, "map data length mismatch");
        Self { c, h, w, data }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.h + y) * self.w + x]
    }

    pub fn channel(&self, c: usize) -> &[T] {
        &self.data[c * self.plane()..(c + 1) * self.plane()]
    }

    /// Concatenates maps with equal spatial size along the channel axis.
    pub fn concat(maps: &[Map<T>]) -> Map<T> {
        let (h, w) = (maps[0].h, maps[0].w);
        let mut data = Vec::with_capacity(maps.iter().map(|m| m.data.len()).sum());
        for m in maps {
            assert_eq!((m.h, m.w), (h, w), "concat needs equal spatial dims");
            data.extend_from_slice(&m.data);
        }
        Map::from_vec(maps.iter().map(|m| m.c).sum(), h, w, data)
    }

    /// Inverse of [`Map::concat`] given the channel counts.
    pub fn split(&self, channels: &[usize]) -> Vec<Map<T>> {
        let mut out = Vec::with_capacity(channels.len());
        let mut off = 0;
        for &c in channels {
            let n = c * self.plane();
            out.push(Map::from_vec(
                c,
                self.h,
                self.w,
                self.data[off..off + n].to_vec(),
            ));
            off += n;
        }
        out
    }

    pub fn add_assign(&mut self, other: &Map<T>) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn cast<U: Scalar>(&self) -> Map<U> {
        Map::from_vec(
            self.c,
            self.h,
            self.w,
            self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_variants_agree_with_naive() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        let mut c = vec![0.0; m * n];
        matmul(m, k, n, &a, &b, &mut c, false);
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
                assert!((c[i * n + j] - want).abs() < 1e-12);
            }
        }
        // A^T B with A stored k x m.
        let at: Vec<f64> = (0..k * m).map(|idx| a[(idx % m) * k + idx / m]).collect();
        let mut c2 = vec![0.0; m * n];
        matmul_at_b(m, k, n, &at, &b, &mut c2, false);
        assert_eq!(c, c2);
        // A B^T with B stored n x k.
        let bt: Vec<f64> = (0..n * k).map(|idx| b[(idx % k) * n + idx / k]).collect();
        let mut c3 = vec![1.0; m * n];
        matmul_a_bt(m, k, n, &a, &bt, &mut c3, true);
        for (x, y) in c3.iter().zip(&c) {
            assert!((x - 1.0 - y).abs() < 1e-12);
        }
    }

    #[test]
    fn concat_split_inverse() {
        let a = Map::from_vec(1, 2, 2, vec![1.0f32, 2.0, 3.0, 4.0]);
        let b = Map::from_vec(2, 2, 2, (0..8).map(|v| v as f32).collect());
        let cat = Map::concat(&[a.clone(), b.clone()]);
        assert_eq!(cat.c, 3);
        assert_eq!(cat.split(&[1, 2]), vec![a, b]);
    }
}

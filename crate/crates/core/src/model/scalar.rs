use std::fmt::Debug;

use num_traits::Float;

/// Floating-point element the network can run on. Training uses `f32`;
/// finite-difference gradient checks use `f64`.
pub trait Scalar: Float + Default + Debug + Send + Sync + 'static {
    /// `c = alpha * a * b + beta * c` for row/column-strided matrices,
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`.
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

    fn of(v: f64) -> Self {
        Self::from(v).expect("representable")
    }

    fn of_f32(v: f32) -> Self;

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

fn extent(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows - 1) * rs.unsigned_abs() + (cols - 1) * cs.unsigned_abs() + 1
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
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
                assert!(rsa >= 0 && csa >= 0 && rsb >= 0 && csb >= 0 && rsc >= 0 && csc >= 0);
                assert!(a.len() >= extent(m, k, rsa, csa), "gemm: lhs too short");
                assert!(b.len() >= extent(k, n, rsb, csb), "gemm: rhs too short");
                assert!(c.len() >= extent(m, n, rsc, csc), "gemm: output too short");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every index the kernel touches lies within the extents
                // asserted above, and `c` does not alias `a` or `b`.
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

            fn of_f32(v: f32) -> Self {
                v as $t
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

// Branch-free with a clamped argument: libm exp and tanh, and a sign branch,
// all cost more on some inputs than others, which made step time drift as
// the gates saturated during training. Beyond +-40 the logistic is 1 or
// under 5e-18 in either precision.
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    let bound = T::of(40.0);
    T::one() / (T::one() + (-x.max(-bound).min(bound)).exp())
}

pub(crate) fn tanh<T: Scalar>(x: T) -> T {
    let two = T::of(2.0);
    two * sigmoid(two * x) - T::one()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_product_with_transposed_operand() {
        // a: 2x3, b^T stored as 2x3 (so b is 3x2 with rsb=1, csb=3)
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let bt = [1.0f64, 0.0, -1.0, 2.0, 1.0, 0.5];
        let mut c = [1.0f64; 4];
        f64::gemm(2, 3, 2, 1.0, &a, 3, 1, &bt, 1, 3, 1.0, &mut c, 2, 1);
        assert_eq!(c, [1.0 - 2.0, 1.0 + 2.0 + 2.0 + 1.5, 1.0 + 4.0 - 6.0, 1.0 + 8.0 + 5.0 + 3.0]);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert!(sigmoid(-1000.0f64) < 1e-17);
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert!((sigmoid(0.0f32) - 0.5).abs() < 1e-7);
        assert!(sigmoid(f32::MIN).is_finite());
    }

    #[test]
    fn tanh_tracks_libm() {
        for i in -400..=400 {
            let x = i as f64 * 0.07;
            assert!((tanh(x) - x.tanh()).abs() < 1e-15, "{x}");
            assert!((tanh(x as f32) - (x as f32).tanh()).abs() < 3e-7, "{x}");
        }
    }
}

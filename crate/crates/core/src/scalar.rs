use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

use crate::iuv_io::DType;

/// Real scalar type the numeric core is generic over.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Container dtype code used when this scalar is serialized.
    const DTYPE: DType;

    /// Converts an `f64` literal. Panics only for values the type cannot hold,
    /// which never happens for the finite constants used in this crate.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn append_le(self, out: &mut Vec<u8>);

    fn from_le(bytes: &[u8]) -> Self;

    /// `C = A B + beta C` for row-major `C` (`m x n`, leading dimension `n`).
    /// `A` is `m x k` and `B` is `k x n`, each addressed through its own
    /// `(row, column)` strides.
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_strides: (usize, usize), b: &[Self], b_strides: (usize, usize), beta: Self, c: &mut [Self]);
}

/// Panics unless every element addressed by the strides lies in the slice.
fn check_extent(len: usize, rows: usize, cols: usize, (rs, cs): (usize, usize)) {
    if rows > 0 && cols > 0 {
        assert!((rows - 1) * rs + (cols - 1) * cs < len, "gemm operand out of bounds");
    }
}

macro_rules! gemm_impl {
    ($kernel:path) => {
        fn gemm(m: usize, k: usize, n: usize, a: &[Self], sa: (usize, usize), b: &[Self], sb: (usize, usize), beta: Self, c: &mut [Self]) {
            check_extent(a.len(), m, k, sa);
            check_extent(b.len(), k, n, sb);
            check_extent(c.len(), m, n, (n, 1));
            if m == 0 || n == 0 {
                return;
            }
            // SAFETY: every operand's addressed range was checked above and
            // `c` does not alias `a` or `b` (it is borrowed mutably).
            unsafe {
                $kernel(
                    m, k, n, 1.0, a.as_ptr(), sa.0 as isize, sa.1 as isize, b.as_ptr(), sb.0 as isize, sb.1 as isize,
                    beta, c.as_mut_ptr(), n as isize, 1,
                );
            }
        }
    };
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    fn append_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn from_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }

    gemm_impl!(matrixmultiply::sgemm);
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    fn append_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn from_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }

    gemm_impl!(matrixmultiply::dgemm);
}

//! Floating-point abstraction shared by every numeric routine in the crate.
//!
//! Everything above this module is written against [`Scalar`]; only the
//! matrix-multiply kernel and a handful of transcendental functions need a
//! concrete type, and those are dispatched here.

use std::cell::RefCell;
use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

use crate::autograd::kernels::ConvScratch;

/// Storage tag used by the checkpoint format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn tag(self) -> u8 {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            4 => Some(DType::F32),
            8 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }
}

/// Real scalar type: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    const DTYPE: DType;

    /// `C = alpha * A * B + beta * C` over strided row/column layouts.
    ///
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`. Strides are in
    /// elements. Callers guarantee that every addressed element lies inside
    /// the given slices.
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

    fn erf(self) -> Self;

    /// Runs `f` with this thread's convolution scratch buffers.
    fn with_conv_scratch<R>(f: impl FnOnce(&mut ConvScratch<Self>) -> R) -> R;

    fn write_le(self, out: &mut Vec<u8>);

    fn read_le(bytes: &[u8]) -> Self;

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize is representable in every Scalar")
    }
}

fn extent(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    ((rows - 1) as isize * rs + (cols - 1) as isize * cs) as usize + 1
}

macro_rules! impl_scalar {
    ($t:ty, $dtype:expr, $gemm:path, $erf:path) => {
        impl Scalar for $t {
            const DTYPE: DType = $dtype;

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
                assert!(extent(m, k, rsa, csa) <= a.len(), "gemm: A out of bounds");
                assert!(extent(k, n, rsb, csb) <= b.len(), "gemm: B out of bounds");
                assert!(extent(m, n, rsc, csc) <= c.len(), "gemm: C out of bounds");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: extents checked above; `c` is uniquely borrowed.
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

            #[inline]
            fn erf(self) -> Self {
                $erf(self)
            }

            fn with_conv_scratch<R>(f: impl FnOnce(&mut ConvScratch<Self>) -> R) -> R {
                thread_local! {
                    static SCRATCH: RefCell<ConvScratch<$t>> = RefCell::new(ConvScratch::default());
                }
                SCRATCH.with(|s| f(&mut s.borrow_mut()))
            }

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                let mut buf = [0u8; std::mem::size_of::<$t>()];
                buf.copy_from_slice(&bytes[..std::mem::size_of::<$t>()]);
                <$t>::from_le_bytes(buf)
            }
        }
    };
}

impl_scalar!(f32, DType::F32, matrixmultiply::sgemm, libm::erff);
impl_scalar!(f64, DType::F64, matrixmultiply::dgemm, libm::erf);

//! Scalar abstraction over f32/f64 with BLAS-backed matrix products.
//!
//! All hot-path matrices are row-major `ndarray` arrays; products go
//! through cblas. f32 is used for training throughput, f64 for oracle
//! and gradient-check precision.

use ndarray::{Array2, ArrayView2, ArrayViewMut2};
use std::sync::Once;

extern "C" {
    fn cblas_sgemm(
        layout: i32, ta: i32, tb: i32, m: i32, n: i32, k: i32, alpha: f32, a: *const f32, lda: i32,
        b: *const f32, ldb: i32, beta: f32, c: *mut f32, ldc: i32,
    );
    fn cblas_dgemm(
        layout: i32, ta: i32, tb: i32, m: i32, n: i32, k: i32, alpha: f64, a: *const f64, lda: i32,
        b: *const f64, ldb: i32, beta: f64, c: *mut f64, ldc: i32,
    );
}

const ROW_MAJOR: i32 = 101;
const NO_TRANS: i32 = 111;
const TRANS: i32 = 112;

static BLAS_TUNING: Once = Once::new();

/// OpenBLAS picks its kernels from the CPU model string, which virtualized
/// environments often mask; on AVX-512 hardware the fallback kernel is
/// several times slower than the SKYLAKEX one. Steer the selection once,
/// before the first BLAS call, unless the user already chose.
fn tune_openblas() {
    BLAS_TUNING.call_once(|| {
        #[cfg(target_arch = "x86_64")]
        if std::env::var_os("OPENBLAS_CORETYPE").is_none()
            && is_x86_feature_detected!("avx512f")
        {
            std::env::set_var("OPENBLAS_CORETYPE", "SKYLAKEX");
        }
    });
}

/// OpenBLAS reads OPENBLAS_CORETYPE when the shared library is loaded, i.e.
/// before main() runs, so setting it from inside the process is too late.
/// Long-running binaries call this first thing: when the variable is unset
/// and the CPU has AVX-512, re-exec the process with the kernel pinned.
/// No-op everywhere else.
pub fn reexec_with_tuned_blas() {
    #[cfg(all(unix, target_arch = "x86_64"))]
    {
        if std::env::var_os("OPENBLAS_CORETYPE").is_none()
            && is_x86_feature_detected!("avx512f")
        {
            if let Ok(exe) = std::env::current_exe() {
                use std::os::unix::process::CommandExt;
                // exec only returns on failure; in that case just continue
                let _ = std::process::Command::new(exe)
                    .args(std::env::args_os().skip(1))
                    .env("OPENBLAS_CORETYPE", "SKYLAKEX")
                    .exec();
            }
        }
    }
}

pub trait Scalar: ndarray::NdFloat {
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
    fn gemm(
        ta: bool, tb: bool, alpha: Self, a: &ArrayView2<Self>, b: &ArrayView2<Self>, beta: Self,
        c: &mut ArrayViewMut2<Self>,
    );
}

fn gemm_dims<F: Scalar>(
    ta: bool, tb: bool, a: &ArrayView2<F>, b: &ArrayView2<F>, c: &ArrayViewMut2<F>,
) -> (i32, i32, i32) {
    let (am, ak) = if ta { (a.ncols(), a.nrows()) } else { (a.nrows(), a.ncols()) };
    let (bk, bn) = if tb { (b.ncols(), b.nrows()) } else { (b.nrows(), b.ncols()) };
    assert_eq!(ak, bk, "gemm inner dimensions differ");
    assert_eq!((c.nrows(), c.ncols()), (am, bn), "gemm output shape mismatch");
    (am as i32, bn as i32, ak as i32)
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:ident) => {
        impl Scalar for $t {
            #[inline]
            fn from_f64(x: f64) -> Self {
                x as $t
            }
            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }
            fn gemm(
                ta: bool, tb: bool, alpha: Self, a: &ArrayView2<Self>, b: &ArrayView2<Self>,
                beta: Self, c: &mut ArrayViewMut2<Self>,
            ) {
                tune_openblas();
                let (m, n, k) = gemm_dims(ta, tb, a, b, c);
                let lda = a.ncols() as i32;
                let ldb = b.ncols() as i32;
                let ldc = c.ncols() as i32;
                let a = a.as_standard_layout();
                let b = b.as_standard_layout();
                let a = a.as_slice().expect("gemm: a not standard layout");
                let b = b.as_slice().expect("gemm: b not standard layout");
                let c = c.as_slice_mut().expect("gemm: c not standard layout");
                unsafe {
                    $gemm(
                        ROW_MAJOR,
                        if ta { TRANS } else { NO_TRANS },
                        if tb { TRANS } else { NO_TRANS },
                        m,
                        n,
                        k,
                        alpha,
                        a.as_ptr(),
                        lda,
                        b.as_ptr(),
                        ldb,
                        beta,
                        c.as_mut_ptr(),
                        ldc,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, cblas_sgemm);
impl_scalar!(f64, cblas_dgemm);

/// `op(a) * op(b)` into a freshly allocated array.
pub fn matmul<F: Scalar>(ta: bool, tb: bool, a: &ArrayView2<F>, b: &ArrayView2<F>) -> Array2<F> {
    let m = if ta { a.ncols() } else { a.nrows() };
    let n = if tb { b.nrows() } else { b.ncols() };
    let mut c = Array2::zeros((m, n));
    F::gemm(ta, tb, F::one(), a, b, F::zero(), &mut c.view_mut());
    c
}

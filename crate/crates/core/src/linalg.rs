//! Row-major matrix products on top of `matrixmultiply`.

use std::sync::OnceLock;

use crate::real::Real;

/// Environment variable capping intra-kernel parallelism.
pub const THREADS_ENV: &str = "COORDCONV_LAB_THREADS";

// Row blocks smaller than this are not worth a thread.
const MIN_ROWS_PER_THREAD: usize = 4096;

/// Number of threads kernels may use, read once from `COORDCONV_LAB_THREADS`.
/// Defaults to the available hardware parallelism.
pub fn kernel_threads() -> usize {
    static THREADS: OnceLock<usize> = OnceLock::new();
    *THREADS.get_or_init(|| {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0)
            .unwrap_or_else(|| {
                std::thread::available_parallelism()
                    .map(|n| n.get())
                    .unwrap_or(1)
            })
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trans {
    No,
    Yes,
}

struct SendPtr<T>(*mut T);
unsafe impl<T> Send for SendPtr<T> {}
unsafe impl<T> Sync for SendPtr<T> {}

/// `C = op(A) · op(B) + beta · C` where `op(A)` is `m×k`, `op(B)` is `k×n`
/// and every operand is a contiguous row-major buffer. With `Trans::Yes`
/// the stored matrix is the transpose (`k×m` for A, `n×k` for B).
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    ta: Trans,
    tb: Trans,
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    assert_eq!(a.len(), m * k, "gemm: A has wrong length");
    assert_eq!(b.len(), k * n, "gemm: B has wrong length");
    assert_eq!(c.len(), m * n, "gemm: C has wrong length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = match ta {
        Trans::No => (k as isize, 1),
        Trans::Yes => (1, m as isize),
    };
    let (rsb, csb) = match tb {
        Trans::No => (n as isize, 1),
        Trans::Yes => (1, k as isize),
    };

    // Only the output rows are split, so per-element summation order (and
    // therefore the result) does not depend on the thread count.
    let threads = kernel_threads().min(m / MIN_ROWS_PER_THREAD).max(1);
    if threads == 1 {
        unsafe {
            T::gemm_raw(
                m,
                k,
                n,
                T::one(),
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        return;
    }
    let rows_per = m.div_ceil(threads);
    let a_ptr = SendPtr(a.as_ptr() as *mut T);
    let c_ptr = SendPtr(c.as_mut_ptr());
    let b_ptr = SendPtr(b.as_ptr() as *mut T);
    let fp_mode = crate::runtime::fp_mode();
    std::thread::scope(|s| {
        for t in 0..threads {
            let r0 = t * rows_per;
            if r0 >= m {
                break;
            }
            let rows = rows_per.min(m - r0);
            let (a_ptr, b_ptr, c_ptr) = (&a_ptr, &b_ptr, &c_ptr);
            s.spawn(move || unsafe {
                crate::runtime::set_fp_mode(fp_mode);
                T::gemm_raw(
                    rows,
                    k,
                    n,
                    T::one(),
                    a_ptr.0.offset(r0 as isize * rsa),
                    rsa,
                    csa,
                    b_ptr.0,
                    rsb,
                    csb,
                    beta,
                    c_ptr.0.add(r0 * n),
                    n as isize,
                    1,
                );
            });
        }
    });
}

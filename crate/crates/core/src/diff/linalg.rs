//! Thin dgemm wrapper over `matrixmultiply` for row-major buffers.

/// Computes `c = alpha * op(a) * op(b) + beta * c`.
///
/// `m`, `k`, `n` are the logical dimensions after transposition: op(a) is
/// `[m, k]`, op(b) is `[k, n]`, and `c` is `[m, n]`. When `ta`/`tb` is set the
/// corresponding buffer holds the untransposed matrix (`[k, m]` / `[n, k]`)
/// in row-major order.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    ta: bool,
    tb: bool,
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    b: &[f64],
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(
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
            n as isize,
            1,
        );
    }
}

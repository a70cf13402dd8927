//! Safe wrapper over `matrixmultiply::dgemm` for row-major buffers.

/// `out (m×n) (+)= op(a) · op(b)` where `op(a)` is m×k and `op(b)` is k×n.
///
/// With `a_t` set, `a` is stored as k×m and read transposed; likewise `b_t`.
#[allow(clippy::too_many_arguments)]
pub fn matmul_into(
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    m: usize,
    k: usize,
    n: usize,
    out: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && out.len() >= m * n, "gemm buffer too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            out[..m * n].fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the length assertion above guarantees that every index touched
    // through the given strides lies inside the three slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn matmul(a: &[f64], a_t: bool, b: &[f64], b_t: bool, m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    matmul_into(a, a_t, b, b_t, m, k, n, &mut out, false);
    out
}

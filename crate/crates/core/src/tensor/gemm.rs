//! Thin row-major wrapper over `matrixmultiply::dgemm`.

/// Layout of a row-major operand.
#[derive(Clone, Copy)]
pub(crate) enum Op {
    /// Stored as written: `[rows, cols]`.
    N,
    /// Stored transposed: `[cols, rows]`.
    T,
}

/// `c[m×n] = a[m×k] · b[k×n] + beta · c`, with `a` and `b` optionally stored
/// transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_op: Op,
    b: &[f64],
    b_op: Op,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match a_op {
        Op::N => (k as isize, 1),
        Op::T => (1, m as isize),
    };
    let (rsb, csb) = match b_op {
        Op::N => (n as isize, 1),
        Op::T => (1, k as isize),
    };
    // SAFETY: slice lengths are checked above against the extents and the
    // strides address only elements inside those slices.
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
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

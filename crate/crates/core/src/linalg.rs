//! Thin strided GEMM over nalgebra's column-major storage, so transposed
//! operands never need to be copied.

use nalgebra::DMatrix;

#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum Op {
    N,
    T,
}

fn dims(m: &DMatrix<f64>, op: Op) -> (usize, usize, isize, isize) {
    let (r, c) = m.shape();
    match op {
        Op::N => (r, c, 1, r as isize),
        Op::T => (c, r, r as isize, 1),
    }
}

/// `out = alpha * op(a) * op(b) + beta * out`
pub(crate) fn gemm(
    alpha: f64,
    a: &DMatrix<f64>,
    op_a: Op,
    b: &DMatrix<f64>,
    op_b: Op,
    beta: f64,
    out: &mut DMatrix<f64>,
) {
    let (m, k, rsa, csa) = dims(a, op_a);
    let (k2, n, rsb, csb) = dims(b, op_b);
    assert_eq!(k, k2, "inner dimensions differ");
    assert_eq!(out.shape(), (m, n), "output shape");
    if m == 0 || n == 0 {
        return;
    }
    let rsc = 1isize;
    let csc = m as isize;
    // SAFETY: all pointers come from live, correctly sized column-major
    // buffers and the strides above describe exactly those layouts.
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
            out.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

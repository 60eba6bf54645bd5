//! Matrix exponential (scaling-and-squaring, degree-6 Pade) and the exact
//! zero-order-hold discretization built from one augmented exponential.

use alloc::vec::Vec;

use super::{Lu, Matrix};
use crate::math;
use crate::{Error, Result};

// Degree-6 diagonal Pade numerator coefficients of e^x, scaled so c0 = 1:
// N(x) = sum c_k x^k, D(x) = N(-x).
const PADE6: [f64; 7] = [
    1.0,
    1.0 / 2.0,
    5.0 / 44.0,
    1.0 / 66.0,
    1.0 / 792.0,
    1.0 / 15_840.0,
    1.0 / 665_280.0,
];

/// Threshold on the scaled norm; 0.25 keeps the Pade truncation error near
/// machine precision at the matrix sizes used here.
const PADE_THETA: f64 = 0.25;

/// e^(A t) for square A and t >= 0.
pub fn expm(a: &Matrix, t: f64) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::dim("expm", "matrix must be square"));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::precondition("expm", "t must be finite and nonnegative"));
    }
    let n = a.rows();
    let at = a.scale(t);
    if !at.is_finite() {
        return Err(Error::precondition("expm", "non-finite entries"));
    }

    let norm = at.norm_inf();
    let s = if norm > PADE_THETA {
        math::ceil(math::log2(norm / PADE_THETA)) as u32
    } else {
        0
    };
    let scaled = at.scale(1.0 / (1u64 << s) as f64);

    // U odd part, V even part of the Pade polynomial.
    let a2 = scaled.matmul(&scaled);
    let a4 = a2.matmul(&a2);
    let a6 = a4.matmul(&a2);

    let mut u_inner = Matrix::identity(n).scale(PADE6[1]);
    u_inner.add_scaled(&a2, PADE6[3]);
    u_inner.add_scaled(&a4, PADE6[5]);
    let u = scaled.matmul(&u_inner);

    let mut v = Matrix::identity(n).scale(PADE6[0]);
    v.add_scaled(&a2, PADE6[2]);
    v.add_scaled(&a4, PADE6[4]);
    v.add_scaled(&a6, PADE6[6]);

    let num = v.add(&u);
    let den = v.sub(&u);

    // Solve den * X = num column block by column block.
    let lu = Lu::factor(&den)?;
    let mut x = Matrix::zeros(n, n);
    let mut col = alloc::vec![0.0; n];
    for j in 0..n {
        for i in 0..n {
            col[i] = num[(i, j)];
        }
        let sol = lu.solve(&col);
        for i in 0..n {
            x[(i, j)] = sol[i];
        }
    }

    for _ in 0..s {
        x = x.matmul(&x);
    }
    Ok(x)
}

/// Exact zero-order-hold discretization of `xdot = A x + B v + c` over one
/// sampling period `delta`:
///
/// ```text
/// A_d = e^(A delta),   B_d = (int_0^delta e^(A s) ds) B,
/// c_d = (int_0^delta e^(A s) ds) c,
/// ```
///
/// obtained from the upper blocks of `exp(delta [[A, I], [0, 0]])`.
pub fn discretize_pair(
    a: &Matrix,
    b: &Matrix,
    c: &[f64],
    delta: f64,
) -> Result<(Matrix, Matrix, Vec<f64>)> {
    if !a.is_square() {
        return Err(Error::dim("discretize_pair", "A must be square"));
    }
    let n = a.rows();
    if b.rows() != n || c.len() != n {
        return Err(Error::dim("discretize_pair", "B rows and c length must match A"));
    }
    if !(delta > 0.0) {
        return Err(Error::precondition("discretize_pair", "delta must be positive"));
    }

    let mut aug = Matrix::zeros(2 * n, 2 * n);
    aug.set_block(0, 0, a);
    aug.set_block(0, n, &Matrix::identity(n));
    let e = expm(&aug, delta)?;

    let a_d = e.block(0, 0, n, n);
    let integral = e.block(0, n, n, n);
    let b_d = integral.matmul(b);
    let c_d = integral.matvec(c);
    Ok((a_d, b_d, c_d))
}

//! Continuous algebraic Riccati equation via Newton-Kleinman iteration,
//! seeded with a stabilizing gain from the Bass (shifted Lyapunov) method.

use super::{cholesky, Matrix};
use crate::math;
use crate::{Error, Result};

/// Which quadratic term the Riccati equation carries.
///
/// The controller derivation prints `P A + A^T P - P B^T B P + Q = 0` and
/// pairs it with the gain `K = -B^T P`; the textbook LQR equation for that
/// gain (R = I) would use `P B B^T P`. Both are supported; the printed form
/// is the default and the convention is surfaced rather than silently fixed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RiccatiForm {
    /// Quadratic term `P B^T B P` (as printed alongside the controller).
    #[default]
    BtB,
    /// Quadratic term `P B B^T P` (textbook LQR with R = I).
    BBt,
}

/// Solve `A^T X + X A = -C` for symmetric `C` by dense Kronecker elimination.
/// Suited to the n <= 10 problems here (the linear system is n^2 x n^2).
pub fn solve_lyapunov(a: &Matrix, c: &Matrix) -> Result<Matrix> {
    if !a.is_square() || !c.is_square() || a.rows() != c.rows() {
        return Err(Error::dim("solve_lyapunov", "A and C must be square of equal size"));
    }
    let n = a.rows();
    let mut sys = Matrix::zeros(n * n, n * n);
    let mut rhs = alloc::vec![0.0; n * n];
    // Row (i,j) states: sum_k A[k,i] X[k,j] + sum_l A[l,j] X[i,l] = -C[i,j].
    for i in 0..n {
        for j in 0..n {
            let e = i * n + j;
            for k in 0..n {
                sys[(e, k * n + j)] += a[(k, i)];
            }
            for l in 0..n {
                sys[(e, i * n + l)] += a[(l, j)];
            }
            rhs[e] = -c[(i, j)];
        }
    }
    let x = sys.solve(&rhs)?;
    Ok(Matrix::from_fn(n, n, |i, j| x[i * n + j]).symmetrize())
}

/// Residual `P A + A^T P - P M P + Q` with `M = S S^T`.
fn care_residual(a: &Matrix, s: &Matrix, q: &Matrix, p: &Matrix) -> Matrix {
    let pa = p.matmul(a);
    let atp = a.transpose().matmul(p);
    let ps = p.matmul(s);
    let psstp = ps.matmul(&ps.transpose());
    pa.add(&atp).sub(&psstp).add(q)
}

/// Unique symmetric positive definite solution of the continuous algebraic
/// Riccati equation `P A + A^T P - P M P + Q = 0`, where `M` is `B^T B` or
/// `B B^T` per [`RiccatiForm`].
///
/// Requires `Q` symmetric positive definite and the pair `(A, M^(1/2))`
/// controllable (the Bass initializer needs controllability; with the square
/// nonsingular input matrices produced by this toolkit that is automatic).
/// Residual contract: `||P A + A^T P - P M P + Q||_F <= 1e-8 ||Q||_F`.
pub fn solve_care(a: &Matrix, b: &Matrix, q: &Matrix, form: RiccatiForm) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::dim("solve_care", "A must be square"));
    }
    let n = a.rows();
    if !q.is_square() || q.rows() != n {
        return Err(Error::dim("solve_care", "Q must match A"));
    }
    match form {
        RiccatiForm::BtB => {
            if b.cols() != n {
                return Err(Error::dim("solve_care", "B must have as many columns as A rows"));
            }
        }
        RiccatiForm::BBt => {
            if b.rows() != n {
                return Err(Error::dim("solve_care", "B must have as many rows as A"));
            }
        }
    }
    cholesky(&q.symmetrize()).map_err(|_| Error::NotPositiveDefinite { context: "solve_care Q" })?;

    // M = S S^T: for the B^T B form take S = B^T.
    let s = match form {
        RiccatiForm::BtB => b.transpose(),
        RiccatiForm::BBt => b.clone(),
    };

    // Bass initializer: beta bounds the spectral abscissa of A, then
    // (A + beta I) Z + Z (A + beta I)^T = 2 S S^T gives Z > 0 and
    // P0 = Z^-1 makes A - S S^T P0 Hurwitz.
    let beta = a.norm_fro() + 0.5;
    let shifted_neg = a.transpose().add(&Matrix::identity(n).scale(beta)).scale(-1.0);
    let sst = s.matmul(&s.transpose());
    let z = solve_lyapunov(&shifted_neg, &sst.scale(2.0))?;
    let p0 = z.inverse().map_err(|_| Error::RiccatiFailure { residual: f64::INFINITY })?;
    let mut p = p0.symmetrize();

    let qnorm = q.norm_fro();
    let tol = 1e-10 * math::max(1.0, qnorm);
    let max_iter = 80;
    let mut res_norm = care_residual(a, &s, q, &p).norm_fro();
    for _ in 0..max_iter {
        if res_norm <= tol {
            break;
        }
        // Newton-Kleinman step: with A_cl = A - S S^T P, solve
        // A_cl^T P+ + P+ A_cl = -(Q + P S S^T P).
        let ps = p.matmul(&s);
        let psstp = ps.matmul(&ps.transpose());
        let a_cl = a.sub(&s.matmul(&s.transpose().matmul(&p)));
        let rhs = q.add(&psstp);
        let p_next = solve_lyapunov(&a_cl, &rhs)?;
        let next_res = care_residual(a, &s, q, &p_next).norm_fro();
        if !next_res.is_finite() {
            return Err(Error::RiccatiFailure { residual: next_res });
        }
        p = p_next.symmetrize();
        res_norm = next_res;
    }

    if res_norm > 1e-8 * math::max(1e-30, qnorm) {
        return Err(Error::RiccatiFailure { residual: res_norm });
    }
    cholesky(&p).map_err(|_| Error::RiccatiFailure { residual: res_norm })?;
    Ok(p)
}

//! Strictly convex quadratic programs over a box plus a few general linear
//! inequalities, solved by a dual active-set method (Goldfarb-Idnani).
//! Starting from the unconstrained minimizer it needs no phase-1 and detects
//! infeasibility exactly; problem sizes here are tiny (n <= ~60, m <= ~10).

use alloc::vec;
use alloc::vec::Vec;

use super::{cholesky, cholesky_solve, dot, Matrix};
use crate::math;
use crate::{Error, Result};

/// Output of [`solve_box_qp_with_ineq`].
#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Multipliers for the lower bounds (length n).
    pub lambda_lower: Vec<f64>,
    /// Multipliers for the upper bounds (length n).
    pub lambda_upper: Vec<f64>,
    /// Multipliers for the general inequalities (length m).
    pub lambda_ineq: Vec<f64>,
    pub iterations: usize,
    /// Max violation over stationarity, feasibility and complementarity.
    pub kkt_residual: f64,
}

/// minimize 1/2 x^T H x + g^T x  subject to  lower <= x <= upper.
pub fn solve_box_qp(h: &Matrix, g: &[f64], lower: &[f64], upper: &[f64]) -> Result<Vec<f64>> {
    Ok(solve_box_qp_with_ineq(h, g, lower, upper, None)?.x)
}

/// minimize 1/2 x^T H x + g^T x  subject to  lower <= x <= upper and
/// optionally `G x <= rhs`. Infinite bounds and +inf rows are skipped.
pub fn solve_box_qp_with_ineq(
    h: &Matrix,
    g: &[f64],
    lower: &[f64],
    upper: &[f64],
    ineq: Option<(&Matrix, &[f64])>,
) -> Result<QpSolution> {
    let n = g.len();
    if !h.is_square() || h.rows() != n || lower.len() != n || upper.len() != n {
        return Err(Error::dim("solve_box_qp", "H, g and bounds must agree"));
    }
    if let Some((gm, rhs)) = ineq {
        if gm.cols() != n || gm.rows() != rhs.len() {
            return Err(Error::dim("solve_box_qp", "inequality block shape mismatch"));
        }
    }
    for i in 0..n {
        if lower[i] > upper[i] {
            return Err(Error::precondition("solve_box_qp", "lower bound exceeds upper bound"));
        }
    }

    // Constraint list in the form a^T x >= b.
    // id encodes provenance: 0..n lower, n..2n upper, 2n.. general rows.
    struct Row {
        id: usize,
        a: Vec<f64>,
        b: f64,
    }
    let mut rows: Vec<Row> = Vec::new();
    for i in 0..n {
        if lower[i].is_finite() {
            let mut a = vec![0.0; n];
            a[i] = 1.0;
            rows.push(Row { id: i, a, b: lower[i] });
        }
        if upper[i].is_finite() {
            let mut a = vec![0.0; n];
            a[i] = -1.0;
            rows.push(Row { id: n + i, a, b: -upper[i] });
        }
    }
    let m = ineq.map(|(gm, _)| gm.rows()).unwrap_or(0);
    if let Some((gm, rhs)) = ineq {
        for j in 0..m {
            if rhs[j].is_finite() {
                let a: Vec<f64> = gm.row(j).iter().map(|v| -v).collect();
                rows.push(Row { id: 2 * n + j, a, b: -rhs[j] });
            } else if rhs[j] == f64::NEG_INFINITY {
                return Err(Error::QpInfeasible { row: j });
            }
        }
    }

    let chol = cholesky(h)?;
    let mut x: Vec<f64> = cholesky_solve(&chol, g).iter().map(|v| -v).collect();

    let mut active: Vec<usize> = Vec::new(); // indices into rows
    let mut lambda: Vec<f64> = Vec::new();

    let scale = 1.0 + super::norm_inf_vec(&x) + rows.iter().fold(0.0, |s, r| math::max(s, math::abs(r.b)));
    let feas_tol = 1e-11 * scale;
    let max_iter = 100 * (rows.len() + 1);
    let mut iterations = 0;

    loop {
        iterations += 1;
        if iterations > max_iter {
            return Err(Error::NonConvergence {
                context: "solve_box_qp",
                iterations,
                residual: f64::NAN,
            });
        }

        // Most violated inactive constraint.
        let mut p_opt: Option<(usize, f64)> = None;
        for (ri, row) in rows.iter().enumerate() {
            if active.contains(&ri) {
                continue;
            }
            let s = dot(&row.a, &x) - row.b;
            if s < -feas_tol && p_opt.map(|(_, best)| s < best).unwrap_or(true) {
                p_opt = Some((ri, s));
            }
        }
        let (p, mut s_p) = match p_opt {
            None => break,
            Some(v) => v,
        };

        // Inner loop: dual steps until constraint p becomes active.
        let mut lambda_p = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::NonConvergence {
                    context: "solve_box_qp",
                    iterations,
                    residual: -s_p,
                });
            }
            let hinv_ap = cholesky_solve(&chol, &rows[p].a);
            let k = active.len();
            let (z, r) = if k == 0 {
                (hinv_ap.clone(), Vec::new())
            } else {
                // W = N^T H^-1 N, r = W^-1 N^T H^-1 a_p, z = H^-1 a_p - H^-1 N r.
                let mut hinv_n: Vec<Vec<f64>> = Vec::with_capacity(k);
                for &ai in &active {
                    hinv_n.push(cholesky_solve(&chol, &rows[ai].a));
                }
                let w = Matrix::from_fn(k, k, |i, j| dot(&rows[active[i]].a, &hinv_n[j]));
                let nt_hinv_ap: Vec<f64> =
                    active.iter().map(|&ai| dot(&rows[ai].a, &hinv_ap)).collect();
                let r = w.solve(&nt_hinv_ap).map_err(|_| Error::NonConvergence {
                    context: "solve_box_qp (degenerate active set)",
                    iterations,
                    residual: -s_p,
                })?;
                let mut z = hinv_ap.clone();
                for (j, rj) in r.iter().enumerate() {
                    super::axpy(-rj, &hinv_n[j], &mut z);
                }
                (z, r)
            };

            let ztap = dot(&rows[p].a, &z);
            let t2 = if ztap > 1e-13 * scale { -s_p / ztap } else { f64::INFINITY };

            let mut t1 = f64::INFINITY;
            let mut blocking = usize::MAX;
            for (j, &rj) in r.iter().enumerate() {
                if rj > 1e-13 {
                    let cand = lambda[j] / rj;
                    if cand < t1 {
                        t1 = cand;
                        blocking = j;
                    }
                }
            }

            let t = math::min(t1, t2);
            if !t.is_finite() {
                return Err(Error::QpInfeasible { row: rows[p].id });
            }

            if ztap > 1e-13 * scale {
                super::axpy(t, &z, &mut x);
                s_p = dot(&rows[p].a, &x) - rows[p].b;
            }
            for (j, rj) in r.iter().enumerate() {
                lambda[j] -= t * rj;
            }
            lambda_p += t;

            if t2 <= t1 {
                active.push(p);
                lambda.push(lambda_p);
                break;
            } else {
                active.remove(blocking);
                lambda.remove(blocking);
            }
        }
    }

    // Map multipliers back and compute the KKT residual.
    let mut lambda_lower = vec![0.0; n];
    let mut lambda_upper = vec![0.0; n];
    let mut lambda_ineq = vec![0.0; m];
    for (&ai, &li) in active.iter().zip(&lambda) {
        let id = rows[ai].id;
        if id < n {
            lambda_lower[id] = li;
        } else if id < 2 * n {
            lambda_upper[id - n] = li;
        } else {
            lambda_ineq[id - 2 * n] = li;
        }
    }

    let mut stat = h.matvec(&x);
    for (s, gi) in stat.iter_mut().zip(g) {
        *s += gi;
    }
    for (&ai, &li) in active.iter().zip(&lambda) {
        super::axpy(-li, &rows[ai].a, &mut stat);
    }
    let mut kkt = super::norm_inf_vec(&stat);
    for row in &rows {
        let s = dot(&row.a, &x) - row.b;
        kkt = math::max(kkt, math::max(0.0, -s));
    }
    for (&ai, &li) in active.iter().zip(&lambda) {
        let s = dot(&rows[ai].a, &x) - rows[ai].b;
        kkt = math::max(kkt, math::abs(li * s));
        kkt = math::max(kkt, math::max(0.0, -li));
    }

    Ok(QpSolution { x, lambda_lower, lambda_upper, lambda_ineq, iterations, kkt_residual: kkt })
}

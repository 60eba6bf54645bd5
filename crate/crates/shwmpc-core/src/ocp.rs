//! The finite-horizon tracking problem in transformed-input space.
//!
//! With the transformed input sequence `V` as decision variable, the stacked
//! state is affine (`X = Abar x0 + Bbar V + cbar`), the tracking cost is a
//! positive definite quadratic, the constraint outputs are convex, and the
//! input box transports to a box on `V` through the diagonal input map. The
//! program is therefore strictly convex: its stationary point is unique and
//! the first-step control law is locally Lipschitz in `(x0, d, r)`.
//!
//! The solver is a projected Newton method with Armijo backtracking;
//! optimality is certified by the Fischer-Burmeister reformulation of the
//! KKT system, never by the iteration count.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use core::cell::Cell;

use crate::bnn;
use crate::linalg::{self, cholesky, cholesky_solve, Matrix};
use crate::math;
use crate::picnn;
use crate::shw::{DiscreteModel, ShwModel};
use crate::{Error, Result};

/// Soft-constraint spec for the ceiling outputs: per channel a weight and a
/// ceiling; the penalty is `w * max(0, z - ceiling)^3` per stage (zero weight
/// disables the channel).
#[derive(Clone, Debug)]
pub struct FzSpec {
    pub weights: Vec<f64>,
    pub ceilings: Vec<f64>,
}

impl FzSpec {
    pub fn disabled(n_z: usize) -> Self {
        FzSpec { weights: vec![0.0; n_z], ceilings: vec![f64::INFINITY; n_z] }
    }

    fn validate(&self, n_z: usize) -> Result<()> {
        if self.weights.len() != n_z || self.ceilings.len() != n_z {
            return Err(Error::dim("FzSpec", "weights and ceilings must have n_z entries"));
        }
        if self.weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::precondition("FzSpec", "weights must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// How the ceiling constraint is enforced: cubic-hinge penalty (default) or
/// hard inequalities handled by sequential linearization against the QP path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZConstraintMode {
    Soft,
    Hard,
}

/// Optional input cost, supplied directly in V-space (convexity in V is the
/// caller's obligation; the default problem has no input cost).
pub trait VSpaceCost {
    /// Add the cost at `v` and accumulate its gradient.
    fn eval_grad(&self, v: &[f64], grad: &mut [f64]) -> f64;
    /// Accumulate the Hessian at `v`.
    fn add_hessian(&self, v: &[f64], hess: &mut Matrix);
}

/// Horizon-stacked affine dynamics `X = Abar x0 + Bbar V + cbar`.
#[derive(Clone, Debug)]
pub struct StackedAffine {
    pub a_bar: Matrix,
    pub b_bar: Matrix,
    pub c_bar: Vec<f64>,
}

/// Block structure of the stacked affine map: `Abar` stacks the powers of
/// `A_d`, `Bbar` is block lower triangular with `(i, j)` block
/// `A_d^(i-j) B_d`, `cbar` accumulates the drift.
pub fn build_stacked(dm: &DiscreteModel, horizon: usize) -> Result<StackedAffine> {
    if horizon == 0 {
        return Err(Error::precondition("build_stacked", "horizon must be at least 1"));
    }
    let n_y = dm.a_d.rows();
    let n_u = dm.b_d.cols();
    let mut a_bar = Matrix::zeros(horizon * n_y, n_y);
    let mut b_bar = Matrix::zeros(horizon * n_y, horizon * n_u);
    let mut c_bar = vec![0.0; horizon * n_y];

    // powers[k] = A_d^k for k = 0..horizon
    let mut powers = Vec::with_capacity(horizon + 1);
    powers.push(Matrix::identity(n_y));
    for k in 0..horizon {
        powers.push(powers[k].matmul(&dm.a_d));
    }

    let mut c_acc = vec![0.0; n_y];
    for i in 0..horizon {
        a_bar.set_block(i * n_y, 0, &powers[i + 1]);
        for j in 0..=i {
            let blk = powers[i - j].matmul(&dm.b_d);
            b_bar.set_block(i * n_y, j * n_u, &blk);
        }
        // c block i = sum_{k=0}^{i} A^k c_d
        let contrib = powers[i].matvec(&dm.c_d);
        for r in 0..n_y {
            c_acc[r] += contrib[r];
        }
        c_bar[i * n_y..(i + 1) * n_y].copy_from_slice(&c_acc);
    }
    Ok(StackedAffine { a_bar, b_bar, c_bar })
}

/// Per-stage tracking weight `Q0 = (grad y0)^T (grad y0)` where `grad y0` is
/// the Jacobian of the inverse output map at the initial state; the stacked
/// weight is block-diagonal with `horizon` copies. Certified positive
/// definite by Cholesky.
pub fn build_q(model: &ShwModel, x0: &[f64], d_bar: &[f64]) -> Result<Matrix> {
    let y0 = model.output_map_inv(x0, d_bar)?;
    let jac = bnn::forward_with_jacobian(&model.arch.phi, model.theta_phi(), &y0, d_bar)?.1;
    let n_y = model.arch.dims.n_y;
    let jm = Matrix::from_vec(n_y, n_y, jac)?;
    let jinv = jm.inverse().map_err(|_| Error::IllConditioned {
        context: "build_q (dPhi/dy)",
        det: jm.det().unwrap_or(0.0),
        record: None,
    })?;
    let q0 = jinv.transpose().matmul(&jinv).symmetrize();
    cholesky(&q0).map_err(|_| Error::NotPositiveDefinite { context: "build_q" })?;
    Ok(q0)
}

/// Counters proving the per-stage structure of objective evaluation: every
/// call touches the constraint network exactly once per stage, with inputs
/// taken from the affine stacked state, never from another stage's output.
#[derive(Debug, Default)]
pub struct EvalStats {
    pub picnn_forward: Cell<usize>,
    pub picnn_grad: Cell<usize>,
    pub objective_calls: Cell<usize>,
}

impl EvalStats {
    pub fn reset(&self) {
        self.picnn_forward.set(0);
        self.picnn_grad.set(0);
        self.objective_calls.set(0);
    }
}

/// One tracking problem instance, frozen at `(x0, d, r)`.
pub struct OcpInstance<'m> {
    pub model: &'m ShwModel,
    pub disc: DiscreteModel,
    pub stacked: StackedAffine,
    pub horizon: usize,
    pub x0: Vec<f64>,
    pub d_ref: Vec<f64>,
    pub r_ref: Vec<f64>,
    /// Target state `Phi(r; d)`.
    pub x_target: Vec<f64>,
    pub q0: Matrix,
    pub fz: FzSpec,
    pub z_mode: ZConstraintMode,
    /// Stacked per-coordinate bounds on V (length `horizon * n_u`).
    pub v_lower: Vec<f64>,
    pub v_upper: Vec<f64>,
    pub fu: Option<Box<dyn VSpaceCost>>,
    pub stats: EvalStats,
    /// `Abar x0 + cbar`, cached.
    base_x: Vec<f64>,
    /// `2 Bbar^T (I (x) Q0) Bbar`, cached.
    h_quad: Matrix,
}

/// Solver tolerances: Fischer-Burmeister residual target and iteration cap.
pub const KKT_TOL: f64 = 1e-8;
pub const MAX_ITER: usize = 500;

impl<'m> OcpInstance<'m> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: &'m ShwModel,
        x0: &[f64],
        d_ref: &[f64],
        r_ref: &[f64],
        horizon: usize,
        fz: FzSpec,
        u_lower: &[f64],
        u_upper: &[f64],
        z_mode: ZConstraintMode,
        fu: Option<Box<dyn VSpaceCost>>,
    ) -> Result<Self> {
        let dims = model.arch.dims;
        if x0.len() != dims.n_y || d_ref.len() != dims.n_d || r_ref.len() != dims.n_y {
            return Err(Error::dim("OcpInstance", "x0/d/r dimension mismatch"));
        }
        if u_lower.len() != dims.n_u || u_upper.len() != dims.n_u {
            return Err(Error::dim("OcpInstance", "input bounds dimension mismatch"));
        }
        if horizon == 0 {
            return Err(Error::precondition("OcpInstance", "horizon must be at least 1"));
        }
        for i in 0..dims.n_u {
            if !(u_lower[i] < u_upper[i]) {
                return Err(Error::precondition("OcpInstance", "input box must be nonempty"));
            }
        }
        fz.validate(dims.n_z)?;

        let disc = model.discretize(d_ref)?;
        let stacked = build_stacked(&disc, horizon)?;
        let x_target = model.output_map(r_ref, d_ref)?;
        let q0 = build_q(model, x0, d_ref)?;

        let (vlo_step, vhi_step) = bnn::diagonal_box_image(
            &model.arch.psi,
            model.theta_psi(),
            u_lower,
            u_upper,
            d_ref,
        )?;
        let mut v_lower = Vec::with_capacity(horizon * dims.n_u);
        let mut v_upper = Vec::with_capacity(horizon * dims.n_u);
        for _ in 0..horizon {
            v_lower.extend_from_slice(&vlo_step);
            v_upper.extend_from_slice(&vhi_step);
        }

        let mut base_x = stacked.a_bar.matvec(x0);
        for (b, c) in base_x.iter_mut().zip(&stacked.c_bar) {
            *b += c;
        }

        // 2 Bbar^T (I (x) Q0) Bbar
        let n_y = dims.n_y;
        let mut qb = Matrix::zeros(horizon * n_y, stacked.b_bar.cols());
        for blk in 0..horizon {
            let rows = stacked.b_bar.block(blk * n_y, 0, n_y, stacked.b_bar.cols());
            let q_rows = q0.matmul(&rows);
            qb.set_block(blk * n_y, 0, &q_rows);
        }
        let h_quad = stacked.b_bar.transpose().matmul(&qb).scale(2.0).symmetrize();

        Ok(OcpInstance {
            model,
            disc,
            stacked,
            horizon,
            x0: x0.to_vec(),
            d_ref: d_ref.to_vec(),
            r_ref: r_ref.to_vec(),
            x_target,
            q0,
            fz,
            z_mode,
            v_lower,
            v_upper,
            fu,
            stats: EvalStats::default(),
            base_x,
            h_quad,
        })
    }

    pub fn n_v(&self) -> usize {
        self.horizon * self.model.arch.dims.n_u
    }

    /// Stacked state for a given V: `base + Bbar V`.
    pub fn stacked_state(&self, v: &[f64]) -> Vec<f64> {
        let mut x = self.stacked.b_bar.matvec(v);
        for (xi, b) in x.iter_mut().zip(&self.base_x) {
            *xi += b;
        }
        x
    }

    /// State entering stage `k` (`x0` for stage 0, stacked block otherwise).
    fn stage_state<'a>(&'a self, x_stacked: &'a [f64], k: usize) -> &'a [f64] {
        let n_y = self.model.arch.dims.n_y;
        if k == 0 {
            &self.x0
        } else {
            &x_stacked[(k - 1) * n_y..k * n_y]
        }
    }

    fn penalty_active(&self) -> bool {
        self.z_mode == ZConstraintMode::Soft && self.fz.weights.iter().any(|w| *w > 0.0)
    }

    /// Objective value and gradient in V. The constraint network is evaluated
    /// exactly once per stage on `(x_k, v_k)` drawn from the affine stacked
    /// state; stages never consume each other's network outputs, so the
    /// gradient costs one substitution per stage regardless of the horizon.
    pub fn objective(&self, v: &[f64]) -> Result<(f64, Vec<f64>)> {
        let dims = self.model.arch.dims;
        let (n_y, n_u) = (dims.n_y, dims.n_u);
        let n = self.horizon;
        debug_assert_eq!(v.len(), n * n_u);
        self.stats.objective_calls.set(self.stats.objective_calls.get() + 1);

        let x = self.stacked_state(v);

        // quadratic tracking term
        let mut f = 0.0;
        let mut qe = vec![0.0; n * n_y];
        for k in 0..n {
            let e: Vec<f64> =
                (0..n_y).map(|i| x[k * n_y + i] - self.x_target[i]).collect();
            let q_e = self.q0.matvec(&e);
            f += linalg::dot(&e, &q_e);
            qe[k * n_y..(k + 1) * n_y].copy_from_slice(&q_e);
        }
        let mut grad = self.stacked.b_bar.matvec_t(&qe);
        for g in &mut grad {
            *g *= 2.0;
        }

        // soft ceiling penalty, stage-separable
        if self.penalty_active() {
            let mut gx_stacked = vec![0.0; n * n_y];
            for k in 0..n {
                let xk = self.stage_state(&x, k);
                let vk = &v[k * n_u..(k + 1) * n_u];
                let input = crate::shw::xi_input(&self.model.arch, xk, vk);
                let z = picnn::forward(&self.model.arch.xi, self.model.theta_xi(), &input, &self.d_ref)?;
                self.stats.picnn_forward.set(self.stats.picnn_forward.get() + 1);
                let mut needs_grad = false;
                for j in 0..dims.n_z {
                    if self.fz.weights[j] > 0.0 && z[j] > self.fz.ceilings[j] {
                        needs_grad = true;
                    }
                }
                if !needs_grad {
                    continue;
                }
                let gxi = picnn::grad_xi(&self.model.arch.xi, self.model.theta_xi(), &input, &self.d_ref)?;
                self.stats.picnn_grad.set(self.stats.picnn_grad.get() + 1);
                let nx = self.model.arch.xi.xi_dim;
                for j in 0..dims.n_z {
                    let w = self.fz.weights[j];
                    if w <= 0.0 {
                        continue;
                    }
                    let s = z[j] - self.fz.ceilings[j];
                    if s <= 0.0 {
                        continue;
                    }
                    f += w * s * s * s;
                    let dp = 3.0 * w * s * s;
                    // x part flows through Bbar (stage 0 state is constant)
                    if k > 0 {
                        for i in 0..n_y {
                            gx_stacked[(k - 1) * n_y + i] += dp * gxi[j * nx + i];
                        }
                    }
                    if self.model.arch.xi_depends_on_v {
                        for i in 0..n_u {
                            grad[k * n_u + i] += dp * gxi[j * nx + n_y + i];
                        }
                    }
                }
            }
            let gv = self.stacked.b_bar.matvec_t(&gx_stacked);
            for (g, extra) in grad.iter_mut().zip(&gv) {
                *g += extra;
            }
        }

        if let Some(fu) = &self.fu {
            f += fu.eval_grad(v, &mut grad);
        }
        Ok((f, grad))
    }

    /// Exact Hessian in V: the cached quadratic part plus per-stage penalty
    /// curvature `p'' gg^T + p' (d2 Xi)` projected through the affine map.
    pub fn hessian(&self, v: &[f64]) -> Result<Matrix> {
        let dims = self.model.arch.dims;
        let (n_y, n_u) = (dims.n_y, dims.n_u);
        let n = self.horizon;
        let nv = self.n_v();
        let mut h = self.h_quad.clone();

        if self.penalty_active() {
            let x = self.stacked_state(v);
            for k in 0..n {
                let xk = self.stage_state(&x, k);
                let vk = &v[k * n_u..(k + 1) * n_u];
                let input = crate::shw::xi_input(&self.model.arch, xk, vk);
                let z = picnn::forward(&self.model.arch.xi, self.model.theta_xi(), &input, &self.d_ref)?;
                let mut active = false;
                for j in 0..dims.n_z {
                    if self.fz.weights[j] > 0.0 && z[j] > self.fz.ceilings[j] {
                        active = true;
                    }
                }
                if !active {
                    continue;
                }
                let nx = self.model.arch.xi.xi_dim;
                let gxi = picnn::grad_xi(&self.model.arch.xi, self.model.theta_xi(), &input, &self.d_ref)?;
                let hxi = picnn::hess_xi(&self.model.arch.xi, self.model.theta_xi(), &input, &self.d_ref)?;

                // stage curvature in (x_k, v_k) coordinates
                let mut t = Matrix::zeros(nx, nx);
                for j in 0..dims.n_z {
                    let w = self.fz.weights[j];
                    if w <= 0.0 {
                        continue;
                    }
                    let s = z[j] - self.fz.ceilings[j];
                    if s <= 0.0 {
                        continue;
                    }
                    let dp = 3.0 * w * s * s;
                    let ddp = 6.0 * w * s;
                    for a in 0..nx {
                        for b in 0..nx {
                            t[(a, b)] += ddp * gxi[j * nx + a] * gxi[j * nx + b]
                                + dp * hxi[j][(a, b)];
                        }
                    }
                }

                // rows of the linear map (x_k, v_k) = M_k V + const
                let mut m_k = Matrix::zeros(nx, nv);
                if k > 0 {
                    for i in 0..n_y {
                        for c in 0..nv {
                            m_k[(i, c)] = self.stacked.b_bar[((k - 1) * n_y + i, c)];
                        }
                    }
                }
                if self.model.arch.xi_depends_on_v {
                    for i in 0..n_u {
                        m_k[(n_y + i, k * n_u + i)] = 1.0;
                    }
                }
                let tm = t.matmul(&m_k);
                let contribution = m_k.transpose().matmul(&tm);
                h.add_assign(&contribution);
            }
        }

        if let Some(fu) = &self.fu {
            fu.add_hessian(v, &mut h);
        }
        Ok(h.symmetrize())
    }

    /// Bound multipliers consistent with a candidate `(V, grad f)` pair:
    /// active coordinates absorb the gradient, inactive ones get zero.
    pub fn multipliers(&self, v: &[f64], grad: &[f64]) -> Vec<f64> {
        let nv = self.n_v();
        let mut lambda = vec![0.0; 2 * nv];
        for i in 0..nv {
            if v[i] >= self.v_upper[i] - 1e-12 {
                lambda[i] = math::max(0.0, -grad[i]);
            }
            if v[i] <= self.v_lower[i] + 1e-12 {
                lambda[nv + i] = math::max(0.0, grad[i]);
            }
        }
        lambda
    }

    /// Fischer-Burmeister residual of the KKT system at `(V, lambda)`:
    /// the stationarity rows `grad f + lambda_up - lambda_lo` followed by
    /// `phi(lambda, -g)` for the upper then lower bound constraints, where
    /// `phi(a, b) = a + b - sqrt(a^2 + b^2)`. Zero exactly at the unique
    /// global optimum.
    pub fn kkt_residual(&self, v: &[f64], lambda: &[f64]) -> Result<Vec<f64>> {
        let nv = self.n_v();
        if lambda.len() != 2 * nv {
            return Err(Error::dim("kkt_residual", "lambda must have 2 n n_u entries"));
        }
        let (_, grad) = self.objective(v)?;
        self.kkt_residual_with_grad(v, lambda, &grad)
    }

    fn kkt_residual_with_grad(
        &self,
        v: &[f64],
        lambda: &[f64],
        grad: &[f64],
    ) -> Result<Vec<f64>> {
        let nv = self.n_v();
        let mut f = Vec::with_capacity(3 * nv);
        for i in 0..nv {
            f.push(grad[i] + lambda[i] - lambda[nv + i]);
        }
        for i in 0..nv {
            f.push(fischer_burmeister(lambda[i], self.v_upper[i] - v[i]));
        }
        for i in 0..nv {
            f.push(fischer_burmeister(lambda[nv + i], v[i] - self.v_lower[i]));
        }
        Ok(f)
    }

    fn clip(&self, v: &mut [f64]) {
        for i in 0..v.len() {
            v[i] = math::clamp(v[i], self.v_lower[i], self.v_upper[i]);
        }
    }

    /// Solve from an initial guess. Projected Newton with Armijo line search;
    /// a Levenberg shift replaces the Newton system if its Cholesky fails.
    /// Convergence means the Fischer-Burmeister residual dropped to
    /// [`KKT_TOL`]; hitting the iteration cap is an error carrying the last
    /// residual, never a silent fallback.
    pub fn solve(&self, v_init: &[f64]) -> Result<OcpSolution> {
        match self.z_mode {
            ZConstraintMode::Soft => self.solve_soft(v_init),
            ZConstraintMode::Hard => self.solve_hard(v_init),
        }
    }

    fn solve_soft(&self, v_init: &[f64]) -> Result<OcpSolution> {
        let nv = self.n_v();
        if v_init.len() != nv {
            return Err(Error::dim("ocp::solve", "initial V dimension mismatch"));
        }
        let mut v = v_init.to_vec();
        self.clip(&mut v);
        let (mut fval, mut grad) = self.objective(&v)?;
        let mut residual = f64::INFINITY;
        for iter in 0..MAX_ITER {
            let lambda = self.multipliers(&v, &grad);
            let fb = self.kkt_residual_with_grad(&v, &lambda, &grad)?;
            residual = linalg::norm_inf_vec(&fb);
            if residual <= KKT_TOL {
                return self.finish(v, lambda, fval, residual, iter);
            }

            // free set: strictly inside, or at a bound with an inward gradient
            let eps = 1e-12;
            let free: Vec<usize> = (0..nv)
                .filter(|&i| {
                    let at_lo = v[i] <= self.v_lower[i] + eps;
                    let at_hi = v[i] >= self.v_upper[i] - eps;
                    !(at_lo && grad[i] > 0.0) && !(at_hi && grad[i] < 0.0)
                })
                .collect();

            let mut step = vec![0.0; nv];
            if !free.is_empty() {
                let h = self.hessian(&v)?;
                let hf = Matrix::from_fn(free.len(), free.len(), |a, b| h[(free[a], free[b])]);
                let gf: Vec<f64> = free.iter().map(|&i| -grad[i]).collect();
                let mut shift = 0.0;
                let df = loop {
                    let try_h = if shift == 0.0 {
                        hf.clone()
                    } else {
                        hf.add(&Matrix::identity(free.len()).scale(shift))
                    };
                    match cholesky(&try_h) {
                        Ok(l) => break cholesky_solve(&l, &gf),
                        Err(_) => {
                            shift = if shift == 0.0 { 1e-10 } else { shift * 100.0 };
                            if shift > 1e6 {
                                return Err(Error::NonConvergence {
                                    context: "ocp::solve (hessian factorization)",
                                    iterations: iter,
                                    residual,
                                });
                            }
                        }
                    }
                };
                for (slot, &i) in free.iter().enumerate() {
                    step[i] = df[slot];
                }
            } else {
                for i in 0..nv {
                    step[i] = -grad[i];
                }
            }

            // projected Armijo backtracking
            let mut t = 1.0;
            let c1 = 1e-4;
            let mut accepted = false;
            while t >= 1e-14 {
                let mut v_new: Vec<f64> = v.iter().zip(&step).map(|(a, s)| a + t * s).collect();
                self.clip(&mut v_new);
                let dv: Vec<f64> = v_new.iter().zip(&v).map(|(a, b)| a - b).collect();
                let pred = linalg::dot(&grad, &dv);
                if pred >= 0.0 {
                    break;
                }
                let (f_new, g_new) = self.objective(&v_new)?;
                if f_new <= fval + c1 * pred {
                    v = v_new;
                    fval = f_new;
                    grad = g_new;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                // either the projected direction vanished (converged onto the
                // active set) or the model is locally flat; re-check the
                // certificate on the next pass with a gradient step
                let mut v_new: Vec<f64> =
                    v.iter().zip(&grad).map(|(a, g)| a - 1e-8 * g).collect();
                self.clip(&mut v_new);
                if v_new == v {
                    let lambda = self.multipliers(&v, &grad);
                    let fb = self.kkt_residual_with_grad(&v, &lambda, &grad)?;
                    residual = linalg::norm_inf_vec(&fb);
                    if residual <= KKT_TOL {
                        return self.finish(v, lambda, fval, residual, iter);
                    }
                    return Err(Error::NonConvergence {
                        context: "ocp::solve (line search)",
                        iterations: iter,
                        residual,
                    });
                }
                let (f_new, g_new) = self.objective(&v_new)?;
                v = v_new;
                fval = f_new;
                grad = g_new;
            }
        }
        Err(Error::NonConvergence { context: "ocp::solve", iterations: MAX_ITER, residual })
    }

    /// Hard ceiling mode: sequential quadratic programming on the convex
    /// program with the constraint outputs linearized per stage; the
    /// quadratic tracking part is exact in every subproblem.
    fn solve_hard(&self, v_init: &[f64]) -> Result<OcpSolution> {
        let dims = self.model.arch.dims;
        let (n_y, n_u) = (dims.n_y, dims.n_u);
        let n = self.horizon;
        let nv = self.n_v();
        let mut v = v_init.to_vec();
        self.clip(&mut v);

        for iter in 0..MAX_ITER {
            let x = self.stacked_state(&v);
            // gradient of the hard-mode objective (no penalty term)
            let mut qe = vec![0.0; n * n_y];
            for k in 0..n {
                let e: Vec<f64> =
                    (0..n_y).map(|i| x[k * n_y + i] - self.x_target[i]).collect();
                let q_e = self.q0.matvec(&e);
                qe[k * n_y..(k + 1) * n_y].copy_from_slice(&q_e);
            }
            let mut grad = self.stacked.b_bar.matvec_t(&qe);
            for g in &mut grad {
                *g *= 2.0;
            }
            if let Some(fu) = &self.fu {
                let _ = fu.eval_grad(&v, &mut grad);
            }

            // linearized ceiling rows: z_jk + g^T (V' - V) <= ceiling
            let mut rows: Vec<Vec<f64>> = Vec::new();
            let mut rhs: Vec<f64> = Vec::new();
            let mut max_violation: f64 = 0.0;
            for k in 0..n {
                let xk = self.stage_state(&x, k);
                let vk = &v[k * n_u..(k + 1) * n_u];
                let input = crate::shw::xi_input(&self.model.arch, xk, vk);
                let z = picnn::forward(&self.model.arch.xi, self.model.theta_xi(), &input, &self.d_ref)?;
                let gxi = picnn::grad_xi(&self.model.arch.xi, self.model.theta_xi(), &input, &self.d_ref)?;
                let nx = self.model.arch.xi.xi_dim;
                for j in 0..dims.n_z {
                    if !self.fz.ceilings[j].is_finite() {
                        continue;
                    }
                    max_violation = math::max(max_violation, z[j] - self.fz.ceilings[j]);
                    // gradient of z_jk in V
                    let mut row = vec![0.0; nv];
                    if k > 0 {
                        for i in 0..n_y {
                            let gi = gxi[j * nx + i];
                            if gi != 0.0 {
                                for c in 0..nv {
                                    row[c] += gi * self.stacked.b_bar[((k - 1) * n_y + i, c)];
                                }
                            }
                        }
                    }
                    if self.model.arch.xi_depends_on_v {
                        for i in 0..n_u {
                            row[k * n_u + i] += gxi[j * nx + n_y + i];
                        }
                    }
                    let row_dot_v = linalg::dot(&row, &v);
                    rows.push(row);
                    rhs.push(self.fz.ceilings[j] - z[j] + row_dot_v);
                }
            }

            let h = {
                // quadratic + fu curvature only
                let mut h = self.h_quad.clone();
                if let Some(fu) = &self.fu {
                    fu.add_hessian(&v, &mut h);
                }
                h.symmetrize()
            };
            // QP in absolute coordinates: min 1/2 (V')^T H V' + (grad - H V)^T V'
            let hv = h.matvec(&v);
            let lin: Vec<f64> = grad.iter().zip(&hv).map(|(g, p)| g - p).collect();
            let g_mat = if rows.is_empty() {
                None
            } else {
                let m = rows.len();
                let mut gm = Matrix::zeros(m, nv);
                for (r, row) in rows.iter().enumerate() {
                    for c in 0..nv {
                        gm[(r, c)] = row[c];
                    }
                }
                Some((gm, rhs.clone()))
            };
            let sol = linalg::solve_box_qp_with_ineq(
                &h,
                &lin,
                &self.v_lower,
                &self.v_upper,
                g_mat.as_ref().map(|(g, r)| (g, r.as_slice())),
            )?;

            let step: Vec<f64> = sol.x.iter().zip(&v).map(|(a, b)| a - b).collect();
            let step_norm = linalg::norm_inf_vec(&step);
            // accept with backtracking on tracking cost + violation penalty
            let merit = |vv: &[f64]| -> Result<f64> {
                let xx = self.stacked_state(vv);
                let mut m = 0.0;
                for k in 0..n {
                    let e: Vec<f64> =
                        (0..n_y).map(|i| xx[k * n_y + i] - self.x_target[i]).collect();
                    m += linalg::dot(&e, &self.q0.matvec(&e));
                }
                for k in 0..n {
                    let xk = self.stage_state(&xx, k);
                    let vk = &vv[k * n_u..(k + 1) * n_u];
                    let input = crate::shw::xi_input(&self.model.arch, xk, vk);
                    let z = picnn::forward(&self.model.arch.xi, self.model.theta_xi(), &input, &self.d_ref)?;
                    for j in 0..dims.n_z {
                        if self.fz.ceilings[j].is_finite() {
                            m += 1e4 * math::max(0.0, z[j] - self.fz.ceilings[j]);
                        }
                    }
                }
                Ok(m)
            };
            let m0 = merit(&v)?;
            let mut t = 1.0;
            let mut moved = false;
            while t >= 1e-10 {
                let cand: Vec<f64> = v.iter().zip(&step).map(|(a, s)| a + t * s).collect();
                if merit(&cand)? <= m0 + 1e-12 {
                    v = cand;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if step_norm <= 1e-10 && max_violation <= KKT_TOL {
                let (fv, gr) = {
                    let mut qe = vec![0.0; n * n_y];
                    let xx = self.stacked_state(&v);
                    let mut fv = 0.0;
                    for k in 0..n {
                        let e: Vec<f64> =
                            (0..n_y).map(|i| xx[k * n_y + i] - self.x_target[i]).collect();
                        let q_e = self.q0.matvec(&e);
                        fv += linalg::dot(&e, &q_e);
                        qe[k * n_y..(k + 1) * n_y].copy_from_slice(&q_e);
                    }
                    let mut gr = self.stacked.b_bar.matvec_t(&qe);
                    for g in &mut gr {
                        *g *= 2.0;
                    }
                    if let Some(fu) = &self.fu {
                        fv += fu.eval_grad(&v, &mut gr);
                    }
                    (fv, gr)
                };
                let lambda = self.multipliers(&v, &gr);
                return self.finish(v, lambda, fv, sol.kkt_residual, iter);
            }
            if !moved {
                return Err(Error::NonConvergence {
                    context: "ocp::solve (hard mode line search)",
                    iterations: iter,
                    residual: step_norm,
                });
            }
        }
        Err(Error::NonConvergence { context: "ocp::solve (hard mode)", iterations: MAX_ITER, residual: f64::NAN })
    }

    fn finish(
        &self,
        v: Vec<f64>,
        lambda: Vec<f64>,
        objective: f64,
        residual: f64,
        iterations: usize,
    ) -> Result<OcpSolution> {
        let dims = self.model.arch.dims;
        let n_u = dims.n_u;
        let mut u_star = Vec::with_capacity(v.len());
        for k in 0..self.horizon {
            let vk = &v[k * n_u..(k + 1) * n_u];
            let uk = self.model.input_map_inv(vk, &self.d_ref)?;
            u_star.extend_from_slice(&uk);
        }
        Ok(OcpSolution {
            v_star: v,
            u_star,
            lambda,
            objective,
            kkt_residual_inf: residual,
            iterations,
        })
    }

    /// First-step input of a solution: `Psi^-1(v*_0; d)`.
    pub fn first_input(&self, sol: &OcpSolution) -> Vec<f64> {
        sol.u_star[..self.model.arch.dims.n_u].to_vec()
    }
}

/// `phi(a, b) = a + b - sqrt(a^2 + b^2)`; zero exactly on the complementarity
/// set `a >= 0, b >= 0, a b = 0`.
pub fn fischer_burmeister(a: f64, b: f64) -> f64 {
    a + b - math::hypot(a, b)
}

/// Optimizer output with its optimality certificate.
#[derive(Clone, Debug)]
pub struct OcpSolution {
    pub v_star: Vec<f64>,
    pub u_star: Vec<f64>,
    /// Bound multipliers, `[upper (n nv); lower (n nv)]`.
    pub lambda: Vec<f64>,
    pub objective: f64,
    pub kkt_residual_inf: f64,
    pub iterations: usize,
}

/// Sweep of the control law over a grid of initial outputs, solved from
/// several initial guesses per point; records per-point multi-start
/// disagreement and adjacent difference quotients.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub grid_value: f64,
    pub init_id: usize,
    pub u_first: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct SweepTable {
    pub grid: Vec<f64>,
    pub rows: Vec<SweepRow>,
    /// Per grid point: max over init pairs of the first-input disagreement
    /// (infinity norm).
    pub disagreement: Vec<f64>,
    /// Per adjacent grid interval: `|delta u| / |delta y0|` using the first
    /// initialization's solution.
    pub diff_quotient: Vec<f64>,
}

/// Sweep configuration: vary one output coordinate around a base point.
#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub coord: usize,
    pub y_base: Vec<f64>,
    pub values: Vec<f64>,
}

/// Solve one grid point of a sweep from every initial guess. Solver errors
/// become rows with the message recorded; they never abort the sweep.
#[allow(clippy::too_many_arguments)]
pub fn sweep_point(
    model: &ShwModel,
    d_ref: &[f64],
    r_ref: &[f64],
    sweep: &SweepConfig,
    grid_value: f64,
    v_inits: &[Vec<f64>],
    horizon: usize,
    fz: &FzSpec,
    u_lower: &[f64],
    u_upper: &[f64],
) -> Result<Vec<SweepRow>> {
    let n_u = model.arch.dims.n_u;
    let mut y0 = sweep.y_base.clone();
    y0[sweep.coord] = grid_value;
    let x0 = model.output_map(&y0, d_ref)?;
    let inst = OcpInstance::new(
        model,
        &x0,
        d_ref,
        r_ref,
        horizon,
        fz.clone(),
        u_lower,
        u_upper,
        ZConstraintMode::Soft,
        None,
    )?;
    let mut rows = Vec::with_capacity(v_inits.len());
    for (init_id, vi) in v_inits.iter().enumerate() {
        match inst.solve(vi) {
            Ok(sol) => {
                rows.push(SweepRow {
                    grid_value,
                    init_id,
                    u_first: inst.first_input(&sol),
                    objective: sol.objective,
                    kkt_residual: sol.kkt_residual_inf,
                    iterations: sol.iterations,
                    error: None,
                });
            }
            Err(e) => {
                rows.push(SweepRow {
                    grid_value,
                    init_id,
                    u_first: vec![f64::NAN; n_u],
                    objective: f64::NAN,
                    kkt_residual: f64::NAN,
                    iterations: 0,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    Ok(rows)
}

/// Combine per-point rows (in grid order) into the sweep table with its
/// disagreement and difference-quotient summaries.
pub fn assemble_sweep(grid: &[f64], n_u: usize, points: Vec<Vec<SweepRow>>) -> SweepTable {
    let mut rows = Vec::new();
    let mut disagreement = Vec::with_capacity(points.len());
    let mut first_us: Vec<Option<Vec<f64>>> = Vec::with_capacity(points.len());
    for here in points {
        let oks: Vec<Option<Vec<f64>>> = here
            .iter()
            .map(|r| if r.error.is_none() { Some(r.u_first.clone()) } else { None })
            .collect();
        let mut dis: f64 = 0.0;
        let mut any_err = false;
        for a in 0..oks.len() {
            for b in a + 1..oks.len() {
                match (&oks[a], &oks[b]) {
                    (Some(ua), Some(ub)) => {
                        for i in 0..n_u {
                            dis = math::max(dis, math::abs(ua[i] - ub[i]));
                        }
                    }
                    _ => any_err = true,
                }
            }
        }
        disagreement.push(if any_err { f64::NAN } else { dis });
        first_us.push(oks.into_iter().next().flatten());
        rows.extend(here);
    }

    let mut diff_quotient = Vec::with_capacity(grid.len().saturating_sub(1));
    for i in 0..grid.len().saturating_sub(1) {
        let q = match (&first_us[i], &first_us[i + 1]) {
            (Some(a), Some(b)) => {
                let mut du: f64 = 0.0;
                for j in 0..n_u {
                    du = math::max(du, math::abs(b[j] - a[j]));
                }
                du / math::abs(grid[i + 1] - grid[i])
            }
            _ => f64::NAN,
        };
        diff_quotient.push(q);
    }
    SweepTable { grid: grid.to_vec(), rows, disagreement, diff_quotient }
}

#[allow(clippy::too_many_arguments)]
pub fn control_law_sweep(
    model: &ShwModel,
    d_ref: &[f64],
    r_ref: &[f64],
    sweep: &SweepConfig,
    v_inits: &[Vec<f64>],
    horizon: usize,
    fz: &FzSpec,
    u_lower: &[f64],
    u_upper: &[f64],
) -> Result<SweepTable> {
    if sweep.values.is_empty() || v_inits.is_empty() {
        return Err(Error::precondition("control_law_sweep", "empty grid or init list"));
    }
    if sweep.coord >= model.arch.dims.n_y {
        return Err(Error::dim("control_law_sweep", "sweep coordinate out of range"));
    }
    let mut points = Vec::with_capacity(sweep.values.len());
    for &gv in &sweep.values {
        points.push(sweep_point(
            model, d_ref, r_ref, sweep, gv, v_inits, horizon, fz, u_lower, u_upper,
        )?);
    }
    Ok(assemble_sweep(&sweep.values, model.arch.dims.n_u, points))
}

/// Stack a per-step transformed-input guess from a constant u-space input.
pub fn v_init_from_u(model: &ShwModel, u_step: &[f64], d_ref: &[f64], horizon: usize) -> Result<Vec<f64>> {
    let v = model.input_map(u_step, d_ref)?;
    let mut out = Vec::with_capacity(horizon * v.len());
    for _ in 0..horizon {
        out.extend_from_slice(&v);
    }
    Ok(out)
}

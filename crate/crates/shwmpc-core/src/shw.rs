//! The assembled structured Hammerstein-Wiener model: diagonal bijective
//! input map `Psi`, bijective output map `Phi`, convex constraint output
//! `Xi` and disturbance-scheduled linear dynamics `(A, B, c)(d)`, with
//! continuous evaluation, the eliminated-state prediction residual and exact
//! zero-order-hold discretization.

use alloc::vec;
use alloc::vec::Vec;

use crate::bnn::{self, BnnArch, BnnVariant};
use crate::dense::DenseNet;
use crate::linalg::{self, Matrix};
use crate::math;
use crate::picnn::{self, PicnnArch};
use crate::real::Real;
use crate::rng::Rng;
use crate::{Error, Result, SignalDims};

/// Architecture of the full model. The constraint network takes
/// `concat(x, v)` as its convex block, or `x` alone when
/// `xi_depends_on_v` is false (the form required by the barrier-function
/// controller, enforced structurally rather than assumed).
#[derive(Clone, Debug, PartialEq)]
pub struct ShwArch {
    pub dims: SignalDims,
    pub delta: f64,
    pub psi: BnnArch,
    pub phi: BnnArch,
    pub xi: PicnnArch,
    pub dyn_hidden: Vec<usize>,
    pub xi_depends_on_v: bool,
}

impl ShwArch {
    /// Default sizing: depth-2 bijective maps with one hidden conditioning
    /// layer of 16, depth-2 constraint network, width-16 dynamics networks.
    pub fn default_for(dims: SignalDims, delta: f64) -> Result<Self> {
        Self::sized(dims, delta, 2, &[16], &[16], &[16], &[16], true)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn sized(
        dims: SignalDims,
        delta: f64,
        bnn_depth: usize,
        cond_hidden: &[usize],
        picnn_z_hidden: &[usize],
        picnn_eta_hidden: &[usize],
        dyn_hidden: &[usize],
        xi_depends_on_v: bool,
    ) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::precondition("ShwArch", "delta must be positive"));
        }
        let psi = BnnArch::new(dims.n_u, dims.n_d, bnn_depth, cond_hidden, BnnVariant::Diagonal);
        let phi = BnnArch::new(dims.n_y, dims.n_d, bnn_depth, cond_hidden, BnnVariant::General);
        let xi_input = if xi_depends_on_v { dims.n_y + dims.n_u } else { dims.n_y };
        let xi = PicnnArch::new(xi_input, dims.n_d, dims.n_z, picnn_z_hidden, picnn_eta_hidden)?;
        Ok(ShwArch {
            dims,
            delta,
            psi,
            phi,
            xi,
            dyn_hidden: dyn_hidden.to_vec(),
            xi_depends_on_v,
        })
    }

    pub fn a_net(&self) -> DenseNet {
        DenseNet::new(self.dims.n_d, &self.dyn_hidden, self.dims.n_y * self.dims.n_y)
    }

    pub fn b_net(&self) -> DenseNet {
        DenseNet::new(self.dims.n_d, &self.dyn_hidden, self.dims.n_y * self.dims.n_u)
    }

    pub fn c_net(&self) -> DenseNet {
        DenseNet::new(self.dims.n_d, &self.dyn_hidden, self.dims.n_y)
    }

    pub fn param_count(&self) -> usize {
        self.slices().total
    }

    pub fn slices(&self) -> ThetaSlices {
        let n_psi = self.psi.param_count();
        let n_phi = self.phi.param_count();
        let n_xi = self.xi.param_count();
        let n_a = self.a_net().param_count();
        let n_b = self.b_net().param_count();
        let n_c = self.c_net().param_count();
        let psi = 0..n_psi;
        let phi = psi.end..psi.end + n_phi;
        let xi = phi.end..phi.end + n_xi;
        let a = xi.end..xi.end + n_a;
        let b = a.end..a.end + n_b;
        let c = b.end..b.end + n_c;
        ThetaSlices { total: c.end, psi, phi, xi, a, b, c }
    }
}

/// Index ranges of each component inside the flat parameter vector
/// `[theta_Psi, theta_Phi, theta_Xi, theta_A, theta_B, theta_c]`.
#[derive(Clone, Debug)]
pub struct ThetaSlices {
    pub total: usize,
    pub psi: core::ops::Range<usize>,
    pub phi: core::ops::Range<usize>,
    pub xi: core::ops::Range<usize>,
    pub a: core::ops::Range<usize>,
    pub b: core::ops::Range<usize>,
    pub c: core::ops::Range<usize>,
}

/// The assembled model: architecture plus one flat parameter vector.
#[derive(Clone, Debug)]
pub struct ShwModel {
    pub arch: ShwArch,
    pub theta: Vec<f64>,
}

/// Exact discretization of the scheduled dynamics at a frozen disturbance.
#[derive(Clone, Debug)]
pub struct DiscreteModel {
    pub a_d: Matrix,
    pub b_d: Matrix,
    pub c_d: Vec<f64>,
    pub d_ref: Vec<f64>,
    pub delta: f64,
}

/// Rollout of [`simulate_discrete`]: states include the initial one, the
/// constraint output is defined per applied input.
#[derive(Clone, Debug)]
pub struct DiscreteTrajectory {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
}

impl ShwModel {
    /// Identity-like initialization: `Psi`, `Phi` start at the identity map,
    /// `A(d)` near `-I` (stable), `B(d)` near `I` (nonsingular), small random
    /// conditioning weights everywhere (std `std`).
    pub fn init(arch: ShwArch, rng: &mut Rng, std: f64) -> Self {
        let slices = arch.slices();
        let mut theta = vec![0.0; slices.total];
        theta[slices.psi.clone()].copy_from_slice(&arch.psi.init(rng, std));
        theta[slices.phi.clone()].copy_from_slice(&arch.phi.init(rng, std));
        theta[slices.xi.clone()].copy_from_slice(&arch.xi.init(rng, std));

        let n_y = arch.dims.n_y;
        let mut a_theta = Vec::new();
        arch.a_net().init(rng, std, &mut a_theta);
        let a_bias = arch.a_net().final_bias_offset();
        for i in 0..n_y {
            a_theta[a_bias + i * n_y + i] = -1.0;
        }
        theta[slices.a.clone()].copy_from_slice(&a_theta);

        let mut b_theta = Vec::new();
        arch.b_net().init(rng, std, &mut b_theta);
        let b_bias = arch.b_net().final_bias_offset();
        for i in 0..arch.dims.n_u {
            b_theta[b_bias + i * arch.dims.n_u + i] = 1.0;
        }
        theta[slices.b.clone()].copy_from_slice(&b_theta);

        let mut c_theta = Vec::new();
        arch.c_net().init(rng, std, &mut c_theta);
        theta[slices.c.clone()].copy_from_slice(&c_theta);

        ShwModel { arch, theta }
    }

    /// Identity configuration: `Psi`, `Phi` are the identity map, the
    /// constraint network is at its zero-weight constant, and the dynamics
    /// are `xdot = v` (A = 0, B = I, c = 0). Useful for linear-quadratic
    /// reductions and as a base for hand-built fixtures.
    pub fn identity_maps(arch: ShwArch) -> Self {
        let slices = arch.slices();
        let mut theta = vec![0.0; slices.total];
        theta[slices.psi.clone()].copy_from_slice(&arch.psi.identity_params());
        theta[slices.phi.clone()].copy_from_slice(&arch.phi.identity_params());
        theta[slices.xi.clone()].copy_from_slice(&arch.xi.zero_weight_params());
        let b_bias = arch.b_net().final_bias_offset();
        let b_start = slices.b.start;
        for i in 0..arch.dims.n_u {
            theta[b_start + b_bias + i * arch.dims.n_u + i] = 1.0;
        }
        ShwModel { arch, theta }
    }

    /// Overwrite the dynamics-network output biases so that at d = 0 the
    /// scheduled matrices equal the given `(A, B, c)` exactly.
    pub fn set_dynamics_bias(&mut self, a: &Matrix, b: &Matrix, c: &[f64]) {
        let slices = self.arch.slices();
        let n_y = self.arch.dims.n_y;
        let n_u = self.arch.dims.n_u;
        let a_off = slices.a.start + self.arch.a_net().final_bias_offset();
        for i in 0..n_y {
            for j in 0..n_y {
                self.theta[a_off + i * n_y + j] = a[(i, j)];
            }
        }
        let b_off = slices.b.start + self.arch.b_net().final_bias_offset();
        for i in 0..n_y {
            for j in 0..n_u {
                self.theta[b_off + i * n_u + j] = b[(i, j)];
            }
        }
        let c_off = slices.c.start + self.arch.c_net().final_bias_offset();
        for (j, &cj) in c.iter().enumerate() {
            self.theta[c_off + j] = cj;
        }
    }

    pub fn theta_psi(&self) -> &[f64] {
        &self.theta[self.arch.slices().psi]
    }

    pub fn theta_phi(&self) -> &[f64] {
        &self.theta[self.arch.slices().phi]
    }

    pub fn theta_xi(&self) -> &[f64] {
        &self.theta[self.arch.slices().xi]
    }

    /// Scheduled dynamics matrices at a disturbance value.
    pub fn dynamics(&self, d: &[f64]) -> Result<(Matrix, Matrix, Vec<f64>)> {
        let (a, b, c) = dynamics_generic(&self.arch, &self.theta, d)?;
        let n_y = self.arch.dims.n_y;
        Ok((
            Matrix::from_vec(n_y, n_y, a)?,
            Matrix::from_vec(n_y, self.arch.dims.n_u, b)?,
            c,
        ))
    }

    /// `v = Psi(u; d)`, `y = Phi^-1(x; d)`, `z = Xi(x, v; d)`.
    pub fn eval_outputs(
        &self,
        x: &[f64],
        u: &[f64],
        d: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let v = bnn::forward(&self.arch.psi, self.theta_psi(), u, d)?;
        let y = bnn::inverse(&self.arch.phi, self.theta_phi(), x, d)?;
        let z = self.constraint_output(x, &v, d)?;
        Ok((v, y, z))
    }

    /// `Xi` applied to the state (and transformed input, when the
    /// architecture keeps the v path).
    pub fn constraint_output(&self, x: &[f64], v: &[f64], d: &[f64]) -> Result<Vec<f64>> {
        let input = xi_input(&self.arch, x, v);
        picnn::forward(&self.arch.xi, self.theta_xi(), &input, d)
    }

    /// Transformed input `v = Psi(u; d)`.
    pub fn input_map(&self, u: &[f64], d: &[f64]) -> Result<Vec<f64>> {
        bnn::forward(&self.arch.psi, self.theta_psi(), u, d)
    }

    /// Recover `u = Psi^-1(v; d)`.
    pub fn input_map_inv(&self, v: &[f64], d: &[f64]) -> Result<Vec<f64>> {
        bnn::inverse(&self.arch.psi, self.theta_psi(), v, d)
    }

    /// `x = Phi(y; d)`.
    pub fn output_map(&self, y: &[f64], d: &[f64]) -> Result<Vec<f64>> {
        bnn::forward(&self.arch.phi, self.theta_phi(), y, d)
    }

    /// `y = Phi^-1(x; d)`.
    pub fn output_map_inv(&self, x: &[f64], d: &[f64]) -> Result<Vec<f64>> {
        bnn::inverse(&self.arch.phi, self.theta_phi(), x, d)
    }

    /// Continuous-time state derivative `A(d) x + B(d) v + c(d)`.
    pub fn xdot(&self, x: &[f64], v: &[f64], d: &[f64]) -> Result<Vec<f64>> {
        let (a, b, c) = self.dynamics(d)?;
        let mut out = a.matvec(x);
        let bv = b.matvec(v);
        for i in 0..out.len() {
            out[i] += bv[i] + c[i];
        }
        Ok(out)
    }

    /// Eliminated-state prediction residual at one data point (f64 path).
    pub fn residual(
        &self,
        u: &[f64],
        d: &[f64],
        y: &[f64],
        z: &[f64],
        ydot: &[f64],
        ddot: &[f64],
    ) -> Result<Vec<f64>> {
        let inp = ResidualInput { u, d, y, z, ydot, ddot };
        residual_generic(&self.arch, &self.theta, &inp).map(|r| r.residual)
    }

    /// Exact ZOH discretization at a frozen disturbance, with the
    /// nonsingularity check on `B_d` required by the convex OCP.
    pub fn discretize(&self, d_bar: &[f64]) -> Result<DiscreteModel> {
        let (a, b, c) = self.dynamics(d_bar)?;
        let (a_d, b_d, c_d) = linalg::discretize_pair(&a, &b, &c, self.arch.delta)?;
        let det = b_d.det()?;
        let n = self.arch.dims.n_u;
        let scale = math::max(b_d.norm_fro() / math::sqrt(n as f64), 1e-6);
        let mut threshold = 1e-10;
        for _ in 0..n {
            threshold *= scale;
        }
        if math::abs(det) <= math::abs(threshold) {
            return Err(Error::ModelUnsuitableForOcp { det });
        }
        Ok(DiscreteModel { a_d, b_d, c_d, d_ref: d_bar.to_vec(), delta: self.arch.delta })
    }
}

/// PICNN convex-block input: `concat(x, v)` or `x` alone.
pub fn xi_input<T: Copy>(arch: &ShwArch, x: &[T], v: &[T]) -> Vec<T> {
    if arch.xi_depends_on_v {
        let mut input = Vec::with_capacity(x.len() + v.len());
        input.extend_from_slice(x);
        input.extend_from_slice(v);
        input
    } else {
        x.to_vec()
    }
}

/// Scheduled dynamics entries `(A, B, c)` flattened row-major, generic over
/// the scalar type.
pub fn dynamics_generic<T: Real>(
    arch: &ShwArch,
    theta: &[T],
    d: &[T],
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    if d.len() != arch.dims.n_d {
        return Err(Error::dim("shw::dynamics", "disturbance dimension mismatch"));
    }
    let slices = arch.slices();
    if theta.len() != slices.total {
        return Err(Error::dim("shw::dynamics", "parameter count mismatch"));
    }
    let a = arch.a_net().eval(&theta[slices.a.clone()], d);
    let b = arch.b_net().eval(&theta[slices.b.clone()], d);
    let c = arch.c_net().eval(&theta[slices.c.clone()], d);
    Ok((a, b, c))
}

/// One data point for the residual, already lifted to the scalar type.
pub struct ResidualInput<'a, T> {
    pub u: &'a [T],
    pub d: &'a [T],
    pub y: &'a [T],
    pub z: &'a [T],
    pub ydot: &'a [T],
    pub ddot: &'a [T],
}

pub struct ResidualOutput<T> {
    /// Stacked `(n_y + n_z)` prediction error.
    pub residual: Vec<T>,
    /// Determinant of `dPhi/dy` at this point (primal value), for the
    /// nonsingularity monitor.
    pub jac_det: f64,
}

/// The eliminated-state residual
///
/// ```text
/// e = [ ydot - (dPhi/dy)^-1 (A Phi + B Psi + c - (dPhi/dd) ddot) ;
///       z - Xi(Phi, Psi, d) ]
/// ```
///
/// written once over [`Real`], so the identification loss differentiates it
/// with tape variables while inference and tests use plain floats.
pub fn residual_generic<T: Real>(
    arch: &ShwArch,
    theta: &[T],
    inp: &ResidualInput<'_, T>,
) -> Result<ResidualOutput<T>> {
    let dims = arch.dims;
    if inp.u.len() != dims.n_u
        || inp.d.len() != dims.n_d
        || inp.y.len() != dims.n_y
        || inp.z.len() != dims.n_z
        || inp.ydot.len() != dims.n_y
        || inp.ddot.len() != dims.n_d
    {
        return Err(Error::dim("shw::residual", "record dimension mismatch"));
    }
    let slices = arch.slices();
    let th_psi = &theta[slices.psi.clone()];
    let th_phi = &theta[slices.phi.clone()];
    let th_xi = &theta[slices.xi.clone()];

    let v = bnn::forward(&arch.psi, th_psi, inp.u, inp.d)?;
    let (phi_y, jac) = bnn::forward_with_jacobian(&arch.phi, th_phi, inp.y, inp.d)?;
    let phi_d_dot = bnn::jvp_eta(&arch.phi, th_phi, inp.y, inp.d, inp.ddot)?;
    let (a, b, c) = dynamics_generic(arch, theta, inp.d)?;

    let n_y = dims.n_y;
    let mut rhs: Vec<T> = Vec::with_capacity(n_y);
    for i in 0..n_y {
        let mut acc = c[i] - phi_d_dot[i];
        for j in 0..n_y {
            acc = acc + a[i * n_y + j] * phi_y[j];
        }
        for j in 0..dims.n_u {
            acc = acc + b[i * dims.n_u + j] * v[j];
        }
        rhs.push(acc);
    }

    let mut jac_work = jac;
    let det = linalg::solve_generic(&mut jac_work, n_y, &mut rhs)?;
    if math::abs(det.val()) <= bnn::DET_GUARD {
        return Err(Error::IllConditioned {
            context: "shw::residual (dPhi/dy)",
            det: det.val(),
            record: None,
        });
    }

    let xi_in = xi_input(arch, &phi_y, &v);
    let z_hat = picnn::forward(&arch.xi, th_xi, &xi_in, inp.d)?;

    let mut residual = Vec::with_capacity(n_y + dims.n_z);
    for i in 0..n_y {
        residual.push(inp.ydot[i] - rhs[i]);
    }
    for k in 0..dims.n_z {
        residual.push(inp.z[k] - z_hat[k]);
    }
    Ok(ResidualOutput { residual, jac_det: det.val() })
}

/// Roll the discrete model forward under an input sequence.
pub fn simulate_discrete(
    dm: &DiscreteModel,
    model: &ShwModel,
    x0: &[f64],
    inputs: &[Vec<f64>],
    d_bar: &[f64],
) -> Result<DiscreteTrajectory> {
    if inputs.is_empty() {
        return Err(Error::precondition("simulate_discrete", "horizon must be at least 1"));
    }
    let mut x = x0.to_vec();
    let mut xs = vec![x.clone()];
    let mut ys = vec![model.output_map_inv(&x, d_bar)?];
    let mut zs = Vec::with_capacity(inputs.len());
    for u in inputs {
        let v = model.input_map(u, d_bar)?;
        zs.push(model.constraint_output(&x, &v, d_bar)?);
        let mut next = dm.a_d.matvec(&x);
        let bv = dm.b_d.matvec(&v);
        for i in 0..next.len() {
            next[i] += bv[i] + dm.c_d[i];
        }
        x = next;
        xs.push(x.clone());
        ys.push(model.output_map_inv(&x, d_bar)?);
    }
    Ok(DiscreteTrajectory { x: xs, y: ys, z: zs })
}

//! Comparison pipeline: a plain one-step-ahead network model
//! `[y_{k+1}; z_k] = W2 tanh(W1 [y_k; u_k; d_k] + b1) + b2` and the
//! receding-horizon problem built on it, solved by SQP with damped
//! Gauss-Newton Hessians and box-QP subproblems. The inner model is rolled
//! out over the horizon, so the problem is non-convex: SQP finds stationary
//! points that depend on the initial guess, which is exactly the behavior
//! the structured model removes.

use alloc::vec;
use alloc::vec::Vec;

use crate::dense::DenseNet;
use crate::ident::{Adam, TimeSeriesDataset};
use crate::linalg::{self, Matrix};
use crate::math;
use crate::real::{Dual, Real};
use crate::rng::Rng;
use crate::tape::Tape;
use crate::{Error, Result, SignalDims};

/// One-hidden-layer tanh network mapping `(y, u, d)` to `(y_next, z)`.
#[derive(Clone, Debug)]
pub struct DenseNnModel {
    pub dims: SignalDims,
    pub hidden: usize,
    pub theta: Vec<f64>,
}

impl DenseNnModel {
    pub fn net(dims: SignalDims, hidden: usize) -> DenseNet {
        DenseNet::new(dims.n_y + dims.n_u + dims.n_d, &[hidden], dims.n_y + dims.n_z)
    }

    pub fn init(dims: SignalDims, hidden: usize, rng: &mut Rng, std: f64) -> Self {
        let net = Self::net(dims, hidden);
        let mut theta = Vec::with_capacity(net.param_count());
        net.init(rng, std, &mut theta);
        DenseNnModel { dims, hidden, theta }
    }

    pub fn param_count(&self) -> usize {
        Self::net(self.dims, self.hidden).param_count()
    }

    /// Hidden width whose parameter count comes closest to `target`.
    pub fn hidden_for_param_target(dims: SignalDims, target: usize) -> usize {
        let mut best = (1usize, usize::MAX);
        for h in 1..=512 {
            let count = DenseNet::new(dims.n_y + dims.n_u + dims.n_d, &[h], dims.n_y + dims.n_z)
                .param_count();
            let gap = count.abs_diff(target);
            if gap < best.1 {
                best = (h, gap);
            }
        }
        best.0
    }

    pub fn predict(&self, y: &[f64], u: &[f64], d: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let out = self.eval(&self.theta, y, u, d);
        let (yn, z) = out.split_at(self.dims.n_y);
        (yn.to_vec(), z.to_vec())
    }

    fn eval<T: Real>(&self, theta: &[T], y: &[T], u: &[T], d: &[T]) -> Vec<T> {
        let mut input = Vec::with_capacity(y.len() + u.len() + d.len());
        input.extend_from_slice(y);
        input.extend_from_slice(u);
        input.extend_from_slice(d);
        Self::net(self.dims, self.hidden).eval(theta, &input)
    }
}

/// Fit configuration for the one-step regression.
#[derive(Clone, Debug)]
pub struct BaselineFitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub val_fraction: f64,
    pub init_std: f64,
}

impl Default for BaselineFitConfig {
    fn default() -> Self {
        BaselineFitConfig {
            epochs: 200,
            batch_size: 64,
            lr: 3e-3,
            seed: 1,
            val_fraction: 0.2,
            init_std: 0.3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BaselineReport {
    pub final_train_mse: f64,
    pub final_val_mse: f64,
    /// R^2 of the one-step y prediction per channel on the validation tail.
    pub r2_y: Vec<f64>,
    /// R^2 of the z prediction per channel.
    pub r2_z: Vec<f64>,
    pub param_count: usize,
    pub epochs: Vec<f64>,
}

struct Pairs {
    inputs: Vec<Vec<f64>>,  // (y, u, d)
    targets: Vec<Vec<f64>>, // (y_next, z)
}

fn make_pairs(data: &TimeSeriesDataset) -> Pairs {
    let recs = data.records();
    let mut inputs = Vec::with_capacity(recs.len().saturating_sub(1));
    let mut targets = Vec::with_capacity(recs.len().saturating_sub(1));
    for w in recs.windows(2) {
        let (cur, next) = (&w[0], &w[1]);
        let mut input = cur.y.clone();
        input.extend_from_slice(&cur.u);
        input.extend_from_slice(&cur.d);
        inputs.push(input);
        let mut target = next.y.clone();
        target.extend_from_slice(&cur.z);
        targets.push(target);
    }
    Pairs { inputs, targets }
}

fn mse(net: &DenseNet, theta: &[f64], pairs: &Pairs, range: core::ops::Range<usize>) -> f64 {
    let mut acc = 0.0;
    let mut count = 0.0;
    for i in range {
        let out = net.eval(theta, &pairs.inputs[i]);
        for (o, t) in out.iter().zip(&pairs.targets[i]) {
            acc += (o - t) * (o - t);
        }
        count += 1.0;
    }
    acc / count
}

/// One-step regression of the dense model on consecutive records.
pub fn baseline_fit(
    data: &TimeSeriesDataset,
    hidden: usize,
    cfg: &BaselineFitConfig,
) -> Result<(DenseNnModel, BaselineReport)> {
    if data.len() < 3 {
        return Err(Error::precondition("baseline_fit", "need at least 3 records"));
    }
    let dims = data.dims();
    let pairs = make_pairs(data);
    let n = pairs.inputs.len();
    let n_val = math::max(1.0, math::round(n as f64 * cfg.val_fraction)) as usize;
    let n_train = n - n_val.min(n - 1);

    let mut rng = Rng::new(cfg.seed);
    let mut model = DenseNnModel::init(dims, hidden, &mut rng, cfg.init_std);
    let net = DenseNnModel::net(dims, hidden);
    let mut adam = Adam::new(model.theta.len());
    let tape = Tape::new();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let progress = epoch as f64 / cfg.epochs as f64;
        let lr = cfg.lr * (0.05 + 0.95 * 0.5 * (1.0 + math::cos(core::f64::consts::PI * progress)));
        let perm = rng.permutation(n_train);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in perm.chunks(cfg.batch_size) {
            tape.clear();
            let params = tape.leaves(&model.theta);
            let mut total = params[0].lift(0.0);
            for &i in chunk {
                let input: Vec<_> = pairs.inputs[i].iter().map(|&x| params[0].lift(x)).collect();
                let out = net.eval(&params, &input);
                for (o, &t) in out.iter().zip(&pairs.targets[i]) {
                    let e = *o - t;
                    total = total + e * e;
                }
            }
            let mean = total / chunk.len() as f64;
            if !mean.value().is_finite() {
                return Err(Error::TrainingFailure {
                    epoch,
                    detail: alloc::string::String::from("baseline loss became non-finite"),
                });
            }
            let adj = tape.backward(mean);
            let grad: Vec<f64> = params.iter().map(|p| adj[p.index()]).collect();
            adam.step(&mut model.theta, &grad, lr);
            epoch_loss += mean.value();
            batches += 1;
        }
        epoch_losses.push(epoch_loss / batches as f64);
    }

    let final_train_mse = mse(&net, &model.theta, &pairs, 0..n_train);
    let final_val_mse = mse(&net, &model.theta, &pairs, n_train..n);

    // per-channel R^2 on the validation tail
    let n_y = dims.n_y;
    let n_z = dims.n_z;
    let mut mean_t = vec![0.0; n_y + n_z];
    for i in n_train..n {
        for (m, t) in mean_t.iter_mut().zip(&pairs.targets[i]) {
            *m += t;
        }
    }
    for m in &mut mean_t {
        *m /= (n - n_train) as f64;
    }
    let mut ss_res = vec![0.0; n_y + n_z];
    let mut ss_tot = vec![0.0; n_y + n_z];
    for i in n_train..n {
        let out = net.eval(&model.theta, &pairs.inputs[i]);
        for c in 0..n_y + n_z {
            ss_res[c] += (out[c] - pairs.targets[i][c]) * (out[c] - pairs.targets[i][c]);
            ss_tot[c] += (pairs.targets[i][c] - mean_t[c]) * (pairs.targets[i][c] - mean_t[c]);
        }
    }
    let r2: Vec<f64> =
        (0..n_y + n_z).map(|c| 1.0 - ss_res[c] / math::max(ss_tot[c], 1e-30)).collect();

    let report = BaselineReport {
        final_train_mse,
        final_val_mse,
        r2_y: r2[..n_y].to_vec(),
        r2_z: r2[n_y..].to_vec(),
        param_count: model.param_count(),
        epochs: epoch_losses,
    };
    Ok((model, report))
}

/// Ceiling penalty matching the convex pipeline: `w max(0, z - ceiling)^3`.
#[derive(Clone, Debug)]
pub struct BaselineFz {
    pub weights: Vec<f64>,
    pub ceilings: Vec<f64>,
}

impl BaselineFz {
    pub fn disabled(n_z: usize) -> Self {
        BaselineFz { weights: vec![0.0; n_z], ceilings: vec![f64::INFINITY; n_z] }
    }
}

/// Stationary point returned by the SQP solver, with its first-order
/// certificate (projected-gradient residual).
#[derive(Clone, Debug)]
pub struct BaselineSolution {
    pub u_star: Vec<f64>,
    pub objective: f64,
    pub stationarity_inf: f64,
    pub iterations: usize,
}

/// Tolerance on the projected-gradient residual of the non-convex problem.
pub const SQP_TOL: f64 = 1e-6;

fn rollout<T: Real>(
    model: &DenseNnModel,
    theta: &[T],
    y0: &[T],
    us: &[T],
    d: &[T],
    horizon: usize,
) -> (Vec<T>, Vec<T>) {
    let n_y = model.dims.n_y;
    let n_u = model.dims.n_u;
    let n_z = model.dims.n_z;
    let mut y = y0.to_vec();
    let mut ys = Vec::with_capacity(horizon * n_y);
    let mut zs = Vec::with_capacity(horizon * n_z);
    for k in 0..horizon {
        let uk = &us[k * n_u..(k + 1) * n_u];
        let out = model.eval(theta, &y, uk, d);
        let (yn, z) = out.split_at(n_y);
        zs.extend_from_slice(z);
        ys.extend_from_slice(yn);
        y = yn.to_vec();
    }
    (ys, zs)
}

fn objective_value_grad(
    model: &DenseNnModel,
    y0: &[f64],
    u: &[f64],
    d: &[f64],
    r: &[f64],
    horizon: usize,
    fz: &BaselineFz,
) -> (f64, Vec<f64>) {
    let tape = Tape::new();
    let uv = tape.leaves(u);
    let lift = |xs: &[f64]| -> Vec<crate::tape::Var<'_>> {
        xs.iter().map(|&x| uv[0].lift(x)).collect()
    };
    let theta = lift(&model.theta);
    let y0v = lift(y0);
    let dv = lift(d);
    let (ys, zs) = rollout(model, &theta, &y0v, &uv, &dv, horizon);
    let n_y = model.dims.n_y;
    let n_z = model.dims.n_z;
    let mut f = uv[0].lift(0.0);
    for k in 0..horizon {
        for i in 0..n_y {
            let e = ys[k * n_y + i] - r[i];
            f = f + e * e;
        }
        for j in 0..n_z {
            let w = fz.weights[j];
            if w > 0.0 {
                let s = zs[k * n_z + j].val() - fz.ceilings[j];
                if s > 0.0 {
                    let sv = zs[k * n_z + j] - fz.ceilings[j];
                    f = f + sv * sv * sv * w;
                }
            }
        }
    }
    let adj = tape.backward(f);
    let grad: Vec<f64> = uv.iter().map(|p| adj[p.index()]).collect();
    (f.value(), grad)
}

/// SQP with damped Gauss-Newton Hessians and box-QP subproblems. Returns a
/// first-order stationary point of the non-convex rollout problem; which one
/// depends on `u_init`.
#[allow(clippy::too_many_arguments)]
pub fn baseline_mpc_solve(
    model: &DenseNnModel,
    y0: &[f64],
    d: &[f64],
    r: &[f64],
    horizon: usize,
    fz: &BaselineFz,
    u_lower: &[f64],
    u_upper: &[f64],
    u_init: &[f64],
) -> Result<BaselineSolution> {
    let dims = model.dims;
    let n_u = dims.n_u;
    let nv = horizon * n_u;
    if u_init.len() != nv {
        return Err(Error::dim("baseline_mpc_solve", "initial input length mismatch"));
    }
    if y0.len() != dims.n_y || r.len() != dims.n_y || d.len() != dims.n_d {
        return Err(Error::dim("baseline_mpc_solve", "state/target dimension mismatch"));
    }
    let lo: Vec<f64> = (0..nv).map(|i| u_lower[i % n_u]).collect();
    let hi: Vec<f64> = (0..nv).map(|i| u_upper[i % n_u]).collect();
    let mut u: Vec<f64> = u_init
        .iter()
        .enumerate()
        .map(|(i, &x)| math::clamp(x, lo[i], hi[i]))
        .collect();

    let eval = |uu: &[f64]| objective_value_grad(model, y0, uu, d, r, horizon, fz);
    let (mut fval, mut grad) = eval(&u);
    let mut damping = 1e-4;
    let max_iter = 300;
    for iter in 0..max_iter {
        // projected-gradient stationarity
        let mut stat: f64 = 0.0;
        for i in 0..nv {
            let step = math::clamp(u[i] - grad[i], lo[i], hi[i]);
            stat = math::max(stat, math::abs(u[i] - step));
        }
        if stat <= SQP_TOL {
            return Ok(BaselineSolution {
                u_star: u,
                objective: fval,
                stationarity_inf: stat,
                iterations: iter,
            });
        }

        // Gauss-Newton curvature from forward-mode Jacobian columns
        let n_y = dims.n_y;
        let n_z = dims.n_z;
        let mut jy = Matrix::zeros(horizon * n_y, nv);
        let mut jz = Matrix::zeros(horizon * n_z, nv);
        let mut z_now = vec![0.0; horizon * n_z];
        {
            let theta_d: Vec<Dual<f64>> = model.theta.iter().map(|&t| Dual::passive(t)).collect();
            let y0_d: Vec<Dual<f64>> = y0.iter().map(|&x| Dual::passive(x)).collect();
            let d_d: Vec<Dual<f64>> = d.iter().map(|&x| Dual::passive(x)).collect();
            for col in 0..nv {
                let u_d: Vec<Dual<f64>> = u
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| Dual::new(x, if i == col { 1.0 } else { 0.0 }))
                    .collect();
                let (ys, zs) = rollout(model, &theta_d, &y0_d, &u_d, &d_d, horizon);
                for rr in 0..horizon * n_y {
                    jy[(rr, col)] = ys[rr].du;
                }
                for rr in 0..horizon * n_z {
                    jz[(rr, col)] = zs[rr].du;
                    z_now[rr] = zs[rr].re;
                }
            }
        }
        let mut h = jy.transpose().matmul(&jy).scale(2.0);
        for k in 0..horizon {
            for j in 0..n_z {
                let w = fz.weights[j];
                if w <= 0.0 {
                    continue;
                }
                let s = z_now[k * n_z + j] - fz.ceilings[j];
                if s <= 0.0 {
                    continue;
                }
                let ddp = 6.0 * w * s;
                let row = k * n_z + j;
                for a in 0..nv {
                    let ja = jz[(row, a)];
                    if ja == 0.0 {
                        continue;
                    }
                    for b in 0..nv {
                        h[(a, b)] += ddp * ja * jz[(row, b)];
                    }
                }
            }
        }
        for i in 0..nv {
            h[(i, i)] += damping;
        }

        // box-QP subproblem in the step d: bounds shift by the iterate
        let qlo: Vec<f64> = (0..nv).map(|i| lo[i] - u[i]).collect();
        let qhi: Vec<f64> = (0..nv).map(|i| hi[i] - u[i]).collect();
        let step = linalg::solve_box_qp(&h, &grad, &qlo, &qhi)?;

        // Armijo on the true objective
        let gtd = linalg::dot(&grad, &step);
        let mut t = 1.0;
        let mut accepted = false;
        while t >= 1e-12 {
            let cand: Vec<f64> = u.iter().zip(&step).map(|(a, s)| a + t * s).collect();
            let (f_new, g_new) = eval(&cand);
            if f_new <= fval + 1e-4 * t * gtd {
                u = cand;
                fval = f_new;
                grad = g_new;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if accepted {
            damping = math::max(damping * 0.3, 1e-6);
        } else {
            damping *= 10.0;
            if damping > 1e8 {
                return Err(Error::NonConvergence {
                    context: "baseline_mpc_solve",
                    iterations: iter,
                    residual: stat,
                });
            }
        }
    }
    Err(Error::NonConvergence {
        context: "baseline_mpc_solve",
        iterations: max_iter,
        residual: f64::NAN,
    })
}

/// Projected-gradient stationarity residual of a candidate point.
#[allow(clippy::too_many_arguments)]
pub fn stationarity_residual(
    model: &DenseNnModel,
    y0: &[f64],
    d: &[f64],
    r: &[f64],
    horizon: usize,
    fz: &BaselineFz,
    u_lower: &[f64],
    u_upper: &[f64],
    u: &[f64],
) -> f64 {
    let (_, grad) = objective_value_grad(model, y0, u, d, r, horizon, fz);
    let n_u = model.dims.n_u;
    let mut stat: f64 = 0.0;
    for i in 0..u.len() {
        let step = math::clamp(u[i] - grad[i], u_lower[i % n_u], u_upper[i % n_u]);
        stat = math::max(stat, math::abs(u[i] - step));
    }
    stat
}

//! One-shot identification: minimize the weighted mean of squared
//! eliminated-state residuals over a time-series dataset by Adam on all
//! parameters jointly. The analytic inverse of the output map is what makes
//! the single learning problem possible; no alternating linear/nonlinear
//! stages are involved.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{cholesky, Matrix};
use crate::math;
use crate::real::Real;
use crate::rng::Rng;
use crate::shw::{residual_generic, ResidualInput, ShwArch, ShwModel};
use crate::tape::Tape;
use crate::{Error, Result, SignalDims};

/// One synchronized sample. Derivative fields are either all present or all
/// absent across a dataset.
#[derive(Clone, Debug)]
pub struct DataRecord {
    pub t: f64,
    pub u: Vec<f64>,
    pub d: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub ydot: Option<Vec<f64>>,
    pub ddot: Option<Vec<f64>>,
    pub udot: Option<Vec<f64>>,
}

/// Time-indexed records with uniform dimensions and strictly increasing time.
#[derive(Clone, Debug)]
pub struct TimeSeriesDataset {
    records: Vec<DataRecord>,
    dims: SignalDims,
}

impl TimeSeriesDataset {
    pub fn new(records: Vec<DataRecord>, dims: SignalDims) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::precondition("TimeSeriesDataset", "no records"));
        }
        let has_derivs = records[0].ydot.is_some();
        let mut prev_t = f64::NEG_INFINITY;
        for (i, r) in records.iter().enumerate() {
            if r.u.len() != dims.n_u
                || r.d.len() != dims.n_d
                || r.y.len() != dims.n_y
                || r.z.len() != dims.n_z
            {
                return Err(Error::dim("TimeSeriesDataset", alloc::format!("record {i} shape")));
            }
            if r.t <= prev_t {
                return Err(Error::precondition(
                    "TimeSeriesDataset",
                    alloc::format!("time must be strictly increasing at record {i}"),
                ));
            }
            prev_t = r.t;
            if r.ydot.is_some() != has_derivs || r.ddot.is_some() != has_derivs {
                return Err(Error::precondition(
                    "TimeSeriesDataset",
                    "derivatives must be all present or all absent",
                ));
            }
            if let (Some(yd), Some(dd)) = (&r.ydot, &r.ddot) {
                if yd.len() != dims.n_y || dd.len() != dims.n_d {
                    return Err(Error::dim("TimeSeriesDataset", "derivative shape"));
                }
            }
        }
        Ok(TimeSeriesDataset { records, dims })
    }

    pub fn records(&self) -> &[DataRecord] {
        &self.records
    }

    pub fn dims(&self) -> SignalDims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn has_derivatives(&self) -> bool {
        self.records[0].ydot.is_some()
    }

    /// Fill missing derivatives by central differences over the stored
    /// signals (forward/backward one-sided at the ends).
    pub fn with_difference_derivatives(&self) -> Self {
        let n = self.records.len();
        let mut out = self.clone();
        for i in 0..n {
            let (lo, hi) = if i == 0 {
                (0, usize::min(1, n - 1))
            } else if i == n - 1 {
                (n - 2, n - 1)
            } else {
                (i - 1, i + 1)
            };
            let dt = self.records[hi].t - self.records[lo].t;
            let diff = |a: &[f64], b: &[f64]| -> Vec<f64> {
                a.iter().zip(b).map(|(p, q)| (q - p) / dt).collect()
            };
            out.records[i].ydot = Some(diff(&self.records[lo].y, &self.records[hi].y));
            out.records[i].ddot = Some(diff(&self.records[lo].d, &self.records[hi].d));
            out.records[i].udot = Some(diff(&self.records[lo].u, &self.records[hi].u));
        }
        out
    }

    /// Time-ordered split: head for training, tail (fraction `frac`) held out.
    pub fn split_tail(&self, frac: f64) -> (Self, Self) {
        let n = self.records.len();
        let n_val = math::max(1.0, math::round(n as f64 * frac)) as usize;
        let n_val = n_val.min(n - 1);
        let split = n - n_val;
        (
            TimeSeriesDataset { records: self.records[..split].to_vec(), dims: self.dims },
            TimeSeriesDataset { records: self.records[split..].to_vec(), dims: self.dims },
        )
    }
}

/// Training configuration. `k_e` weights the stacked `(e_y, e_z)` residual.
#[derive(Clone, Debug)]
pub struct IdentConfig {
    pub k_e: Matrix,
    pub batch_size: usize,
    pub epochs: usize,
    /// Peak Adam step size; decays to `lr * lr_floor` on a cosine schedule.
    pub lr: f64,
    pub lr_floor: f64,
    pub seed: u64,
    pub val_fraction: f64,
    pub init_std: f64,
    /// Train only the dynamics networks, freezing the three maps at their
    /// initialization (used for linear sanity fits).
    pub freeze_maps: bool,
}

impl IdentConfig {
    pub fn default_for(dims: SignalDims) -> Self {
        IdentConfig {
            k_e: Matrix::identity(dims.n_y + dims.n_z),
            batch_size: 64,
            epochs: 400,
            lr: 3e-3,
            lr_floor: 0.02,
            seed: 1,
            val_fraction: 0.2,
            init_std: 0.05,
            freeze_maps: false,
        }
    }

    pub fn validate(&self, dims: SignalDims) -> Result<()> {
        let ne = dims.n_y + dims.n_z;
        if self.k_e.rows() != ne || self.k_e.cols() != ne {
            return Err(Error::dim("IdentConfig", "K_e must be (n_y + n_z) square"));
        }
        cholesky(&self.k_e.symmetrize())
            .map_err(|_| Error::NotPositiveDefinite { context: "IdentConfig K_e" })?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::precondition("IdentConfig", "batch_size and epochs must be positive"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 0.9) {
            return Err(Error::precondition("IdentConfig", "val_fraction must be in (0, 0.9)"));
        }
        Ok(())
    }
}

/// Mean weighted squared residual over a batch (plain evaluation).
pub fn loss(model: &ShwModel, batch: &[DataRecord], k_e: &Matrix) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::precondition("ident::loss", "empty batch"));
    }
    let mut total = 0.0;
    for (idx, rec) in batch.iter().enumerate() {
        let e = record_residual_f64(model, rec).map_err(|err| tag_record(err, idx))?;
        total += quad_form(k_e, &e);
    }
    Ok(total / batch.len() as f64)
}

fn record_residual_f64(model: &ShwModel, rec: &DataRecord) -> Result<Vec<f64>> {
    let ydot = rec.ydot.as_ref().ok_or_else(|| {
        Error::precondition("ident::loss", "record lacks derivatives; difference them first")
    })?;
    let ddot = rec.ddot.as_ref().unwrap();
    let inp = ResidualInput {
        u: &rec.u,
        d: &rec.d,
        y: &rec.y,
        z: &rec.z,
        ydot,
        ddot,
    };
    residual_generic(&model.arch, &model.theta, &inp).map(|r| r.residual)
}

fn tag_record(err: Error, idx: usize) -> Error {
    match err {
        Error::IllConditioned { context, det, .. } => {
            Error::IllConditioned { context, det, record: Some(idx) }
        }
        other => other,
    }
}

fn quad_form(k: &Matrix, e: &[f64]) -> f64 {
    let ke = k.matvec(e);
    crate::linalg::dot(e, &ke)
}

/// Loss and its gradient with respect to the flat parameter vector, by one
/// reverse sweep over a tape shared across the batch. Also returns the
/// smallest `|det(dPhi/dy)|` seen (the nonsingularity monitor).
pub fn grad_loss(model: &ShwModel, batch: &[DataRecord], k_e: &Matrix) -> Result<GradOutput> {
    let tape = Tape::new();
    grad_loss_on(&tape, &model.arch, &model.theta, batch, k_e)
}

pub struct GradOutput {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub min_jac_det: f64,
}

/// Tape-reusing variant for the training loop.
pub fn grad_loss_on(
    tape: &Tape,
    arch: &ShwArch,
    theta: &[f64],
    batch: &[DataRecord],
    k_e: &Matrix,
) -> Result<GradOutput> {
    if batch.is_empty() {
        return Err(Error::precondition("ident::grad_loss", "empty batch"));
    }
    tape.clear();
    let params = tape.leaves(theta);
    let mut total = params[0].lift(0.0);
    let mut min_det = f64::INFINITY;
    let ne = arch.dims.n_y + arch.dims.n_z;
    for (idx, rec) in batch.iter().enumerate() {
        let ydot = rec.ydot.as_ref().ok_or_else(|| {
            Error::precondition("ident::grad_loss", "record lacks derivatives")
        })?;
        let ddot = rec.ddot.as_ref().unwrap();
        let lift_all = |xs: &[f64]| -> Vec<crate::tape::Var<'_>> {
            xs.iter().map(|&x| params[0].lift(x)).collect()
        };
        let u = lift_all(&rec.u);
        let d = lift_all(&rec.d);
        let y = lift_all(&rec.y);
        let z = lift_all(&rec.z);
        let yd = lift_all(ydot);
        let dd = lift_all(ddot);
        let inp = ResidualInput { u: &u, d: &d, y: &y, z: &z, ydot: &yd, ddot: &dd };
        let out = residual_generic(arch, &params, &inp).map_err(|e| tag_record(e, idx))?;
        min_det = math::min(min_det, math::abs(out.jac_det));
        // e^T K_e e, exploiting symmetry of K_e
        let e = out.residual;
        for i in 0..ne {
            let kii = k_e[(i, i)];
            total = total + e[i] * e[i] * kii;
            for j in i + 1..ne {
                let kij = k_e[(i, j)];
                if kij != 0.0 {
                    total = total + e[i] * e[j] * (2.0 * kij);
                }
            }
        }
    }
    let mean = total / batch.len() as f64;
    let adj = tape.backward(mean);
    let grad: Vec<f64> = params.iter().map(|p| adj[p.index()]).collect();
    Ok(GradOutput { loss: mean.value(), grad, min_jac_det: min_det })
}

/// Adam optimizer state over a flat parameter vector.
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(dim: usize) -> Self {
        Adam { m: vec![0.0; dim], v: vec![0.0; dim], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let b1t = 1.0 - libm::pow(self.beta1, self.t as f64);
        let b2t = 1.0 - libm::pow(self.beta2, self.t as f64);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / b1t;
            let vhat = self.v[i] / b2t;
            theta[i] -= lr * mhat / (math::sqrt(vhat) + self.eps);
        }
    }
}

/// Per-epoch training statistics.
#[derive(Clone, Debug)]
pub struct EpochStats {
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Summary of a training run.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub final_train_loss: f64,
    pub final_val_loss: f64,
    /// One-step-ahead prediction R^2 per output channel on the validation
    /// tail.
    pub one_step_r2: Vec<f64>,
    /// Smallest |det(dPhi/dy)| seen across training batches.
    pub min_jac_det: f64,
    pub param_count: usize,
    pub train_records: usize,
    pub val_records: usize,
}

/// Train a model on a dataset. Differences derivatives if the dataset lacks
/// them, splits the tail for validation, runs Adam with a cosine schedule
/// and reports per-epoch losses plus the Jacobian-determinant monitor.
pub fn fit(
    dataset: &TimeSeriesDataset,
    arch: &ShwArch,
    config: &IdentConfig,
) -> Result<(ShwModel, TrainReport)> {
    config.validate(arch.dims)?;
    if dataset.dims() != arch.dims {
        return Err(Error::dim("ident::fit", "dataset dimensions do not match architecture"));
    }
    let owned;
    let data = if dataset.has_derivatives() {
        dataset
    } else {
        owned = dataset.with_difference_derivatives();
        &owned
    };
    let (train, val) = data.split_tail(config.val_fraction);

    let mut rng = Rng::new(config.seed);
    let mut model = ShwModel::init(arch.clone(), &mut rng, config.init_std);
    let slices = arch.slices();
    let mut adam = Adam::new(model.theta.len());
    let tape = Tape::new();

    let mut epochs_log = Vec::with_capacity(config.epochs);
    let mut min_det = f64::INFINITY;
    for epoch in 0..config.epochs {
        let progress = epoch as f64 / config.epochs as f64;
        let lr = config.lr
            * (config.lr_floor
                + (1.0 - config.lr_floor)
                    * 0.5
                    * (1.0 + math::cos(core::f64::consts::PI * progress)));

        let perm = rng.permutation(train.len());
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        let mut batch_buf: Vec<DataRecord> = Vec::with_capacity(config.batch_size);
        for chunk in perm.chunks(config.batch_size) {
            batch_buf.clear();
            for &i in chunk {
                batch_buf.push(train.records()[i].clone());
            }
            let out = grad_loss_on(&tape, arch, &model.theta, &batch_buf, &config.k_e)
                .map_err(|e| Error::TrainingFailure { epoch, detail: e.to_string() })?;
            if !out.loss.is_finite() {
                return Err(Error::TrainingFailure {
                    epoch,
                    detail: "loss became non-finite".to_string(),
                });
            }
            min_det = math::min(min_det, out.min_jac_det);
            let mut grad = out.grad;
            if config.freeze_maps {
                for g in &mut grad[slices.psi.clone()] {
                    *g = 0.0;
                }
                for g in &mut grad[slices.phi.clone()] {
                    *g = 0.0;
                }
                for g in &mut grad[slices.xi.clone()] {
                    *g = 0.0;
                }
            }
            adam.step(&mut model.theta, &grad, lr);
            epoch_loss += out.loss;
            batches += 1;
        }
        let val_loss = loss(&model, val.records(), &config.k_e)
            .map_err(|e| Error::TrainingFailure { epoch, detail: e.to_string() })?;
        epochs_log.push(EpochStats { train_loss: epoch_loss / batches as f64, val_loss });
    }

    let final_train_loss = loss(&model, train.records(), &config.k_e)?;
    let final_val_loss = loss(&model, val.records(), &config.k_e)?;
    let one_step_r2 = one_step_r2(&model, &val)?;

    let report = TrainReport {
        epochs: epochs_log,
        final_train_loss,
        final_val_loss,
        one_step_r2,
        min_jac_det: min_det,
        param_count: model.theta.len(),
        train_records: train.len(),
        val_records: val.len(),
    };
    Ok((model, report))
}

/// One-step-ahead prediction R^2 per output channel: map the measured output
/// to the state, step the discretized dynamics, map back and compare with
/// the next measured output.
pub fn one_step_r2(model: &ShwModel, data: &TimeSeriesDataset) -> Result<Vec<f64>> {
    let n_y = model.arch.dims.n_y;
    let records = data.records();
    if records.len() < 2 {
        return Err(Error::precondition("one_step_r2", "need at least 2 records"));
    }
    let mut mean = vec![0.0; n_y];
    let mut count = 0.0;
    for r in &records[1..] {
        for i in 0..n_y {
            mean[i] += r.y[i];
        }
        count += 1.0;
    }
    for m in &mut mean {
        *m /= count;
    }

    let mut ss_res = vec![0.0; n_y];
    let mut ss_tot = vec![0.0; n_y];
    for w in records.windows(2) {
        let (cur, next) = (&w[0], &w[1]);
        let dm = model.discretize(&cur.d)?;
        let x = model.output_map(&cur.y, &cur.d)?;
        let v = model.input_map(&cur.u, &cur.d)?;
        let mut xn = dm.a_d.matvec(&x);
        let bv = dm.b_d.matvec(&v);
        for i in 0..n_y {
            xn[i] += bv[i] + dm.c_d[i];
        }
        let yn = model.output_map_inv(&xn, &next.d)?;
        for i in 0..n_y {
            ss_res[i] += (yn[i] - next.y[i]) * (yn[i] - next.y[i]);
            ss_tot[i] += (next.y[i] - mean[i]) * (next.y[i] - mean[i]);
        }
    }
    Ok((0..n_y).map(|i| 1.0 - ss_res[i] / math::max(ss_tot[i], 1e-30)).collect())
}

/// Smallest |det(dPhi/dy)| over a dataset for the trained model.
pub fn min_jacobian_det(model: &ShwModel, data: &TimeSeriesDataset) -> Result<f64> {
    let mut min_det = f64::INFINITY;
    for r in data.records() {
        let det = crate::bnn::jacobian_det(&model.arch.phi, model.theta_phi(), &r.y, &r.d)?;
        min_det = math::min(min_det, math::abs(det));
    }
    Ok(min_det)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shw::ShwArch;

    fn tiny_dims() -> SignalDims {
        SignalDims::new(1, 1, 1, 1).unwrap()
    }

    fn tiny_arch() -> ShwArch {
        ShwArch::sized(tiny_dims(), 0.1, 1, &[2], &[2], &[2], &[2], true).unwrap()
    }

    /// Records generated exactly by the model's own equations.
    fn self_consistent_records(model: &ShwModel, n: usize, seed: u64) -> Vec<DataRecord> {
        let mut rng = Rng::new(seed);
        let dims = model.arch.dims;
        (0..n)
            .map(|k| {
                let u: Vec<f64> = (0..dims.n_u).map(|_| rng.range(-1.0, 1.0)).collect();
                let d: Vec<f64> = (0..dims.n_d).map(|_| rng.range(-0.5, 0.5)).collect();
                let ddot: Vec<f64> = (0..dims.n_d).map(|_| rng.range(-0.2, 0.2)).collect();
                let x: Vec<f64> = (0..dims.n_y).map(|_| rng.range(-0.8, 0.8)).collect();
                let v = model.input_map(&u, &d).unwrap();
                let y = model.output_map_inv(&x, &d).unwrap();
                let z = model.constraint_output(&x, &v, &d).unwrap();
                let xdot = model.xdot(&x, &v, &d).unwrap();
                let (_, jac) = crate::bnn::forward_with_jacobian(
                    &model.arch.phi,
                    model.theta_phi(),
                    &y,
                    &d,
                )
                .unwrap();
                let jvp =
                    crate::bnn::jvp_eta(&model.arch.phi, model.theta_phi(), &y, &d, &ddot)
                        .unwrap();
                let rhs: Vec<f64> = (0..dims.n_y).map(|i| xdot[i] - jvp[i]).collect();
                let jm = Matrix::from_vec(dims.n_y, dims.n_y, jac).unwrap();
                let ydot = jm.solve(&rhs).unwrap();
                DataRecord {
                    t: k as f64 * 0.1,
                    u,
                    d,
                    y,
                    z,
                    ydot: Some(ydot),
                    ddot: Some(ddot),
                    udot: None,
                }
            })
            .collect()
    }

    #[test]
    fn loss_zero_on_self_generated_data() {
        let mut rng = Rng::new(80);
        let model = ShwModel::init(tiny_arch(), &mut rng, 0.3);
        let recs = self_consistent_records(&model, 50, 81);
        let k_e = Matrix::identity(2);
        let l = loss(&model, &recs, &k_e).unwrap();
        assert!(l < 1e-12, "loss {l}");
    }

    #[test]
    fn loss_is_quadratic_form_for_single_record() {
        let mut rng = Rng::new(82);
        let model = ShwModel::init(tiny_arch(), &mut rng, 0.3);
        let recs = self_consistent_records(&model, 1, 83);
        let mut rec = recs[0].clone();
        // perturb so the residual is known and nonzero
        rec.ydot.as_mut().unwrap()[0] += 0.3;
        rec.z[0] += -0.2;
        let e = model
            .residual(
                &rec.u,
                &rec.d,
                &rec.y,
                &rec.z,
                rec.ydot.as_ref().unwrap(),
                rec.ddot.as_ref().unwrap(),
            )
            .unwrap();
        let k_e = Matrix::identity(2);
        let l = loss(&model, &[rec.clone()], &k_e).unwrap();
        let expect: f64 = e.iter().map(|x| x * x).sum();
        assert!((l - expect).abs() < 1e-14);

        // doubling K_e doubles the loss
        let l2 = loss(&model, &[rec], &Matrix::identity(2).scale(2.0)).unwrap();
        assert!((l2 - 2.0 * expect).abs() < 1e-13);
    }

    #[test]
    fn loss_invariant_under_permutation() {
        let mut rng = Rng::new(84);
        let model = ShwModel::init(tiny_arch(), &mut rng, 0.3);
        let mut recs = self_consistent_records(&model, 10, 85);
        for (i, r) in recs.iter_mut().enumerate() {
            r.ydot.as_mut().unwrap()[0] += 0.1 * (i as f64 + 1.0);
        }
        let k_e = Matrix::identity(2);
        let l1 = loss(&model, &recs, &k_e).unwrap();
        recs.reverse();
        let l2 = loss(&model, &recs, &k_e).unwrap();
        assert!((l1 - l2).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences_per_slice() {
        let mut rng = Rng::new(86);
        let model = ShwModel::init(tiny_arch(), &mut rng, 0.4);
        let mut recs = self_consistent_records(&model, 4, 87);
        for r in recs.iter_mut() {
            r.ydot.as_mut().unwrap()[0] += 0.25;
            r.z[0] -= 0.15;
        }
        // K_e with off-diagonal coupling
        let k_e = Matrix::from_vec(2, 2, vec![1.5, 0.3, 0.3, 2.0]).unwrap();
        let out = grad_loss(&model, &recs, &k_e).unwrap();
        assert!((out.loss - loss(&model, &recs, &k_e).unwrap()).abs() < 1e-14);

        let slices = model.arch.slices();
        let h = 1e-6;
        let named = [
            ("psi", slices.psi.clone()),
            ("phi", slices.phi.clone()),
            ("xi", slices.xi.clone()),
            ("a", slices.a.clone()),
            ("b", slices.b.clone()),
            ("c", slices.c.clone()),
        ];
        for (name, range) in named {
            for i in range {
                let mut mp = model.clone();
                mp.theta[i] += h;
                let mut mm = model.clone();
                mm.theta[i] -= h;
                let fd = (loss(&mp, &recs, &k_e).unwrap() - loss(&mm, &recs, &k_e).unwrap())
                    / (2.0 * h);
                let g = out.grad[i];
                let rel = (g - fd).abs() / (1.0 + fd.abs());
                assert!(rel < 1e-4, "slice {name} param {i}: ad {g} fd {fd} rel {rel}");
            }
        }
    }

    #[test]
    fn dataset_validation() {
        let dims = tiny_dims();
        let rec = |t: f64| DataRecord {
            t,
            u: vec![0.0],
            d: vec![0.0],
            y: vec![0.0],
            z: vec![0.0],
            ydot: None,
            ddot: None,
            udot: None,
        };
        assert!(TimeSeriesDataset::new(vec![], dims).is_err());
        assert!(TimeSeriesDataset::new(vec![rec(0.0), rec(0.0)], dims).is_err());
        let ok = TimeSeriesDataset::new(vec![rec(0.0), rec(0.1), rec(0.2)], dims).unwrap();
        let with_d = ok.with_difference_derivatives();
        assert!(with_d.has_derivatives());
        let (train, val) = with_d.split_tail(0.34);
        assert_eq!(train.len(), 2);
        assert_eq!(val.len(), 1);
    }

    #[test]
    fn difference_derivatives_match_linear_signal() {
        // y(t) = 2t: central differences recover ydot = 2 exactly.
        let dims = tiny_dims();
        let recs: Vec<DataRecord> = (0..5)
            .map(|k| {
                let t = k as f64 * 0.1;
                DataRecord {
                    t,
                    u: vec![0.0],
                    d: vec![3.0 * t],
                    y: vec![2.0 * t],
                    z: vec![0.0],
                    ydot: None,
                    ddot: None,
                    udot: None,
                }
            })
            .collect();
        let ds = TimeSeriesDataset::new(recs, dims).unwrap().with_difference_derivatives();
        for r in ds.records() {
            assert!((r.ydot.as_ref().unwrap()[0] - 2.0).abs() < 1e-12);
            assert!((r.ddot.as_ref().unwrap()[0] - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn training_does_not_mutate_dataset() {
        let mut rng = Rng::new(88);
        let teacher = ShwModel::init(tiny_arch(), &mut rng, 0.3);
        let recs = self_consistent_records(&teacher, 30, 89);
        let ds = TimeSeriesDataset::new(recs, tiny_dims()).unwrap();
        let before: Vec<f64> = ds.records().iter().flat_map(|r| r.y.clone()).collect();
        let mut cfg = IdentConfig::default_for(tiny_dims());
        cfg.epochs = 3;
        cfg.batch_size = 8;
        let _ = fit(&ds, &tiny_arch(), &cfg).unwrap();
        let after: Vec<f64> = ds.records().iter().flat_map(|r| r.y.clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn fit_reduces_loss_and_reports() {
        let mut rng = Rng::new(90);
        let teacher = ShwModel::init(tiny_arch(), &mut rng, 0.3);
        let recs = self_consistent_records(&teacher, 120, 91);
        let ds = TimeSeriesDataset::new(recs, tiny_dims()).unwrap();
        let mut cfg = IdentConfig::default_for(tiny_dims());
        cfg.epochs = 40;
        cfg.batch_size = 16;
        cfg.seed = 7;
        let (model, report) = fit(&ds, &tiny_arch(), &cfg).unwrap();
        assert_eq!(report.epochs.len(), 40);
        assert!(report.final_val_loss < report.epochs[0].val_loss);
        assert!(report.min_jac_det > crate::bnn::DET_GUARD);
        assert_eq!(report.param_count, model.theta.len());
    }
}

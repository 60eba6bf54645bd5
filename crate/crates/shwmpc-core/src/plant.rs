//! Synthetic ground-truth plants for data generation and closed-loop
//! evaluation: a "realizable" mode whose dynamics are themselves a randomly
//! drawn structured model (enabling exact-recovery experiments) and a
//! "misspecified" mode driven by a dissipative polynomial ODE with a
//! saturating input map. Signals are scaled to roughly unit boxes.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::bnn;
use crate::ident::{DataRecord, TimeSeriesDataset};
use crate::linalg::{self, Matrix};
use crate::math;
use crate::rng::Rng;
use crate::shw::{ShwArch, ShwModel};
use crate::{Error, Result, SignalDims};

/// Which ground truth drives the plant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlantKind {
    /// The truth is a structured model: the model class contains it.
    Realizable,
    /// Polynomial drift + saturating input map: the model class does not.
    Misspecified,
}

/// Coefficients of the misspecified polynomial plant.
#[derive(Clone, Debug)]
pub struct PolyPlant {
    linear_decay: Vec<f64>,
    cubic_decay: Vec<f64>,
    input_gain: Matrix,
    input_couple: Matrix,
    dist_gain: Matrix,
    z_weights: Vec<f64>,
}

/// The synthetic plant: dimensions, sampling period and ground truth.
pub struct SyntheticPlant {
    pub dims: SignalDims,
    pub delta: f64,
    kind: PlantKind,
    truth: Option<ShwModel>,
    poly: Option<PolyPlant>,
}

/// Standard dimensions mirroring the 3-input/3-output/1-ceiling layout with
/// two disturbances.
pub fn standard_dims() -> SignalDims {
    SignalDims::new(3, 3, 1, 2).unwrap()
}

impl SyntheticPlant {
    /// Draw a realizable plant: a structured model whose scheduled `A(d)`
    /// is verified contractive over the disturbance box (log-norm negative);
    /// the conditioning randomness is attenuated until that holds.
    pub fn realizable(arch: ShwArch, seed: u64) -> Result<Self> {
        let mut std = 0.3;
        for attempt in 0..8 {
            let mut rng = Rng::new(seed.wrapping_add(attempt));
            let model = ShwModel::init(arch.clone(), &mut rng, std);
            if Self::contractive(&model)? {
                return Ok(SyntheticPlant {
                    dims: arch.dims,
                    delta: arch.delta,
                    kind: PlantKind::Realizable,
                    truth: Some(model),
                    poly: None,
                });
            }
            std *= 0.7;
        }
        Err(Error::precondition(
            "SyntheticPlant::realizable",
            "could not draw a contractive scheduled dynamics",
        ))
    }

    fn contractive(model: &ShwModel) -> Result<bool> {
        let n_d = model.arch.dims.n_d;
        let mut probe = Rng::new(0xd15);
        for _ in 0..64 {
            let d: Vec<f64> = (0..n_d).map(|_| probe.range(-1.0, 1.0)).collect();
            let (a, _, _) = model.dynamics(&d)?;
            // log-norm bound: largest eigenvalue of the symmetric part,
            // estimated by power iteration
            let sym = a.add(&a.transpose()).scale(0.5);
            let n = sym.rows();
            let mut v = vec![1.0; n];
            let mut lam = 0.0;
            for _ in 0..100 {
                // shift to make the dominant eigenvalue positive
                let mut w = sym.matvec(&v);
                for i in 0..n {
                    w[i] += 10.0 * v[i];
                }
                let norm = linalg::norm2_vec(&w);
                for i in 0..n {
                    v[i] = w[i] / norm;
                }
                lam = linalg::dot(&v, &sym.matvec(&v));
            }
            if lam >= -0.05 {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Build the misspecified polynomial plant and verify dissipativity of
    /// the drift outside the unit ball under extreme inputs.
    pub fn misspecified(seed: u64, delta: f64) -> Result<Self> {
        let dims = standard_dims();
        let mut rng = Rng::new(seed);
        let n = dims.n_y;
        let linear_decay: Vec<f64> = (0..n).map(|_| rng.range(0.6, 1.4)).collect();
        let cubic_decay: Vec<f64> = (0..n).map(|_| rng.range(0.2, 0.6)).collect();
        let input_gain = Matrix::from_fn(n, dims.n_u, |i, j| {
            if i == j {
                rng.range(0.7, 1.2)
            } else {
                rng.normal_scaled(0.15)
            }
        });
        let input_couple = Matrix::from_fn(dims.n_u, dims.n_u, |i, j| {
            if i == j {
                1.0
            } else {
                rng.normal_scaled(0.1)
            }
        });
        let dist_gain = Matrix::from_fn(n, dims.n_d, |_, _| rng.normal_scaled(0.2));
        let z_weights: Vec<f64> = (0..n).map(|_| rng.range(0.2, 0.5)).collect();
        let poly = PolyPlant {
            linear_decay,
            cubic_decay,
            input_gain,
            input_couple,
            dist_gain,
            z_weights,
        };
        let plant = SyntheticPlant {
            dims,
            delta,
            kind: PlantKind::Misspecified,
            truth: None,
            poly: Some(poly),
        };
        plant.verify_dissipative(&mut rng)?;
        Ok(plant)
    }

    fn verify_dissipative(&self, rng: &mut Rng) -> Result<()> {
        let n = self.dims.n_y;
        for _ in 0..200 {
            let mut x: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            let norm = linalg::norm2_vec(&x);
            let radius = 3.0;
            for xi in &mut x {
                *xi *= radius / norm;
            }
            let u: Vec<f64> = (0..self.dims.n_u)
                .map(|_| if rng.uniform() < 0.5 { -1.0 } else { 1.0 })
                .collect();
            let d: Vec<f64> = (0..self.dims.n_d)
                .map(|_| if rng.uniform() < 0.5 { -1.0 } else { 1.0 })
                .collect();
            let f = self.xdot(&x, &u, &d)?;
            if linalg::dot(&x, &f) >= 0.0 {
                return Err(Error::precondition(
                    "SyntheticPlant::misspecified",
                    "drift is not dissipative on the verification shell",
                ));
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> PlantKind {
        self.kind
    }

    /// The generating structured model, in realizable mode.
    pub fn truth(&self) -> Option<&ShwModel> {
        self.truth.as_ref()
    }

    pub fn xdot(&self, x: &[f64], u: &[f64], d: &[f64]) -> Result<Vec<f64>> {
        match self.kind {
            PlantKind::Realizable => {
                let m = self.truth.as_ref().unwrap();
                let v = m.input_map(u, d)?;
                m.xdot(x, &v, d)
            }
            PlantKind::Misspecified => {
                let p = self.poly.as_ref().unwrap();
                let n = self.dims.n_y;
                let coupled = p.input_couple.matvec(u);
                let sat: Vec<f64> = coupled.iter().map(|c| math::tanh(*c)).collect();
                let gu = p.input_gain.matvec(&sat);
                let gd = p.dist_gain.matvec(d);
                Ok((0..n)
                    .map(|i| {
                        -p.linear_decay[i] * x[i] - p.cubic_decay[i] * x[i] * x[i] * x[i]
                            + gu[i]
                            + gd[i]
                    })
                    .collect())
            }
        }
    }

    pub fn output_y(&self, x: &[f64], d: &[f64]) -> Result<Vec<f64>> {
        match self.kind {
            PlantKind::Realizable => self.truth.as_ref().unwrap().output_map_inv(x, d),
            PlantKind::Misspecified => {
                Ok(x.iter().map(|&xi| xi + 0.2 * math::tanh(xi)).collect())
            }
        }
    }

    pub fn output_z(&self, x: &[f64], u: &[f64], d: &[f64]) -> Result<Vec<f64>> {
        match self.kind {
            PlantKind::Realizable => {
                let m = self.truth.as_ref().unwrap();
                let v = m.input_map(u, d)?;
                m.constraint_output(x, &v, d)
            }
            PlantKind::Misspecified => {
                let p = self.poly.as_ref().unwrap();
                let q: f64 = x.iter().zip(&p.z_weights).map(|(xi, w)| w * xi * xi).sum();
                Ok(vec![q + 0.1])
            }
        }
    }

    /// Exact output derivative given the state derivative (chain rule through
    /// the output map; no differencing).
    pub fn ydot(&self, x: &[f64], u: &[f64], d: &[f64], ddot: &[f64]) -> Result<Vec<f64>> {
        let xdot = self.xdot(x, u, d)?;
        match self.kind {
            PlantKind::Realizable => {
                let m = self.truth.as_ref().unwrap();
                let y = m.output_map_inv(x, d)?;
                let (_, jac) =
                    bnn::forward_with_jacobian(&m.arch.phi, m.theta_phi(), &y, d)?;
                let jvp = bnn::jvp_eta(&m.arch.phi, m.theta_phi(), &y, d, ddot)?;
                let n = x.len();
                let rhs: Vec<f64> = (0..n).map(|i| xdot[i] - jvp[i]).collect();
                let jm = Matrix::from_vec(n, n, jac)?;
                jm.solve(&rhs)
            }
            PlantKind::Misspecified => Ok(x
                .iter()
                .zip(&xdot)
                .map(|(&xi, &xd)| {
                    let th = math::tanh(xi);
                    (1.0 + 0.2 * (1.0 - th * th)) * xd
                })
                .collect()),
        }
    }
}

/// Excitation for data generation: zero-order-hold input levels re-drawn
/// every `hold_steps` sampling periods (a mixture of uniform draws and
/// near-corner values so the box is covered), disturbances as slow sines.
#[derive(Clone, Debug)]
pub struct ExcitationConfig {
    pub u_lower: Vec<f64>,
    pub u_upper: Vec<f64>,
    pub hold_steps: usize,
    pub corner_fraction: f64,
    pub d_center: Vec<f64>,
    pub d_amplitude: Vec<f64>,
    pub d_period: Vec<f64>,
    pub seed: u64,
}

impl ExcitationConfig {
    pub fn standard(dims: SignalDims, seed: u64) -> Self {
        ExcitationConfig {
            u_lower: vec![-1.0; dims.n_u],
            u_upper: vec![1.0; dims.n_u],
            hold_steps: 5,
            corner_fraction: 0.3,
            d_center: vec![0.0; dims.n_d],
            d_amplitude: vec![0.5; dims.n_d],
            d_period: (0..dims.n_d).map(|k| 17.0 + 6.0 * k as f64).collect(),
            seed,
        }
    }

    fn d_at(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let mut d = Vec::with_capacity(self.d_center.len());
        let mut ddot = Vec::with_capacity(self.d_center.len());
        for i in 0..self.d_center.len() {
            let omega = 2.0 * core::f64::consts::PI / self.d_period[i];
            let phase = 0.7 * i as f64;
            d.push(self.d_center[i] + self.d_amplitude[i] * math::sin(omega * t + phase));
            ddot.push(self.d_amplitude[i] * omega * math::cos(omega * t + phase));
        }
        (d, ddot)
    }
}

/// State-norm bound beyond which generation aborts.
const BLOWUP_LIMIT: f64 = 1e3;

/// Integrate the plant under the excitation and record synchronized samples
/// with exact derivatives (computed from the dynamics, not differenced).
pub fn generate_dataset(
    plant: &SyntheticPlant,
    exc: &ExcitationConfig,
    duration: f64,
    delta: f64,
) -> Result<TimeSeriesDataset> {
    if !(delta > 0.0) || !(duration > delta) {
        return Err(Error::precondition("generate_dataset", "need duration > delta > 0"));
    }
    let steps = (duration / delta) as usize;
    let fine = 20usize;
    let h = delta / fine as f64;
    let dims = plant.dims;
    let mut rng = Rng::new(exc.seed);
    let mut x = vec![0.0; dims.n_y];
    let mut records = Vec::with_capacity(steps);
    let mut u_level = vec![0.0; dims.n_u];

    for step in 0..steps {
        let t = step as f64 * delta;
        if step % exc.hold_steps == 0 {
            for i in 0..dims.n_u {
                let roll = rng.uniform();
                u_level[i] = if roll < exc.corner_fraction / 2.0 {
                    exc.u_lower[i] + 0.05 * (exc.u_upper[i] - exc.u_lower[i]) * rng.uniform()
                } else if roll < exc.corner_fraction {
                    exc.u_upper[i] - 0.05 * (exc.u_upper[i] - exc.u_lower[i]) * rng.uniform()
                } else {
                    rng.range(exc.u_lower[i], exc.u_upper[i])
                };
            }
        }
        let (d, ddot) = exc.d_at(t);
        let y = plant.output_y(&x, &d)?;
        let z = plant.output_z(&x, &u_level, &d)?;
        let ydot = plant.ydot(&x, &u_level, &d, &ddot)?;
        records.push(DataRecord {
            t,
            u: u_level.clone(),
            d,
            y,
            z,
            ydot: Some(ydot),
            ddot: Some(ddot),
            udot: Some(vec![0.0; dims.n_u]),
        });

        // advance one sampling period with ZOH input, d varying continuously
        for sub in 0..fine {
            let tt = t + sub as f64 * h;
            let f = |state: &[f64], tau: f64| -> Result<Vec<f64>> {
                let (dd, _) = exc.d_at(tau);
                plant.xdot(state, &u_level, &dd)
            };
            let k1 = f(&x, tt)?;
            let x2: Vec<f64> = (0..dims.n_y).map(|i| x[i] + 0.5 * h * k1[i]).collect();
            let k2 = f(&x2, tt + 0.5 * h)?;
            let x3: Vec<f64> = (0..dims.n_y).map(|i| x[i] + 0.5 * h * k2[i]).collect();
            let k3 = f(&x3, tt + 0.5 * h)?;
            let x4: Vec<f64> = (0..dims.n_y).map(|i| x[i] + h * k3[i]).collect();
            let k4 = f(&x4, tt + h)?;
            for i in 0..dims.n_y {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        if linalg::norm_inf_vec(&x) > BLOWUP_LIMIT {
            return Err(Error::ExcitationRejected {
                time: t + delta,
                state_norm: linalg::norm_inf_vec(&x),
            });
        }
    }
    TimeSeriesDataset::new(records, dims)
}

/// Additive Gaussian noise on the measured outputs (y, z and the measured
/// output derivative), scaled per channel to `pct` of that channel's
/// standard deviation.
pub fn add_output_noise(data: &TimeSeriesDataset, pct: f64, seed: u64) -> TimeSeriesDataset {
    let dims = data.dims();
    let records = data.records();
    let n = records.len() as f64;
    let std_of = |extract: &dyn Fn(&DataRecord) -> &[f64], width: usize| -> Vec<f64> {
        let mut mean = vec![0.0; width];
        for r in records {
            for (m, v) in mean.iter_mut().zip(extract(r)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; width];
        for r in records {
            for (i, v) in extract(r).iter().enumerate() {
                var[i] += (v - mean[i]) * (v - mean[i]);
            }
        }
        var.iter().map(|v| math::sqrt(v / n)).collect()
    };
    let y_std = std_of(&|r| &r.y, dims.n_y);
    let z_std = std_of(&|r| &r.z, dims.n_z);
    let yd_std = std_of(&|r| r.ydot.as_ref().unwrap(), dims.n_y);

    let mut rng = Rng::new(seed);
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let mut rec = r.clone();
        for i in 0..dims.n_y {
            rec.y[i] += pct * y_std[i] * rng.normal();
        }
        for i in 0..dims.n_z {
            rec.z[i] += pct * z_std[i] * rng.normal();
        }
        if let Some(yd) = rec.ydot.as_mut() {
            for i in 0..dims.n_y {
                yd[i] += pct * yd_std[i] * rng.normal();
            }
        }
        out.push(rec);
    }
    TimeSeriesDataset::new(out, dims).unwrap()
}

/// Piecewise-constant schedule: value of the last entry whose time is <= t.
#[derive(Clone, Debug)]
pub struct Schedule {
    pub entries: Vec<(f64, Vec<f64>)>,
}

impl Schedule {
    pub fn constant(value: Vec<f64>) -> Self {
        Schedule { entries: vec![(0.0, value)] }
    }

    pub fn at(&self, t: f64) -> &[f64] {
        let mut current = &self.entries[0].1;
        for (time, value) in &self.entries {
            if *time <= t {
                current = value;
            } else {
                break;
            }
        }
        current
    }
}

/// Closed-loop scenario: initial state, reference and disturbance schedules,
/// and the input box the controller must respect.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub x0: Vec<f64>,
    pub reference: Schedule,
    pub disturbance: Schedule,
    pub u_lower: Vec<f64>,
    pub u_upper: Vec<f64>,
}

/// One logged closed-loop sample.
#[derive(Clone, Debug)]
pub struct TrajRow {
    pub t: f64,
    pub u: Vec<f64>,
    pub d: Vec<f64>,
    pub r: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

/// Closed-loop log; `abort` carries the reason if the run stopped early.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub rows: Vec<TrajRow>,
    pub abort: Option<String>,
}

/// Controller callback: `(t, y, d, r) -> u`.
pub type Controller<'a> = dyn FnMut(f64, &[f64], &[f64], &[f64]) -> Result<Vec<f64>> + 'a;

/// Simulate the plant under a controller callback, zero-order hold over
/// each sampling period, RK4 at `delta / 20`. A controller error or an
/// out-of-box input aborts the run, returning the partial log.
pub fn closed_loop(
    plant: &SyntheticPlant,
    controller: &mut Controller<'_>,
    scenario: &Scenario,
    duration: f64,
) -> Result<Trajectory> {
    let dims = plant.dims;
    let delta = plant.delta;
    let steps = (duration / delta) as usize;
    let fine = 20usize;
    let h = delta / fine as f64;
    let mut x = scenario.x0.clone();
    let mut rows = Vec::with_capacity(steps);

    for step in 0..steps {
        let t = step as f64 * delta;
        let d = scenario.disturbance.at(t).to_vec();
        let r = scenario.reference.at(t).to_vec();
        let y = plant.output_y(&x, &d)?;
        let u = match controller(t, &y, &d, &r) {
            Ok(u) => u,
            Err(e) => {
                return Ok(Trajectory {
                    rows,
                    abort: Some(alloc::format!("controller failed at t = {t}: {e}")),
                })
            }
        };
        for i in 0..dims.n_u {
            if u[i] < scenario.u_lower[i] - 1e-9 || u[i] > scenario.u_upper[i] + 1e-9 {
                return Ok(Trajectory {
                    rows,
                    abort: Some(alloc::format!(
                        "controller violated the input box at t = {t} (coordinate {i}: {})",
                        u[i]
                    )),
                });
            }
        }
        let z = plant.output_z(&x, &u, &d)?;
        rows.push(TrajRow { t, u: u.clone(), d: d.clone(), r, y, z });

        for _ in 0..fine {
            let k1 = plant.xdot(&x, &u, &d)?;
            let x2: Vec<f64> = (0..dims.n_y).map(|i| x[i] + 0.5 * h * k1[i]).collect();
            let k2 = plant.xdot(&x2, &u, &d)?;
            let x3: Vec<f64> = (0..dims.n_y).map(|i| x[i] + 0.5 * h * k2[i]).collect();
            let k3 = plant.xdot(&x3, &u, &d)?;
            let x4: Vec<f64> = (0..dims.n_y).map(|i| x[i] + h * k3[i]).collect();
            let k4 = plant.xdot(&x4, &u, &d)?;
            for i in 0..dims.n_y {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        if linalg::norm_inf_vec(&x) > BLOWUP_LIMIT {
            return Ok(Trajectory {
                rows,
                abort: Some(alloc::format!("state blew up at t = {}", t + delta)),
            });
        }
    }
    Ok(Trajectory { rows, abort: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_realizable(seed: u64) -> SyntheticPlant {
        let arch = ShwArch::sized(standard_dims(), 0.1, 1, &[6], &[6], &[6], &[6], true).unwrap();
        SyntheticPlant::realizable(arch, seed).unwrap()
    }

    #[test]
    fn zero_excitation_settles_to_equilibrium() {
        let plant = small_realizable(5);
        let mut exc = ExcitationConfig::standard(standard_dims(), 9);
        exc.u_lower = vec![0.0; 3];
        exc.u_upper = vec![1e-9; 3];
        exc.d_amplitude = vec![0.0, 0.0];
        let ds = generate_dataset(&plant, &exc, 30.0, 0.1).unwrap();
        let last = ds.records().last().unwrap();
        let ydot = last.ydot.as_ref().unwrap();
        assert!(linalg::norm_inf_vec(ydot) < 1e-3, "ydot {ydot:?}");
    }

    #[test]
    fn excitation_covers_the_input_box() {
        let plant = small_realizable(6);
        let exc = ExcitationConfig::standard(standard_dims(), 10);
        let ds = generate_dataset(&plant, &exc, 60.0, 0.1).unwrap();
        for i in 0..3 {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for r in ds.records() {
                lo = math::min(lo, r.u[i]);
                hi = math::max(hi, r.u[i]);
            }
            assert!(hi - lo >= 0.8 * 2.0, "channel {i} span {}", hi - lo);
        }
    }

    #[test]
    fn same_seed_reproduces_identical_dataset() {
        let plant = small_realizable(7);
        let exc = ExcitationConfig::standard(standard_dims(), 11);
        let a = generate_dataset(&plant, &exc, 10.0, 0.1).unwrap();
        let b = generate_dataset(&plant, &exc, 10.0, 0.1).unwrap();
        assert_eq!(a.len(), b.len());
        for (ra, rb) in a.records().iter().zip(b.records()) {
            assert_eq!(ra.y, rb.y);
            assert_eq!(ra.u, rb.u);
            assert_eq!(ra.z, rb.z);
            assert_eq!(ra.ydot, rb.ydot);
        }
    }

    #[test]
    fn derivatives_match_differences_to_second_order() {
        let plant = small_realizable(8);
        let mut exc = ExcitationConfig::standard(standard_dims(), 12);
        exc.hold_steps = 1000; // constant input: y is smooth throughout
        let ds = generate_dataset(&plant, &exc, 10.0, 0.05).unwrap();
        let recs = ds.records();
        let mut max_err: f64 = 0.0;
        for i in 1..recs.len() - 1 {
            let dt = recs[i + 1].t - recs[i - 1].t;
            for c in 0..3 {
                let fd = (recs[i + 1].y[c] - recs[i - 1].y[c]) / dt;
                let exact = recs[i].ydot.as_ref().unwrap()[c];
                max_err = math::max(max_err, math::abs(fd - exact));
            }
        }
        // central difference error is O(delta^2)
        assert!(max_err < 0.05 * 0.05 * 10.0, "max_err {max_err}");
    }

    #[test]
    fn integrator_is_fourth_order() {
        // halve the step by doubling the sampling rate on the misspecified
        // plant and compare against a much finer reference
        let plant = SyntheticPlant::misspecified(3, 0.1).unwrap();
        let u = [0.3, -0.5, 0.8];
        let d = [0.2, -0.1];
        let x0 = [0.4, -0.2, 0.1];
        let run = |substeps: usize| -> Vec<f64> {
            let mut x = x0.to_vec();
            let h = 0.4 / substeps as f64;
            for _ in 0..substeps {
                let k1 = plant.xdot(&x, &u, &d).unwrap();
                let x2: Vec<f64> = (0..3).map(|i| x[i] + 0.5 * h * k1[i]).collect();
                let k2 = plant.xdot(&x2, &u, &d).unwrap();
                let x3: Vec<f64> = (0..3).map(|i| x[i] + 0.5 * h * k2[i]).collect();
                let k3 = plant.xdot(&x3, &u, &d).unwrap();
                let x4: Vec<f64> = (0..3).map(|i| x[i] + h * k3[i]).collect();
                let k4 = plant.xdot(&x4, &u, &d).unwrap();
                for i in 0..3 {
                    x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
            x
        };
        let reference = run(4096);
        let err_coarse: f64 = run(8)
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, math::max);
        let err_fine: f64 = run(16)
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, math::max);
        let ratio = err_coarse / err_fine;
        assert!(ratio > 10.0 && ratio < 24.0, "ratio {ratio}");
    }

    #[test]
    fn noise_changes_outputs_at_the_requested_scale() {
        let plant = small_realizable(9);
        let exc = ExcitationConfig::standard(standard_dims(), 13);
        let clean = generate_dataset(&plant, &exc, 20.0, 0.1).unwrap();
        let noisy = add_output_noise(&clean, 0.01, 99);
        let mut diff = 0.0;
        let mut scale = 0.0;
        for (a, b) in clean.records().iter().zip(noisy.records()) {
            for c in 0..3 {
                diff += (a.y[c] - b.y[c]) * (a.y[c] - b.y[c]);
                scale += a.y[c] * a.y[c];
            }
        }
        let rel = math::sqrt(diff / scale);
        assert!(rel > 1e-4 && rel < 0.05, "rel {rel}");
    }

    #[test]
    fn closed_loop_constant_input_matches_generator() {
        // a controller that replays the generator's ZOH level reproduces the
        // open-loop integration path
        let plant = small_realizable(10);
        let scenario = Scenario {
            x0: vec![0.0; 3],
            reference: Schedule::constant(vec![0.0; 3]),
            disturbance: Schedule::constant(vec![0.1, -0.2]),
            u_lower: vec![-1.0; 3],
            u_upper: vec![1.0; 3],
        };
        let u_const = vec![0.4, -0.3, 0.2];
        let mut ctrl = |_t: f64, _y: &[f64], _d: &[f64], _r: &[f64]| Ok(u_const.clone());
        let traj = closed_loop(&plant, &mut ctrl, &scenario, 5.0).unwrap();
        assert!(traj.abort.is_none());

        // reference integration with the same stepping
        let mut x = vec![0.0; 3];
        let h = plant.delta / 20.0;
        let d = [0.1, -0.2];
        for row in &traj.rows {
            let y = plant.output_y(&x, &d).unwrap();
            for c in 0..3 {
                assert!((row.y[c] - y[c]).abs() < 1e-12);
            }
            for _ in 0..20 {
                let k1 = plant.xdot(&x, &u_const, &d).unwrap();
                let x2: Vec<f64> = (0..3).map(|i| x[i] + 0.5 * h * k1[i]).collect();
                let k2 = plant.xdot(&x2, &u_const, &d).unwrap();
                let x3: Vec<f64> = (0..3).map(|i| x[i] + 0.5 * h * k2[i]).collect();
                let k3 = plant.xdot(&x3, &u_const, &d).unwrap();
                let x4: Vec<f64> = (0..3).map(|i| x[i] + h * k3[i]).collect();
                let k4 = plant.xdot(&x4, &u_const, &d).unwrap();
                for i in 0..3 {
                    x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
        }
    }

    #[test]
    fn out_of_box_controller_aborts_with_partial_log() {
        let plant = small_realizable(11);
        let scenario = Scenario {
            x0: vec![0.0; 3],
            reference: Schedule::constant(vec![0.0; 3]),
            disturbance: Schedule::constant(vec![0.0, 0.0]),
            u_lower: vec![-1.0; 3],
            u_upper: vec![1.0; 3],
        };
        let mut ctrl = |t: f64, _y: &[f64], _d: &[f64], _r: &[f64]| {
            Ok(if t < 0.5 { vec![0.0; 3] } else { vec![2.0, 0.0, 0.0] })
        };
        let traj = closed_loop(&plant, &mut ctrl, &scenario, 2.0).unwrap();
        assert!(traj.abort.is_some());
        assert!(!traj.rows.is_empty());
        assert!(traj.rows.len() < 20);
    }

    #[test]
    fn schedule_lookup() {
        let s = Schedule {
            entries: vec![(0.0, vec![1.0]), (2.0, vec![5.0]), (4.0, vec![9.0])],
        };
        assert_eq!(s.at(0.0)[0], 1.0);
        assert_eq!(s.at(1.99)[0], 1.0);
        assert_eq!(s.at(2.0)[0], 5.0);
        assert_eq!(s.at(100.0)[0], 9.0);
    }
}

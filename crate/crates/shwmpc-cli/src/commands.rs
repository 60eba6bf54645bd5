//! The seven subcommands. Each reads its inputs from the output directory,
//! performs one pipeline stage, writes its artifacts plus a run report, and
//! (with `--check`) evaluates its acceptance thresholds.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use shwmpc_core::baseline::{
    baseline_fit, baseline_mpc_solve, BaselineFitConfig, BaselineFz, DenseNnModel,
};
use shwmpc_core::cbf::{cbf_closed_loop, find_equilibrium, Barrier, CbfController, ModelBarrier};
use shwmpc_core::ident::fit;
use shwmpc_core::linalg::Matrix;
use shwmpc_core::ocp::{
    assemble_sweep, sweep_point, v_init_from_u, FzSpec, OcpInstance, SweepConfig, SweepRow,
    ZConstraintMode, KKT_TOL,
};
use shwmpc_core::plant::{
    add_output_noise, closed_loop, generate_dataset, ExcitationConfig, Scenario, Schedule,
    SyntheticPlant, Trajectory,
};
use shwmpc_core::rng::Rng;
use shwmpc_core::shw::simulate_discrete;

use crate::config::RunConfig;
use crate::csvio;
use crate::modelfile;
use crate::report::{CheckOutcome, RunReport};
use crate::CliError;

pub struct Ctx {
    pub config: RunConfig,
    pub config_hash: String,
    pub out_dir: PathBuf,
    pub check: bool,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn finish(&self, mut report: RunReport, checks: Vec<(bool, String)>) -> Result<(), CliError> {
        let check_failed = if self.check {
            let passed = checks.iter().all(|(ok, _)| *ok);
            for (ok, detail) in &checks {
                println!("[{}] {detail}", if *ok { "PASS" } else { "FAIL" });
            }
            report.check = Some(CheckOutcome {
                passed,
                details: checks.into_iter().map(|(_, d)| d).collect(),
            });
            !passed
        } else {
            false
        };
        let report_path = self.path(&format!("run_{}.json", report.command));
        report.write(&report_path)?;
        println!("report: {}", report_path.display());
        if check_failed {
            return Err(CliError::CheckFailed("one or more checks failed".into()));
        }
        Ok(())
    }
}

fn build_plant(cfg: &RunConfig) -> Result<SyntheticPlant, CliError> {
    match cfg.plant.mode.as_str() {
        "realizable" => {
            // the ground truth uses the same architecture family as the model
            let arch = cfg.shw_arch()?;
            SyntheticPlant::realizable(arch, cfg.plant.seed).map_err(CliError::from)
        }
        "misspecified" => {
            let dims = cfg.signal_dims()?;
            if dims != shwmpc_core::plant::standard_dims() {
                return Err(CliError::Config(
                    "misspecified plant mode requires dims 3/3/1/2".into(),
                ));
            }
            SyntheticPlant::misspecified(cfg.plant.seed, cfg.delta).map_err(CliError::from)
        }
        other => Err(CliError::Config(format!("unknown plant mode \"{other}\""))),
    }
}

pub fn cmd_generate(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let dims = cfg.signal_dims()?;
    let mut report = RunReport::new("generate", cfg.seed, &ctx.config_hash);

    let t0 = Instant::now();
    let plant = build_plant(cfg)?;
    let mut exc = ExcitationConfig::standard(dims, cfg.plant.excitation_seed);
    exc.u_lower = cfg.ocp.u_lower.clone();
    exc.u_upper = cfg.ocp.u_upper.clone();
    exc.hold_steps = cfg.plant.hold_steps;
    exc.corner_fraction = cfg.plant.corner_fraction;
    let mut data = generate_dataset(&plant, &exc, cfg.plant.duration, cfg.delta)?;
    if cfg.plant.noise_pct > 0.0 {
        data = add_output_noise(&data, cfg.plant.noise_pct, cfg.seed ^ 0x6e6f_6973);
    }
    report.timing("generate", t0.elapsed().as_secs_f64() * 1e3);

    let path = ctx.path("dataset.csv");
    csvio::write_dataset(&path, &data)?;
    report.artifact(&path);
    report.metric("records", serde_json::json!(data.len()));
    report.metric_f64("noise_pct", cfg.plant.noise_pct);

    // coverage of the input box per channel
    let mut checks = Vec::new();
    let mut min_span: f64 = f64::INFINITY;
    for i in 0..dims.n_u {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for r in data.records() {
            lo = lo.min(r.u[i]);
            hi = hi.max(r.u[i]);
        }
        let span = (hi - lo) / (cfg.ocp.u_upper[i] - cfg.ocp.u_lower[i]);
        min_span = min_span.min(span);
    }
    report.metric_f64("min_input_coverage", min_span);
    if ctx.check {
        checks.push((
            min_span >= 0.8,
            format!("generate: input coverage {min_span:.3} (>= 0.8)"),
        ));
    }
    ctx.finish(report, checks)
}

pub fn cmd_train(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let dims = cfg.signal_dims()?;
    let mut report = RunReport::new("train", cfg.seed, &ctx.config_hash);

    let data = csvio::read_dataset(&ctx.path("dataset.csv"), dims)?;
    let arch = cfg.shw_arch()?;
    let ident_cfg = cfg.ident_config()?;

    let t0 = Instant::now();
    let (model, train_report) = fit(&data, &arch, &ident_cfg)?;
    report.timing("train", t0.elapsed().as_secs_f64() * 1e3);

    let model_path = ctx.path("model.json");
    modelfile::save_structured(&model_path, &model, cfg.seed, &ctx.config_hash)?;
    let (reloaded, _, _) = modelfile::load_structured(&model_path)?;
    if reloaded.theta != model.theta {
        return Err(CliError::Numerical("model file failed its roundtrip check".into()));
    }
    report.artifact(&model_path);

    let tr_path = ctx.path("train_report.json");
    let epochs: Vec<serde_json::Value> = train_report
        .epochs
        .iter()
        .map(|e| serde_json::json!({"train_loss": e.train_loss, "val_loss": e.val_loss}))
        .collect();
    let tr_json = serde_json::json!({
        "config_hash": ctx.config_hash,
        "seed": cfg.seed,
        "param_count": train_report.param_count,
        "train_records": train_report.train_records,
        "val_records": train_report.val_records,
        "final_train_loss": train_report.final_train_loss,
        "final_val_loss": train_report.final_val_loss,
        "one_step_r2": train_report.one_step_r2,
        "min_jac_det": train_report.min_jac_det,
        "epochs": epochs,
    });
    std::fs::write(&tr_path, serde_json::to_string_pretty(&tr_json).unwrap())
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", tr_path.display())))?;
    report.artifact(&tr_path);

    report.metric_f64("final_val_loss", train_report.final_val_loss);
    report.metric("one_step_r2", serde_json::json!(train_report.one_step_r2));
    report.metric_f64("min_jac_det", train_report.min_jac_det);

    let mut checks = Vec::new();
    if ctx.check {
        if cfg.plant.noise_pct == 0.0 {
            checks.push((
                train_report.final_val_loss <= 1e-4,
                format!(
                    "train: validation loss {:.3e} (<= 1e-4, noiseless)",
                    train_report.final_val_loss
                ),
            ));
        } else {
            let r2_min =
                train_report.one_step_r2.iter().cloned().fold(f64::INFINITY, f64::min);
            checks.push((
                r2_min >= 0.99,
                format!("train: one-step R2 min {r2_min:.5} (>= 0.99 with noise)"),
            ));
        }
    }
    ctx.finish(report, checks)
}

pub fn cmd_solve(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let dims = cfg.signal_dims()?;
    let mut report = RunReport::new("solve", cfg.seed, &ctx.config_hash);
    let (model, _, _) = modelfile::load_structured(&ctx.path("model.json"))?;

    let x0 = model.output_map(&cfg.ocp.y0, &cfg.ocp.d_ref)?;
    let z_mode = if cfg.ocp.z_mode == "hard" { ZConstraintMode::Hard } else { ZConstraintMode::Soft };
    let inst = OcpInstance::new(
        &model,
        &x0,
        &cfg.ocp.d_ref,
        &cfg.ocp.r_ref,
        cfg.ocp.horizon,
        FzSpec { weights: cfg.ocp.z_weights.clone(), ceilings: cfg.ocp.z_ceilings.clone() },
        &cfg.ocp.u_lower,
        &cfg.ocp.u_upper,
        z_mode,
        None,
    )?;
    let u_mid: Vec<f64> = (0..dims.n_u)
        .map(|i| 0.5 * (cfg.ocp.u_lower[i] + cfg.ocp.u_upper[i]))
        .collect();
    let v_init = v_init_from_u(&model, &u_mid, &cfg.ocp.d_ref, cfg.ocp.horizon)?;

    let t0 = Instant::now();
    let sol = inst.solve(&v_init)?;
    report.timing("solve", t0.elapsed().as_secs_f64() * 1e3);

    // predicted evolution under the solution
    let dm = model.discretize(&cfg.ocp.d_ref)?;
    let us: Vec<Vec<f64>> = (0..cfg.ocp.horizon)
        .map(|k| sol.u_star[k * dims.n_u..(k + 1) * dims.n_u].to_vec())
        .collect();
    let traj = simulate_discrete(&dm, &model, &x0, &us, &cfg.ocp.d_ref)?;

    let path = ctx.path("solve.csv");
    csvio::write_solve(
        &path,
        dims,
        cfg.ocp.horizon,
        &csvio::SolveCsv {
            u: &sol.u_star,
            v: &sol.v_star,
            x: &traj.x[1..],
            y: &traj.y[1..],
            z: &traj.z,
        },
    )?;
    report.artifact(&path);
    report.metric_f64("objective", sol.objective);
    report.metric_f64("kkt_residual", sol.kkt_residual_inf);
    report.metric("iterations", serde_json::json!(sol.iterations));

    let mut checks = Vec::new();
    if ctx.check {
        checks.push((
            sol.kkt_residual_inf <= KKT_TOL,
            format!("solve: KKT residual {:.2e} (<= 1e-8)", sol.kkt_residual_inf),
        ));
    }
    ctx.finish(report, checks)
}

fn thread_cap() -> usize {
    std::env::var("SHWMPC_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
        .min(16)
}

/// Run a per-grid-point closure in parallel, preserving grid order.
fn parallel_points<F>(grid: &[f64], work: F) -> Result<Vec<Vec<SweepRow>>, CliError>
where
    F: Fn(f64) -> Result<Vec<SweepRow>, CliError> + Sync,
{
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Vec<SweepRow>>>> = Mutex::new(vec![None; grid.len()]);
    let first_err: Mutex<Option<CliError>> = Mutex::new(None);
    let threads = thread_cap().min(grid.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= grid.len() {
                    break;
                }
                match work(grid[i]) {
                    Ok(rows) => {
                        results.lock().unwrap()[i] = Some(rows);
                    }
                    Err(e) => {
                        let mut slot = first_err.lock().unwrap();
                        if slot.is_none() {
                            *slot = Some(e);
                        }
                        break;
                    }
                }
            });
        }
    });
    if let Some(e) = first_err.into_inner().unwrap() {
        return Err(e);
    }
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.ok_or_else(|| CliError::Numerical("sweep point missing".into())))
        .collect()
}

fn grid_values(cfg: &RunConfig) -> Vec<f64> {
    let n = cfg.sweep.points;
    (0..n)
        .map(|i| cfg.sweep.lo + (cfg.sweep.hi - cfg.sweep.lo) * i as f64 / (n - 1) as f64)
        .collect()
}

pub fn cmd_sweep(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let dims = cfg.signal_dims()?;
    let mut report = RunReport::new("sweep", cfg.seed, &ctx.config_hash);
    let (model, _, _) = modelfile::load_structured(&ctx.path("model.json"))?;

    let grid = grid_values(cfg);
    let sweep = SweepConfig {
        coord: cfg.sweep.coord,
        y_base: cfg.sweep.y_base.clone(),
        values: grid.clone(),
    };
    let mut v_inits = Vec::new();
    for init in &cfg.sweep.inits {
        let u_step: Vec<f64> = match init.as_str() {
            "mid" => (0..dims.n_u)
                .map(|i| 0.5 * (cfg.sweep.u_lower[i] + cfg.sweep.u_upper[i]))
                .collect(),
            _ => cfg.sweep.u_lower.iter().map(|l| l + 1e-9).collect(),
        };
        v_inits.push(v_init_from_u(&model, &u_step, &cfg.ocp.d_ref, cfg.ocp.horizon)?);
    }
    let fz = FzSpec { weights: cfg.ocp.z_weights.clone(), ceilings: cfg.ocp.z_ceilings.clone() };

    let t0 = Instant::now();
    let points = parallel_points(&grid, |gv| {
        sweep_point(
            &model,
            &cfg.ocp.d_ref,
            &cfg.ocp.r_ref,
            &sweep,
            gv,
            &v_inits,
            cfg.ocp.horizon,
            &fz,
            &cfg.sweep.u_lower,
            &cfg.sweep.u_upper,
        )
        .map_err(CliError::from)
    })?;
    let table = assemble_sweep(&grid, dims.n_u, points);
    report.timing("sweep", t0.elapsed().as_secs_f64() * 1e3);

    let path = ctx.path("sweep.csv");
    csvio::write_sweep(&path, &table, dims.n_u)?;
    report.artifact(&path);
    let summary_path = ctx.path("sweep_summary.csv");
    csvio::write_sweep_summary(&summary_path, &table)?;
    report.artifact(&summary_path);

    let max_dis = table.disagreement.iter().cloned().fold(0.0f64, f64::max);
    let mut quotients = table.diff_quotient.clone();
    quotients.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let median = quotients.get(quotients.len() / 2).copied().unwrap_or(f64::NAN);
    let max_q = quotients.last().copied().unwrap_or(f64::NAN);
    let solver_errors = table.rows.iter().filter(|r| r.error.is_some()).count();
    let worst_kkt = table
        .rows
        .iter()
        .filter(|r| r.error.is_none())
        .map(|r| r.kkt_residual)
        .fold(0.0f64, f64::max);
    report.metric_f64("max_disagreement", max_dis);
    report.metric_f64("median_diff_quotient", median);
    report.metric_f64("max_diff_quotient", max_q);
    report.metric("solver_errors", serde_json::json!(solver_errors));
    report.metric_f64("worst_kkt_residual", worst_kkt);

    let mut checks = Vec::new();
    if ctx.check {
        checks.push((solver_errors == 0, format!("sweep: solver errors {solver_errors} (== 0)")));
        checks.push((
            max_dis <= 1e-6,
            format!("sweep: multi-start disagreement {max_dis:.2e} (<= 1e-6)"),
        ));
        checks.push((
            worst_kkt <= KKT_TOL,
            format!("sweep: worst KKT residual {worst_kkt:.2e} (<= 1e-8)"),
        ));
        checks.push((
            max_q.is_finite() && max_q <= 10.0 * median,
            format!(
                "sweep: max difference quotient {max_q:.3} vs 10 x median {:.3}",
                10.0 * median
            ),
        ));
    }
    ctx.finish(report, checks)
}

fn schedule_from_rows(rows: &[Vec<f64>]) -> Schedule {
    Schedule {
        entries: rows.iter().map(|row| (row[0], row[1..].to_vec())).collect(),
    }
}

pub fn cmd_mpc(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let dims = cfg.signal_dims()?;
    let mut report = RunReport::new("mpc", cfg.seed, &ctx.config_hash);
    let (model, _, _) = modelfile::load_structured(&ctx.path("model.json"))?;
    let plant = build_plant(cfg)?;

    let scenario = Scenario {
        x0: cfg.mpc.x0.clone(),
        reference: schedule_from_rows(&cfg.mpc.r_schedule),
        disturbance: schedule_from_rows(&cfg.mpc.d_schedule),
        u_lower: cfg.ocp.u_lower.clone(),
        u_upper: cfg.ocp.u_upper.clone(),
    };
    let fz = FzSpec { weights: cfg.ocp.z_weights.clone(), ceilings: cfg.ocp.z_ceilings.clone() };
    let horizon = cfg.ocp.horizon;

    let mut warm: Option<Vec<f64>> = None;
    let mut solves = 0usize;
    let mut solve_time = 0.0f64;
    let mut controller = |_t: f64, y: &[f64], d: &[f64], r: &[f64]| {
        let x0 = model.output_map(y, d)?;
        let inst = OcpInstance::new(
            &model,
            &x0,
            d,
            r,
            horizon,
            fz.clone(),
            &cfg.ocp.u_lower,
            &cfg.ocp.u_upper,
            ZConstraintMode::Soft,
            None,
        )?;
        let init = warm.clone().unwrap_or_else(|| vec![0.0; inst.n_v()]);
        let t = Instant::now();
        let sol = inst.solve(&init)?;
        solve_time += t.elapsed().as_secs_f64();
        solves += 1;
        warm = Some(sol.v_star.clone());
        Ok(inst.first_input(&sol))
    };

    let t0 = Instant::now();
    let traj = closed_loop(&plant, &mut controller, &scenario, cfg.mpc.duration)?;
    report.timing("closed_loop", t0.elapsed().as_secs_f64() * 1e3);
    report.timing("mean_solve", solve_time * 1e3 / solves.max(1) as f64);

    let path = ctx.path("mpc.csv");
    csvio::write_trajectory(&path, &traj, dims)?;
    report.artifact(&path);

    if let Some(reason) = &traj.abort {
        report.metric("abort", serde_json::json!(reason));
        let report_path = ctx.path("run_mpc.json");
        report.write(&report_path)?;
        return Err(CliError::Numerical(format!("closed loop aborted: {reason}")));
    }

    let (max_err_rel, spans) = tracking_error(&traj, &cfg.mpc.r_schedule, cfg.mpc.duration, cfg.mpc.transient_fraction, dims.n_y);
    report.metric_f64("max_tracking_error_rel_span", max_err_rel);
    report.metric("reference_spans", serde_json::json!(spans));
    let z_peak = traj.rows.iter().map(|r| r.z[0]).fold(f64::NEG_INFINITY, f64::max);
    report.metric_f64("z_peak", z_peak);

    let mut checks = Vec::new();
    if ctx.check {
        checks.push((
            max_err_rel <= 0.01,
            format!("mpc: settled tracking error {max_err_rel:.5} of reference span (<= 0.01)"),
        ));
    }
    ctx.finish(report, checks)
}

/// Largest settled tracking error relative to each channel's reference span.
/// The first `transient_fraction` of every reference hold interval is
/// excluded.
fn tracking_error(
    traj: &Trajectory,
    r_schedule: &[Vec<f64>],
    duration: f64,
    transient_fraction: f64,
    n_y: usize,
) -> (f64, Vec<f64>) {
    let mut spans = vec![0.0f64; n_y];
    for i in 0..n_y {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for row in r_schedule {
            lo = lo.min(row[1 + i]);
            hi = hi.max(row[1 + i]);
        }
        // a constant reference still needs a scale; use its magnitude
        spans[i] = if hi > lo { hi - lo } else { hi.abs().max(1.0) };
    }
    let mut boundaries: Vec<f64> = r_schedule.iter().map(|row| row[0]).collect();
    boundaries.push(duration);
    let mut worst = 0.0f64;
    for row in &traj.rows {
        // find the hold interval containing t
        let mut settled = false;
        for w in boundaries.windows(2) {
            if row.t >= w[0] && row.t < w[1] {
                settled = row.t >= w[0] + transient_fraction * (w[1] - w[0]);
                break;
            }
        }
        if !settled {
            continue;
        }
        for i in 0..n_y {
            worst = worst.max((row.y[i] - row.r[i]).abs() / spans[i]);
        }
    }
    (worst, spans)
}

pub fn cmd_cbf(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let dims = cfg.signal_dims()?;
    let mut report = RunReport::new("cbf", cfg.seed, &ctx.config_hash);
    let (model, _, _) = modelfile::load_structured(&ctx.path("model.json"))?;
    if model.arch.xi_depends_on_v {
        return Err(CliError::Config(
            "the barrier controller needs a model trained with arch.xi_depends_on_v = false"
                .into(),
        ));
    }

    let eq = find_equilibrium(
        &model,
        &cfg.cbf.d_ref,
        &cfg.cbf.r_ref,
        &cfg.ocp.u_lower,
        &cfg.ocp.u_upper,
    )?;
    let barrier = ModelBarrier::new(&model, &cfg.cbf.d_ref)?;
    let z_eq = barrier.eval(&eq.x_bar)?[0];

    // starting state: configured, or the lowest-z point found near the target
    let x0 = if cfg.cbf.x0.is_empty() {
        let mut probe = Rng::new(cfg.seed ^ 0xcbf);
        let mut best = eq.x_bar.clone();
        let mut best_z = z_eq;
        for _ in 0..200 {
            let cand: Vec<f64> =
                (0..dims.n_y).map(|i| eq.x_bar[i] + probe.range(-0.6, 0.6)).collect();
            if let Ok(z) = barrier.eval(&cand) {
                if z[0] < best_z {
                    best_z = z[0];
                    best = cand;
                }
            }
        }
        best
    } else {
        cfg.cbf.x0.clone()
    };
    let z0 = barrier.eval(&x0)?[0];

    let ceilings: Vec<f64> = if cfg.cbf.z_ceilings.is_empty() {
        if z_eq <= z0 {
            return Err(CliError::Numerical(format!(
                "cannot derive a binding ceiling: start z {z0} is not below target z {z_eq}"
            )));
        }
        vec![z0 + cfg.cbf.auto_ceiling_fraction * (z_eq - z0); dims.n_z]
    } else {
        cfg.cbf.z_ceilings.clone()
    };
    report.metric("z_ceilings", serde_json::json!(ceilings));
    report.metric_f64("z_start", z0);
    report.metric_f64("z_target_equilibrium", z_eq);

    let q = Matrix::identity(dims.n_y).scale(cfg.cbf.q_scale);
    let ctrl = CbfController::new(
        &model,
        eq,
        &q,
        &cfg.cbf.gammas,
        &ceilings,
        &cfg.ocp.u_lower,
        &cfg.ocp.u_upper,
        cfg.riccati_form()?,
    )?;

    let t0 = Instant::now();
    let traj = cbf_closed_loop(&ctrl, &model, &barrier, &x0, cfg.cbf.steps, cfg.cbf.fine_substeps)?;
    report.timing("cbf_loop", t0.elapsed().as_secs_f64() * 1e3);

    let path = ctx.path("cbf.csv");
    csvio::write_cbf_trajectory(&path, &traj, dims)?;
    report.artifact(&path);
    report.metric_f64("max_violation", traj.max_violation);
    let active_steps = traj.rows.iter().filter(|r| r.active.iter().any(|a| *a)).count();
    report.metric("active_steps", serde_json::json!(active_steps));

    let mut checks = Vec::new();
    if ctx.check {
        checks.push((
            traj.max_violation <= 1e-3,
            format!("cbf: ceiling violation {:.2e} (<= 1e-3)", traj.max_violation),
        ));
    }
    ctx.finish(report, checks)
}

pub fn cmd_baseline(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let dims = cfg.signal_dims()?;
    let mut report = RunReport::new("baseline", cfg.seed, &ctx.config_hash);
    let data = csvio::read_dataset(&ctx.path("dataset.csv"), dims)?;

    let structured_params = cfg.shw_arch()?.param_count();
    let hidden = if cfg.baseline.hidden > 0 {
        cfg.baseline.hidden
    } else {
        DenseNnModel::hidden_for_param_target(dims, structured_params)
    };
    let fit_cfg = BaselineFitConfig {
        epochs: cfg.baseline.epochs,
        batch_size: cfg.baseline.batch_size,
        lr: cfg.baseline.lr,
        seed: cfg.baseline.seed,
        val_fraction: cfg.baseline.val_fraction,
        init_std: cfg.baseline.init_std,
    };

    let t0 = Instant::now();
    let (model, fit_report) = baseline_fit(&data, hidden, &fit_cfg)?;
    report.timing("fit", t0.elapsed().as_secs_f64() * 1e3);

    let model_path = ctx.path("baseline_model.json");
    modelfile::save_baseline(&model_path, &model, cfg.seed, &ctx.config_hash)?;
    let (reloaded, _, _) = modelfile::load_baseline(&model_path)?;
    if reloaded.theta != model.theta {
        return Err(CliError::Numerical("baseline model file failed its roundtrip check".into()));
    }
    report.artifact(&model_path);

    let br_path = ctx.path("baseline_report.json");
    let br_json = serde_json::json!({
        "config_hash": ctx.config_hash,
        "seed": cfg.seed,
        "hidden": hidden,
        "param_count": fit_report.param_count,
        "structured_param_count": structured_params,
        "param_ratio": fit_report.param_count as f64 / structured_params as f64,
        "final_train_mse": fit_report.final_train_mse,
        "final_val_mse": fit_report.final_val_mse,
        "r2_y": fit_report.r2_y,
        "r2_z": fit_report.r2_z,
    });
    std::fs::write(&br_path, serde_json::to_string_pretty(&br_json).unwrap())
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", br_path.display())))?;
    report.artifact(&br_path);
    report.metric("param_count", serde_json::json!(fit_report.param_count));
    report.metric("structured_param_count", serde_json::json!(structured_params));
    report.metric("r2_y", serde_json::json!(fit_report.r2_y));

    // the same sweep grid, solved by SQP from the configured inits, with the
    // operational input box (the interesting regime for the comparison)
    let grid = grid_values(cfg);
    let fz = BaselineFz {
        weights: cfg.ocp.z_weights.clone(),
        ceilings: cfg.ocp.z_ceilings.clone(),
    };
    let u_inits: Vec<Vec<f64>> = cfg
        .sweep
        .inits
        .iter()
        .map(|init| {
            let u_step: Vec<f64> = match init.as_str() {
                "mid" => (0..dims.n_u)
                    .map(|i| 0.5 * (cfg.ocp.u_lower[i] + cfg.ocp.u_upper[i]))
                    .collect(),
                _ => cfg.ocp.u_lower.clone(),
            };
            let mut stacked = Vec::with_capacity(cfg.ocp.horizon * dims.n_u);
            for _ in 0..cfg.ocp.horizon {
                stacked.extend_from_slice(&u_step);
            }
            stacked
        })
        .collect();

    let t1 = Instant::now();
    let points = parallel_points(&grid, |gv| {
        let mut y0 = cfg.sweep.y_base.clone();
        y0[cfg.sweep.coord] = gv;
        let mut rows = Vec::with_capacity(u_inits.len());
        for (init_id, ui) in u_inits.iter().enumerate() {
            match baseline_mpc_solve(
                &model,
                &y0,
                &cfg.ocp.d_ref,
                &cfg.ocp.r_ref,
                cfg.ocp.horizon,
                &fz,
                &cfg.ocp.u_lower,
                &cfg.ocp.u_upper,
                ui,
            ) {
                Ok(sol) => rows.push(SweepRow {
                    grid_value: gv,
                    init_id,
                    u_first: sol.u_star[..dims.n_u].to_vec(),
                    objective: sol.objective,
                    kkt_residual: sol.stationarity_inf,
                    iterations: sol.iterations,
                    error: None,
                }),
                Err(e) => rows.push(SweepRow {
                    grid_value: gv,
                    init_id,
                    u_first: vec![f64::NAN; dims.n_u],
                    objective: f64::NAN,
                    kkt_residual: f64::NAN,
                    iterations: 0,
                    error: Some(format!("{e}")),
                }),
            }
        }
        Ok(rows)
    })?;
    let table = assemble_sweep(&grid, dims.n_u, points);
    report.timing("sweep", t1.elapsed().as_secs_f64() * 1e3);

    let path = ctx.path("sweep_baseline.csv");
    csvio::write_sweep(&path, &table, dims.n_u)?;
    report.artifact(&path);
    let summary_path = ctx.path("sweep_baseline_summary.csv");
    csvio::write_sweep_summary(&summary_path, &table)?;
    report.artifact(&summary_path);

    let max_dis = table.disagreement.iter().cloned().filter(|d| d.is_finite()).fold(0.0f64, f64::max);
    report.metric_f64("max_multistart_disagreement", max_dis);

    let mut checks = Vec::new();
    if ctx.check {
        let r2_min = fit_report.r2_y.iter().cloned().fold(f64::INFINITY, f64::min);
        checks.push((
            r2_min >= 0.98,
            format!("baseline: one-step R2 min {r2_min:.4} (>= 0.98)"),
        ));
        let ratio = fit_report.param_count as f64 / structured_params as f64;
        checks.push((
            (0.8..=1.2).contains(&ratio),
            format!("baseline: parameter-count ratio {ratio:.3} (within +-20%)"),
        ));
    }
    ctx.finish(report, checks)
}

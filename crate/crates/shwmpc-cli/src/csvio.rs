//! CSV readers and writers (RFC 4180, '.' decimal, mandatory header row).
//! Floats are written in Rust's shortest round-trip form so reruns are
//! byte-identical.

use shwmpc_core::cbf::CbfTrajectory;
use shwmpc_core::ident::{DataRecord, TimeSeriesDataset};
use shwmpc_core::ocp::SweepTable;
use shwmpc_core::plant::Trajectory;
use shwmpc_core::SignalDims;

use crate::CliError;

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

fn write_lines(path: &std::path::Path, lines: Vec<String>) -> Result<(), CliError> {
    let mut text = lines.join("\r\n");
    text.push_str("\r\n");
    std::fs::write(path, text)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

fn channel_headers(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("{prefix}_{i}")).collect()
}

pub fn write_dataset(path: &std::path::Path, data: &TimeSeriesDataset) -> Result<(), CliError> {
    let dims = data.dims();
    let mut header = vec!["t".to_string()];
    header.extend(channel_headers("u", dims.n_u));
    header.extend(channel_headers("d", dims.n_d));
    header.extend(channel_headers("y", dims.n_y));
    header.extend(channel_headers("z", dims.n_z));
    header.extend(channel_headers("du", dims.n_u));
    header.extend(channel_headers("dd", dims.n_d));
    header.extend(channel_headers("dy", dims.n_y));
    let mut lines = vec![header.join(",")];
    for r in data.records() {
        let mut cells = vec![fmt(r.t)];
        cells.extend(r.u.iter().map(|v| fmt(*v)));
        cells.extend(r.d.iter().map(|v| fmt(*v)));
        cells.extend(r.y.iter().map(|v| fmt(*v)));
        cells.extend(r.z.iter().map(|v| fmt(*v)));
        let zeros_u = vec![0.0; dims.n_u];
        let udot = r.udot.as_deref().unwrap_or(&zeros_u);
        cells.extend(udot.iter().map(|v| fmt(*v)));
        let zeros_d = vec![0.0; dims.n_d];
        let ddot = r.ddot.as_deref().unwrap_or(&zeros_d);
        cells.extend(ddot.iter().map(|v| fmt(*v)));
        let zeros_y = vec![0.0; dims.n_y];
        let ydot = r.ydot.as_deref().unwrap_or(&zeros_y);
        cells.extend(ydot.iter().map(|v| fmt(*v)));
        lines.push(cells.join(","));
    }
    write_lines(path, lines)
}

pub fn read_dataset(
    path: &std::path::Path,
    dims: SignalDims,
) -> Result<TimeSeriesDataset, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Config(format!("{}: empty file", path.display())))?;
    let expected_cols = 1 + 2 * (dims.n_u + dims.n_d + dims.n_y) + dims.n_z;
    let header_cols = header.trim_end_matches('\r').split(',').count();
    if header_cols != expected_cols {
        return Err(CliError::Config(format!(
            "{}: {header_cols} columns, expected {expected_cols} for these dims",
            path.display()
        )));
    }
    let mut records = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let cells: Vec<f64> = line
            .split(',')
            .map(|c| {
                c.parse::<f64>().map_err(|_| {
                    CliError::Config(format!(
                        "{} line {}: cannot parse \"{c}\"",
                        path.display(),
                        lineno + 2
                    ))
                })
            })
            .collect::<Result<_, _>>()?;
        if cells.len() != expected_cols {
            return Err(CliError::Config(format!(
                "{} line {}: {} cells, expected {expected_cols}",
                path.display(),
                lineno + 2,
                cells.len()
            )));
        }
        let mut at = 0;
        let mut take = |n: usize| {
            let s = cells[at..at + n].to_vec();
            at += n;
            s
        };
        let t = take(1)[0];
        let u = take(dims.n_u);
        let d = take(dims.n_d);
        let y = take(dims.n_y);
        let z = take(dims.n_z);
        let udot = take(dims.n_u);
        let ddot = take(dims.n_d);
        let ydot = take(dims.n_y);
        records.push(DataRecord {
            t,
            u,
            d,
            y,
            z,
            ydot: Some(ydot),
            ddot: Some(ddot),
            udot: Some(udot),
        });
    }
    TimeSeriesDataset::new(records, dims)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn write_sweep(path: &std::path::Path, table: &SweepTable, n_u: usize) -> Result<(), CliError> {
    let mut header = vec!["grid_value".to_string(), "init_id".to_string()];
    header.extend(channel_headers("u", n_u));
    header.extend(["objective", "kkt_residual", "iterations"].map(String::from));
    let mut lines = vec![header.join(",")];
    for r in &table.rows {
        let mut cells = vec![fmt(r.grid_value), r.init_id.to_string()];
        cells.extend(r.u_first.iter().map(|v| fmt(*v)));
        cells.push(fmt(r.objective));
        cells.push(fmt(r.kkt_residual));
        cells.push(r.iterations.to_string());
        lines.push(cells.join(","));
    }
    write_lines(path, lines)
}

pub fn write_sweep_summary(path: &std::path::Path, table: &SweepTable) -> Result<(), CliError> {
    let mut lines = vec!["grid_value,disagreement,diff_quotient".to_string()];
    for (i, gv) in table.grid.iter().enumerate() {
        let quot = if i < table.diff_quotient.len() {
            fmt(table.diff_quotient[i])
        } else {
            "NaN".into()
        };
        lines.push(format!("{},{},{}", fmt(*gv), fmt(table.disagreement[i]), quot));
    }
    write_lines(path, lines)
}

pub fn write_trajectory(
    path: &std::path::Path,
    traj: &Trajectory,
    dims: SignalDims,
) -> Result<(), CliError> {
    let mut header = vec!["t".to_string()];
    header.extend(channel_headers("u", dims.n_u));
    header.extend(channel_headers("d", dims.n_d));
    header.extend(channel_headers("r", dims.n_y));
    header.extend(channel_headers("y", dims.n_y));
    header.extend(channel_headers("z", dims.n_z));
    let mut lines = vec![header.join(",")];
    for row in &traj.rows {
        let mut cells = vec![fmt(row.t)];
        cells.extend(row.u.iter().map(|v| fmt(*v)));
        cells.extend(row.d.iter().map(|v| fmt(*v)));
        cells.extend(row.r.iter().map(|v| fmt(*v)));
        cells.extend(row.y.iter().map(|v| fmt(*v)));
        cells.extend(row.z.iter().map(|v| fmt(*v)));
        lines.push(cells.join(","));
    }
    write_lines(path, lines)
}

pub fn write_cbf_trajectory(
    path: &std::path::Path,
    traj: &CbfTrajectory,
    dims: SignalDims,
) -> Result<(), CliError> {
    let mut header = vec!["t".to_string()];
    header.extend(channel_headers("x", dims.n_y));
    header.extend(channel_headers("u", dims.n_u));
    header.extend(channel_headers("v", dims.n_u));
    header.extend(channel_headers("z", dims.n_z));
    header.extend(channel_headers("active", dims.n_z));
    let mut lines = vec![header.join(",")];
    for row in &traj.rows {
        let mut cells = vec![fmt(row.t)];
        cells.extend(row.x.iter().map(|v| fmt(*v)));
        cells.extend(row.u.iter().map(|v| fmt(*v)));
        cells.extend(row.v.iter().map(|v| fmt(*v)));
        cells.extend(row.z.iter().map(|v| fmt(*v)));
        cells.extend(row.active.iter().map(|a| if *a { "1" } else { "0" }.to_string()));
        lines.push(cells.join(","));
    }
    write_lines(path, lines)
}

/// Per-step solution of a single OCP: inputs, transformed inputs and the
/// predicted evolution.
pub struct SolveCsv<'a> {
    pub u: &'a [f64],
    pub v: &'a [f64],
    pub x: &'a [Vec<f64>],
    pub y: &'a [Vec<f64>],
    pub z: &'a [Vec<f64>],
}

pub fn write_solve(
    path: &std::path::Path,
    dims: SignalDims,
    horizon: usize,
    sol: &SolveCsv<'_>,
) -> Result<(), CliError> {
    let mut header = vec!["step".to_string()];
    header.extend(channel_headers("u", dims.n_u));
    header.extend(channel_headers("v", dims.n_u));
    header.extend(channel_headers("x", dims.n_y));
    header.extend(channel_headers("y", dims.n_y));
    header.extend(channel_headers("z", dims.n_z));
    let mut lines = vec![header.join(",")];
    for k in 0..horizon {
        let mut cells = vec![k.to_string()];
        cells.extend(sol.u[k * dims.n_u..(k + 1) * dims.n_u].iter().map(|v| fmt(*v)));
        cells.extend(sol.v[k * dims.n_u..(k + 1) * dims.n_u].iter().map(|v| fmt(*v)));
        cells.extend(sol.x[k].iter().map(|v| fmt(*v)));
        cells.extend(sol.y[k].iter().map(|v| fmt(*v)));
        cells.extend(sol.z[k].iter().map(|v| fmt(*v)));
        lines.push(cells.join(","));
    }
    write_lines(path, lines)
}

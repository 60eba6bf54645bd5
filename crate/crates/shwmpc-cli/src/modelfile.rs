//! Model file format: one JSON document with an architecture header and a
//! base64-encoded little-endian f64 array per parameter tensor. Portable and
//! diffable in the header; exact in the payload.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use shwmpc_core::baseline::DenseNnModel;
use shwmpc_core::shw::{ShwArch, ShwModel};
use shwmpc_core::SignalDims;

use crate::CliError;

pub const FORMAT: &str = "shwmpc-model";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    kind: String,
    seed: u64,
    config_hash: String,
    arch: ArchHeader,
    tensors: std::collections::BTreeMap<String, Tensor>,
}

#[derive(Serialize, Deserialize)]
struct ArchHeader {
    n_u: usize,
    n_y: usize,
    n_z: usize,
    n_d: usize,
    delta: f64,
    #[serde(default)]
    bnn_depth: usize,
    #[serde(default)]
    cond_hidden: Vec<usize>,
    #[serde(default)]
    picnn_z_hidden: Vec<usize>,
    #[serde(default)]
    picnn_eta_hidden: Vec<usize>,
    #[serde(default)]
    dyn_hidden: Vec<usize>,
    #[serde(default)]
    xi_depends_on_v: bool,
    #[serde(default)]
    psi_diag_signs: Vec<f64>,
    /// Hidden width of the baseline network (baseline kind only).
    #[serde(default)]
    hidden: usize,
}

#[derive(Serialize, Deserialize)]
struct Tensor {
    len: usize,
    data: String,
}

fn encode(values: &[f64]) -> Tensor {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    Tensor { len: values.len(), data: B64.encode(bytes) }
}

fn decode(t: &Tensor, name: &str) -> Result<Vec<f64>, CliError> {
    let bytes = B64
        .decode(&t.data)
        .map_err(|e| CliError::Config(format!("tensor {name}: bad base64: {e}")))?;
    if bytes.len() != t.len * 8 {
        return Err(CliError::Config(format!(
            "tensor {name}: payload length {} does not match declared {}",
            bytes.len() / 8,
            t.len
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn save_structured(
    path: &std::path::Path,
    model: &ShwModel,
    seed: u64,
    config_hash: &str,
) -> Result<(), CliError> {
    let arch = &model.arch;
    let slices = arch.slices();
    let mut tensors = std::collections::BTreeMap::new();
    tensors.insert("theta_psi".into(), encode(&model.theta[slices.psi.clone()]));
    tensors.insert("theta_phi".into(), encode(&model.theta[slices.phi.clone()]));
    tensors.insert("theta_xi".into(), encode(&model.theta[slices.xi.clone()]));
    tensors.insert("theta_a".into(), encode(&model.theta[slices.a.clone()]));
    tensors.insert("theta_b".into(), encode(&model.theta[slices.b.clone()]));
    tensors.insert("theta_c".into(), encode(&model.theta[slices.c.clone()]));
    let file = ModelFile {
        format: FORMAT.into(),
        version: VERSION,
        kind: "structured".into(),
        seed,
        config_hash: config_hash.into(),
        arch: ArchHeader {
            n_u: arch.dims.n_u,
            n_y: arch.dims.n_y,
            n_z: arch.dims.n_z,
            n_d: arch.dims.n_d,
            delta: arch.delta,
            bnn_depth: arch.psi.depth,
            cond_hidden: arch.psi.cond_hidden.clone(),
            picnn_z_hidden: arch.xi.z_hidden.clone(),
            picnn_eta_hidden: arch.xi.eta_hidden.clone(),
            dyn_hidden: arch.dyn_hidden.clone(),
            xi_depends_on_v: arch.xi_depends_on_v,
            psi_diag_signs: arch.psi.diag_signs.clone(),
            hidden: 0,
        },
        tensors,
    };
    write_json(path, &file)
}

pub fn load_structured(path: &std::path::Path) -> Result<(ShwModel, u64, String), CliError> {
    let file = read_json(path)?;
    if file.kind != "structured" {
        return Err(CliError::Config(format!(
            "{} holds a \"{}\" model, expected \"structured\"",
            path.display(),
            file.kind
        )));
    }
    let dims = SignalDims::new(file.arch.n_u, file.arch.n_y, file.arch.n_z, file.arch.n_d)
        .map_err(|e| CliError::Config(format!("model header: {e}")))?;
    let mut arch = ShwArch::sized(
        dims,
        file.arch.delta,
        file.arch.bnn_depth,
        &file.arch.cond_hidden,
        &file.arch.picnn_z_hidden,
        &file.arch.picnn_eta_hidden,
        &file.arch.dyn_hidden,
        file.arch.xi_depends_on_v,
    )
    .map_err(|e| CliError::Config(format!("model header: {e}")))?;
    if file.arch.psi_diag_signs.len() == arch.psi.diag_signs.len() {
        arch.psi.diag_signs = file.arch.psi_diag_signs.clone();
    }
    let slices = arch.slices();
    let mut theta = vec![0.0; slices.total];
    let expect = [
        ("theta_psi", slices.psi.clone()),
        ("theta_phi", slices.phi.clone()),
        ("theta_xi", slices.xi.clone()),
        ("theta_a", slices.a.clone()),
        ("theta_b", slices.b.clone()),
        ("theta_c", slices.c.clone()),
    ];
    for (name, range) in expect {
        let tensor = file
            .tensors
            .get(name)
            .ok_or_else(|| CliError::Config(format!("model file lacks tensor {name}")))?;
        let values = decode(tensor, name)?;
        if values.len() != range.len() {
            return Err(CliError::Config(format!(
                "tensor {name}: {} values, architecture expects {}",
                values.len(),
                range.len()
            )));
        }
        theta[range].copy_from_slice(&values);
    }
    Ok((ShwModel { arch, theta }, file.seed, file.config_hash))
}

pub fn save_baseline(
    path: &std::path::Path,
    model: &DenseNnModel,
    seed: u64,
    config_hash: &str,
) -> Result<(), CliError> {
    let dims = model.dims;
    let n_in = dims.n_y + dims.n_u + dims.n_d;
    let n_out = dims.n_y + dims.n_z;
    let h = model.hidden;
    let w1 = &model.theta[0..h * n_in];
    let b1 = &model.theta[h * n_in..h * n_in + h];
    let w2 = &model.theta[h * n_in + h..h * n_in + h + n_out * h];
    let b2 = &model.theta[h * n_in + h + n_out * h..];
    let mut tensors = std::collections::BTreeMap::new();
    tensors.insert("w1".into(), encode(w1));
    tensors.insert("b1".into(), encode(b1));
    tensors.insert("w2".into(), encode(w2));
    tensors.insert("b2".into(), encode(b2));
    let file = ModelFile {
        format: FORMAT.into(),
        version: VERSION,
        kind: "baseline".into(),
        seed,
        config_hash: config_hash.into(),
        arch: ArchHeader {
            n_u: dims.n_u,
            n_y: dims.n_y,
            n_z: dims.n_z,
            n_d: dims.n_d,
            delta: 0.0,
            bnn_depth: 0,
            cond_hidden: vec![],
            picnn_z_hidden: vec![],
            picnn_eta_hidden: vec![],
            dyn_hidden: vec![],
            xi_depends_on_v: false,
            psi_diag_signs: vec![],
            hidden: h,
        },
        tensors,
    };
    write_json(path, &file)
}

pub fn load_baseline(path: &std::path::Path) -> Result<(DenseNnModel, u64, String), CliError> {
    let file = read_json(path)?;
    if file.kind != "baseline" {
        return Err(CliError::Config(format!(
            "{} holds a \"{}\" model, expected \"baseline\"",
            path.display(),
            file.kind
        )));
    }
    let dims = SignalDims::new(file.arch.n_u, file.arch.n_y, file.arch.n_z, file.arch.n_d)
        .map_err(|e| CliError::Config(format!("model header: {e}")))?;
    let mut theta = Vec::new();
    for name in ["w1", "b1", "w2", "b2"] {
        let tensor = file
            .tensors
            .get(name)
            .ok_or_else(|| CliError::Config(format!("model file lacks tensor {name}")))?;
        theta.extend(decode(tensor, name)?);
    }
    let model = DenseNnModel { dims, hidden: file.arch.hidden, theta };
    if model.theta.len() != model.param_count() {
        return Err(CliError::Config("baseline tensor sizes do not match header".into()));
    }
    Ok((model, file.seed, file.config_hash))
}

fn write_json(path: &std::path::Path, file: &ModelFile) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(file).expect("model serializes");
    std::fs::write(path, text)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

fn read_json(path: &std::path::Path) -> Result<ModelFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let file: ModelFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{} is not a model file: {e}", path.display())))?;
    if file.format != FORMAT {
        return Err(CliError::Config(format!(
            "{}: unknown format \"{}\"",
            path.display(),
            file.format
        )));
    }
    if file.version != VERSION {
        return Err(CliError::Config(format!(
            "{}: unsupported version {}",
            path.display(),
            file.version
        )));
    }
    Ok(file)
}

//! Run configuration: one JSON document drives every subcommand. The schema
//! rejects unknown keys so typos fail before any computation starts.

use serde::{Deserialize, Serialize};
use shwmpc_core::ident::IdentConfig;
use shwmpc_core::linalg::{Matrix, RiccatiForm};
use shwmpc_core::shw::ShwArch;
use shwmpc_core::SignalDims;

use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub dims: DimsConfig,
    pub delta: f64,
    pub plant: PlantConfig,
    pub arch: ArchConfig,
    pub ident: IdentSection,
    pub ocp: OcpConfig,
    pub sweep: SweepSection,
    pub mpc: MpcConfig,
    pub cbf: CbfConfig,
    pub baseline: BaselineConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DimsConfig {
    pub n_u: usize,
    pub n_y: usize,
    pub n_z: usize,
    pub n_d: usize,
}

impl Default for DimsConfig {
    fn default() -> Self {
        DimsConfig { n_u: 3, n_y: 3, n_z: 1, n_d: 2 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantConfig {
    /// "realizable" or "misspecified".
    pub mode: String,
    pub seed: u64,
    /// Fraction of each output channel's standard deviation added as noise.
    pub noise_pct: f64,
    pub duration: f64,
    pub excitation_seed: u64,
    pub hold_steps: usize,
    pub corner_fraction: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            mode: "realizable".into(),
            seed: 42,
            noise_pct: 0.0,
            duration: 150.0,
            excitation_seed: 43,
            hold_steps: 5,
            corner_fraction: 0.3,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub bnn_depth: usize,
    pub cond_hidden: Vec<usize>,
    pub picnn_z_hidden: Vec<usize>,
    pub picnn_eta_hidden: Vec<usize>,
    pub dyn_hidden: Vec<usize>,
    pub xi_depends_on_v: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            bnn_depth: 2,
            cond_hidden: vec![16],
            picnn_z_hidden: vec![16],
            picnn_eta_hidden: vec![16],
            dyn_hidden: vec![16],
            xi_depends_on_v: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_floor: f64,
    pub val_fraction: f64,
    pub seed: u64,
    pub init_std: f64,
    /// Scales the identity residual weight `K_e`.
    pub ke_scale: f64,
}

impl Default for IdentSection {
    fn default() -> Self {
        IdentSection {
            epochs: 400,
            batch_size: 64,
            lr: 3e-3,
            lr_floor: 0.02,
            val_fraction: 0.2,
            seed: 1,
            init_std: 0.05,
            ke_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OcpConfig {
    pub horizon: usize,
    pub u_lower: Vec<f64>,
    pub u_upper: Vec<f64>,
    pub z_weights: Vec<f64>,
    pub z_ceilings: Vec<f64>,
    /// "soft" or "hard".
    pub z_mode: String,
    pub d_ref: Vec<f64>,
    pub r_ref: Vec<f64>,
    /// Initial output measurement for `solve`.
    pub y0: Vec<f64>,
}

impl Default for OcpConfig {
    fn default() -> Self {
        OcpConfig {
            horizon: 20,
            u_lower: vec![-1.0; 3],
            u_upper: vec![1.0; 3],
            z_weights: vec![50.0],
            z_ceilings: vec![5.0],
            z_mode: "soft".into(),
            d_ref: vec![0.2, -0.3],
            r_ref: vec![0.25, -0.15, 0.2],
            y0: vec![0.0; 3],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub coord: usize,
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    pub y_base: Vec<f64>,
    /// Input box used during the sweep (wide by default so the law is probed
    /// without saturation).
    pub u_lower: Vec<f64>,
    pub u_upper: Vec<f64>,
    /// Initial guesses, each "mid" or "low" (midpoint / lower bound of the
    /// input box, held constant over the horizon).
    pub inits: Vec<String>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            coord: 0,
            lo: -0.8,
            hi: 0.8,
            points: 200,
            y_base: vec![0.0; 3],
            u_lower: vec![-12.0; 3],
            u_upper: vec![12.0; 3],
            inits: vec!["mid".into(), "low".into()],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    pub duration: f64,
    pub x0: Vec<f64>,
    /// Piecewise-constant schedules: list of [time, value...] rows.
    pub r_schedule: Vec<Vec<f64>>,
    pub d_schedule: Vec<Vec<f64>>,
    /// Fraction of each reference hold period treated as transient before
    /// the tracking-error check applies.
    pub transient_fraction: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig {
            duration: 24.0,
            x0: vec![0.0; 3],
            r_schedule: vec![
                vec![0.0, 0.25, -0.15, 0.2],
                vec![12.0, -0.2, 0.2, -0.1],
            ],
            d_schedule: vec![vec![0.0, 0.2, -0.3]],
            transient_fraction: 0.65,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CbfConfig {
    pub gammas: Vec<f64>,
    /// Explicit ceilings; leave empty to derive them from
    /// `auto_ceiling_fraction` between the start and target outputs.
    pub z_ceilings: Vec<f64>,
    pub auto_ceiling_fraction: f64,
    pub steps: usize,
    pub fine_substeps: usize,
    pub d_ref: Vec<f64>,
    pub r_ref: Vec<f64>,
    pub x0: Vec<f64>,
    /// "printed" keeps the B^T B quadratic term; "standard" uses B B^T.
    pub riccati_form: String,
    pub q_scale: f64,
}

impl Default for CbfConfig {
    fn default() -> Self {
        CbfConfig {
            gammas: vec![1.0],
            z_ceilings: vec![],
            auto_ceiling_fraction: 0.5,
            steps: 4000,
            fine_substeps: 20,
            d_ref: vec![0.1, -0.2],
            r_ref: vec![0.35, -0.3, 0.3],
            x0: vec![],
            riccati_form: "printed".into(),
            q_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// Hidden width; 0 picks the width whose parameter count best matches
    /// the structured model.
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub val_fraction: f64,
    pub init_std: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            hidden: 0,
            epochs: 300,
            batch_size: 64,
            lr: 3e-3,
            seed: 1,
            val_fraction: 0.2,
            init_std: 0.3,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            dims: DimsConfig::default(),
            delta: 0.1,
            plant: PlantConfig::default(),
            arch: ArchConfig::default(),
            ident: IdentSection::default(),
            ocp: OcpConfig::default(),
            sweep: SweepSection::default(),
            mpc: MpcConfig::default(),
            cbf: CbfConfig::default(),
            baseline: BaselineConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn signal_dims(&self) -> Result<SignalDims, CliError> {
        SignalDims::new(self.dims.n_u, self.dims.n_y, self.dims.n_z, self.dims.n_d)
            .map_err(|e| CliError::Config(format!("invalid dims: {e}")))
    }

    pub fn shw_arch(&self) -> Result<ShwArch, CliError> {
        let dims = self.signal_dims()?;
        ShwArch::sized(
            dims,
            self.delta,
            self.arch.bnn_depth,
            &self.arch.cond_hidden,
            &self.arch.picnn_z_hidden,
            &self.arch.picnn_eta_hidden,
            &self.arch.dyn_hidden,
            self.arch.xi_depends_on_v,
        )
        .map_err(|e| CliError::Config(format!("invalid architecture: {e}")))
    }

    pub fn ident_config(&self) -> Result<IdentConfig, CliError> {
        let dims = self.signal_dims()?;
        let mut cfg = IdentConfig::default_for(dims);
        cfg.epochs = self.ident.epochs;
        cfg.batch_size = self.ident.batch_size;
        cfg.lr = self.ident.lr;
        cfg.lr_floor = self.ident.lr_floor;
        cfg.val_fraction = self.ident.val_fraction;
        cfg.seed = self.ident.seed;
        cfg.init_std = self.ident.init_std;
        cfg.k_e = Matrix::identity(dims.n_y + dims.n_z).scale(self.ident.ke_scale);
        cfg.validate(dims).map_err(|e| CliError::Config(format!("ident config: {e}")))?;
        Ok(cfg)
    }

    pub fn riccati_form(&self) -> Result<RiccatiForm, CliError> {
        match self.cbf.riccati_form.as_str() {
            "printed" => Ok(RiccatiForm::BtB),
            "standard" => Ok(RiccatiForm::BBt),
            other => Err(CliError::Config(format!(
                "cbf.riccati_form must be \"printed\" or \"standard\", got \"{other}\""
            ))),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let dims = self.signal_dims()?;
        if self.plant.mode != "realizable" && self.plant.mode != "misspecified" {
            return Err(CliError::Config(format!(
                "plant.mode must be \"realizable\" or \"misspecified\", got \"{}\"",
                self.plant.mode
            )));
        }
        if self.ocp.z_mode != "soft" && self.ocp.z_mode != "hard" {
            return Err(CliError::Config(format!(
                "ocp.z_mode must be \"soft\" or \"hard\", got \"{}\"",
                self.ocp.z_mode
            )));
        }
        let check_len = |name: &str, len: usize, expect: usize| -> Result<(), CliError> {
            if len != expect {
                return Err(CliError::Config(format!(
                    "{name} must have {expect} entries, got {len}"
                )));
            }
            Ok(())
        };
        check_len("ocp.u_lower", self.ocp.u_lower.len(), dims.n_u)?;
        check_len("ocp.u_upper", self.ocp.u_upper.len(), dims.n_u)?;
        check_len("ocp.z_weights", self.ocp.z_weights.len(), dims.n_z)?;
        check_len("ocp.z_ceilings", self.ocp.z_ceilings.len(), dims.n_z)?;
        check_len("ocp.d_ref", self.ocp.d_ref.len(), dims.n_d)?;
        check_len("ocp.r_ref", self.ocp.r_ref.len(), dims.n_y)?;
        check_len("ocp.y0", self.ocp.y0.len(), dims.n_y)?;
        check_len("sweep.y_base", self.sweep.y_base.len(), dims.n_y)?;
        check_len("sweep.u_lower", self.sweep.u_lower.len(), dims.n_u)?;
        check_len("sweep.u_upper", self.sweep.u_upper.len(), dims.n_u)?;
        check_len("mpc.x0", self.mpc.x0.len(), dims.n_y)?;
        check_len("cbf.gammas", self.cbf.gammas.len(), dims.n_z)?;
        check_len("cbf.d_ref", self.cbf.d_ref.len(), dims.n_d)?;
        check_len("cbf.r_ref", self.cbf.r_ref.len(), dims.n_y)?;
        if !self.cbf.z_ceilings.is_empty() {
            check_len("cbf.z_ceilings", self.cbf.z_ceilings.len(), dims.n_z)?;
        }
        if !self.cbf.x0.is_empty() {
            check_len("cbf.x0", self.cbf.x0.len(), dims.n_y)?;
        }
        if self.mpc.r_schedule.is_empty() || self.mpc.d_schedule.is_empty() {
            return Err(CliError::Config(
                "mpc.r_schedule and mpc.d_schedule need at least one [time, values...] row".into(),
            ));
        }
        for row in &self.mpc.r_schedule {
            check_len("mpc.r_schedule row", row.len(), 1 + dims.n_y)?;
        }
        for row in &self.mpc.d_schedule {
            check_len("mpc.d_schedule row", row.len(), 1 + dims.n_d)?;
        }
        if self.sweep.coord >= dims.n_y {
            return Err(CliError::Config("sweep.coord out of range".into()));
        }
        if self.sweep.points < 2 {
            return Err(CliError::Config("sweep.points must be at least 2".into()));
        }
        for init in &self.sweep.inits {
            if init != "mid" && init != "low" {
                return Err(CliError::Config(format!(
                    "sweep.inits entries must be \"mid\" or \"low\", got \"{init}\""
                )));
            }
        }
        self.riccati_form()?;
        Ok(())
    }
}

/// Parse a config file, apply dotted-path `--set key=value` overrides and an
/// optional seed override, then deserialize strictly.
pub fn load_config(
    path: Option<&str>,
    sets: &[(String, String)],
    seed: Option<u64>,
) -> Result<(RunConfig, String), CliError> {
    let mut value: serde_json::Value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read config {p}: {e}")))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("config {p} is not valid JSON: {e}")))?
        }
        None => serde_json::json!({}),
    };
    for (key, raw) in sets {
        apply_override(&mut value, key, raw)?;
    }
    if let Some(s) = seed {
        value["seed"] = serde_json::json!(s);
    }
    let config: RunConfig = serde_json::from_value(value.clone())
        .map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
    config.validate()?;
    // hash the canonical serialized form (after overrides and defaults)
    let canonical = serde_json::to_string(&config).expect("config serializes");
    let hash = fnv1a_hex(canonical.as_bytes());
    Ok((config, hash))
}

fn apply_override(root: &mut serde_json::Value, key: &str, raw: &str) -> Result<(), CliError> {
    let parsed: serde_json::Value = match serde_json::from_str(raw) {
        Ok(v) => v,
        Err(_) => serde_json::Value::String(raw.to_string()),
    };
    let mut cursor = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if !cursor.is_object() {
            return Err(CliError::Config(format!(
                "--set {key}: \"{}\" is not an object",
                parts[..i].join(".")
            )));
        }
        let map = cursor.as_object_mut().unwrap();
        if i + 1 == parts.len() {
            map.insert(part.to_string(), parsed);
            return Ok(());
        }
        cursor = map.entry(part.to_string()).or_insert(serde_json::json!({}));
    }
    Err(CliError::Config(format!("--set {key}: empty key")))
}

/// FNV-1a 64-bit, hex encoded; used to stamp artifacts with the exact
/// configuration that produced them.
pub fn fnv1a_hex(bytes: &[u8]) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}

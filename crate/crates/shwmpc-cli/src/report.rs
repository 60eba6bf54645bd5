//! Run reports: every command writes a JSON summary embedding the config
//! hash, seed, versions, timings and its metrics, so artifacts are traceable
//! and reruns comparable.

use serde::Serialize;

use crate::CliError;

#[derive(Serialize)]
pub struct RunReport {
    pub command: String,
    pub crate_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub timings_ms: serde_json::Map<String, serde_json::Value>,
    pub metrics: serde_json::Map<String, serde_json::Value>,
    pub artifacts: Vec<String>,
    pub check: Option<CheckOutcome>,
}

#[derive(Serialize)]
pub struct CheckOutcome {
    pub passed: bool,
    pub details: Vec<String>,
}

impl RunReport {
    pub fn new(command: &str, seed: u64, config_hash: &str) -> Self {
        RunReport {
            command: command.into(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config_hash: config_hash.into(),
            timings_ms: serde_json::Map::new(),
            metrics: serde_json::Map::new(),
            artifacts: Vec::new(),
            check: None,
        }
    }

    pub fn timing(&mut self, name: &str, ms: f64) {
        self.timings_ms.insert(name.into(), roundtrip_number(ms));
    }

    pub fn metric(&mut self, name: &str, value: serde_json::Value) {
        self.metrics.insert(name.into(), value);
    }

    pub fn metric_f64(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.into(), roundtrip_number(value));
    }

    pub fn artifact(&mut self, path: &std::path::Path) {
        self.artifacts.push(path.display().to_string());
    }

    pub fn write(&self, path: &std::path::Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text)
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
    }
}

fn roundtrip_number(v: f64) -> serde_json::Value {
    if v.is_finite() {
        serde_json::json!(v)
    } else {
        serde_json::Value::String(format!("{v}"))
    }
}

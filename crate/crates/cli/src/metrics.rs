//! Metric records with provenance.

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub module: String,
    pub seed: u64,
    pub params_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub name: String,
    pub value: f64,
    pub units: String,
    pub provenance: Provenance,
}

impl MetricsRecord {
    pub fn new(name: &str, value: f64, units: &str, provenance: Provenance) -> Result<Self> {
        if !value.is_finite() {
            bail!("metric {name} is not finite ({value})");
        }
        Ok(Self { name: name.into(), value, units: units.into(), provenance })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Hash of the JSON encoding of `params`.
pub fn params_hash<T: Serialize>(params: &T) -> String {
    sha256_hex(serde_json::to_string(params).expect("parameters serialize").as_bytes())
}

//! Persistent store for asymptotic-constant values, one JSON object keyed
//! by "s=…,d=…,k=…". Exact closed forms exist only for d = 1; everything
//! else is a calibrated estimate and says so.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::density::CsdkEstimate;
use crate::Result;

pub const REGISTRY_ENV: &str = "RKNN_REGISTRY";
pub const REGISTRY_DEFAULT: &str = "rknn_registry.json";

/// One stored constant. `residual` is the fit residual for calibrated
/// entries; for exact entries it is the calibration cross-check error
/// |estimate - exact| / exact.
#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct RegistryEntry {
    pub value: f64,
    pub residual: f64,
    pub method: Method,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Calibrated,
}

pub fn registry_key(s: f64, d: usize, k: usize) -> String {
    format!("s={s},d={d},k={k}")
}

/// Resolve the registry path: explicit flag, then the RKNN_REGISTRY
/// environment variable, then ./rknn_registry.json.
pub fn resolve_path(flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Ok(env) = std::env::var(REGISTRY_ENV) {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    PathBuf::from(REGISTRY_DEFAULT)
}

pub type Registry = BTreeMap<String, RegistryEntry>;

/// Load the registry, treating a missing file as empty.
pub fn load(path: &Path) -> Result<Registry> {
    match std::fs::read_to_string(path) {
        Ok(text) => Ok(serde_json::from_str(&text)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Registry::new()),
        Err(e) => Err(e.into()),
    }
}

pub fn save(path: &Path, registry: &Registry) -> Result<()> {
    super::io::write_file(path, &super::io::to_json_pretty(registry)?)
}

/// Turn a calibration outcome into its registry entry. Exact values win
/// when they exist (d = 1) and the numerical estimate becomes the recorded
/// cross-check residual.
pub fn entry_from_estimate(est: &CsdkEstimate, seed: u64) -> RegistryEntry {
    match est.exact {
        Some(exact) => RegistryEntry {
            value: exact,
            residual: (est.c_hat - exact).abs() / exact,
            method: Method::Exact,
            seed,
        },
        None => RegistryEntry {
            value: est.c_hat,
            residual: est.residual,
            method: Method::Calibrated,
            seed,
        },
    }
}

/// Insert or replace the entry for (s, d, k); returns the key.
pub fn upsert(registry: &mut Registry, s: f64, d: usize, k: usize, entry: RegistryEntry) -> String {
    let key = registry_key(s, d, k);
    registry.insert(key.clone(), entry);
    key
}

//! File output: atomic writes and the metadata block every artifact carries.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use krigreg::{TrainingSet, CONDITION_NORM};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{hex, ExperimentConfig};

pub const TOOL_VERSION: &str = concat!("krigreg ", env!("CARGO_PKG_VERSION"));

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// `<path>.meta.json`
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Metadata common to every output of a run.
pub fn base_metadata(config: &ExperimentConfig) -> Value {
    json!({
        "tool_version": TOOL_VERSION,
        "config_hash": config.hash(),
        "rng_seed": config.rng_seed,
        "theta_bounds": [config.regularizer.theta_bounds.0, config.regularizer.theta_bounds.1],
        "condition_norm": CONDITION_NORM,
    })
}

/// Adds the entries of `extra` to a metadata object.
pub fn extend(mut meta: Value, extra: Value) -> Value {
    if let (Some(m), Value::Object(e)) = (meta.as_object_mut(), extra) {
        m.extend(e);
    }
    meta
}

/// SHA-256 over the bit patterns of the normalized locations and values.
pub fn points_hash(training: &TrainingSet) -> String {
    let mut h = Sha256::new();
    h.update((training.len() as u64).to_le_bytes());
    h.update((training.dim() as u64).to_le_bytes());
    for row in training.normalized().row_iter() {
        for v in row.iter() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    for v in training.values().iter() {
        h.update(v.to_bits().to_le_bytes());
    }
    hex(&h.finalize())
}

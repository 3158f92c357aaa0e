//! Report envelope written by every command.
//!
//! Each report has two halves: `meta` (timestamps, wall-clock, tool
//! version — things that legitimately differ between runs) and `result`
//! (the experiment payload, which must be byte-identical across repeated
//! runs with the same configuration and seeds). Reproducibility checks
//! compare canonicalized `result` subtrees only.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;
use crate::io::atomic_write;

/// Run provenance; excluded from reproducibility comparisons.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Meta {
    /// Tool name and version.
    pub tool: String,
    /// Subcommand that produced the report.
    pub command: String,
    /// Seconds since the Unix epoch at write time.
    pub timestamp_unix: u64,
    /// Wall-clock duration of the command, seconds.
    pub wall_clock_seconds: f64,
    /// Hash of the resolved numeric configuration.
    pub config_hash: String,
    /// Dataset name the command ran on.
    pub dataset: String,
    /// Where the data came from (file or generator label).
    pub source: String,
    /// Training seed in effect.
    pub seed: u64,
    /// Files this command wrote (names only).
    #[serde(default)]
    pub outputs: Vec<String>,
}

impl Meta {
    pub fn new(command: &str, config_hash: &str, dataset: &str, source: &str, seed: u64) -> Self {
        Meta {
            tool: format!("lpn {}", env!("CARGO_PKG_VERSION")),
            command: command.to_string(),
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            wall_clock_seconds: 0.0,
            config_hash: config_hash.to_string(),
            dataset: dataset.to_string(),
            source: source.to_string(),
            seed,
            outputs: Vec::new(),
        }
    }
}

/// A complete report file: provenance plus deterministic payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub meta: Meta,
    pub result: Value,
}

impl Report {
    pub fn new<T: Serialize>(meta: Meta, result: &T) -> Result<Self, CliError> {
        let result = serde_json::to_value(result).map_err(|source| CliError::Json {
            context: "cannot serialize report payload".into(),
            source,
        })?;
        Ok(Report { meta, result })
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(self).map_err(|source| CliError::Json {
            context: "cannot serialize report".into(),
            source,
        })?;
        bytes.push(b'\n');
        atomic_write(path, &bytes)
    }
}

pub fn read_report(path: &Path) -> Result<Report, CliError> {
    let bytes = std::fs::read(path)
        .map_err(CliError::io(format!("cannot read report {}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|source| CliError::Json {
        context: format!("cannot parse report {}", path.display()),
        source,
    })
}

/// Canonical string form of a JSON value: objects with sorted keys, floats
/// in shortest-round-trip form. Two runs are reproducible iff their result
/// subtrees canonicalize identically.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => out.push_str(&n.to_string()),
        Value::String(s) => {
            out.push_str(&serde_json::to_string(s).expect("string serialization is infallible"))
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(
                    &serde_json::to_string(key).expect("string serialization is infallible"),
                );
                out.push(':');
                write_canonical(&map[key], out);
            }
            out.push('}');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn canonical_sorts_keys_and_keeps_float_bits() {
        let a = json!({"b": 0.1, "a": [1.5, 2.0000000000000004]});
        let b = json!({"a": [1.5, 2.0000000000000004], "b": 0.1});
        assert_eq!(canonical_json(&a), canonical_json(&b));
        assert_eq!(
            canonical_json(&a),
            "{\"a\":[1.5,2.0000000000000004],\"b\":0.1}"
        );
        let c = json!({"a": [1.5, 2.0], "b": 0.1});
        assert_ne!(canonical_json(&a), canonical_json(&c));
    }

    #[test]
    fn report_roundtrip_preserves_result() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        let meta = Meta::new("train", "abc", "toy", "synthetic:toy", 42);
        let payload = json!({"r2": 0.9123456789012345, "history": [1.0, 0.5]});
        let report = Report::new(meta, &payload).unwrap();
        report.write(&path).unwrap();
        let back = read_report(&path).unwrap();
        assert_eq!(canonical_json(&back.result), canonical_json(&payload));
        assert_eq!(back.meta.command, "train");
    }
}

//! TOML experiment configuration: `[network]`, `[train]`, `[data]` and
//! `[gap]` sections carrying every tunable, with protocol defaults for
//! anything omitted. The resolved configuration (after CLI overrides) is
//! hashed, and that hash ties parameter files, rankings, and sweep reports
//! together.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Whole config file. Every field has a default, so an empty file is a
/// valid experiment description.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub gap: GapSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub hidden: Vec<usize>,
    pub leaky_slope: f64,
    pub dropout_rate: f64,
    pub input_prior: f64,
    pub loss_exponent: f64,
    pub penalty_weight: f64,
    pub seed: u64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            hidden: vec![256, 128, 16],
            leaky_slope: 0.01,
            dropout_rate: 0.3,
            input_prior: 0.01,
            loss_exponent: 0.5,
            penalty_weight: 1e-3,
            seed: 1,
        }
    }
}

impl NetworkSection {
    /// Builds the core config once the feature count is known.
    pub fn to_core(&self, input_dim: usize) -> lpn_core::NetworkConfig {
        lpn_core::NetworkConfig {
            input_dim,
            hidden: self.hidden.clone(),
            leaky_slope: self.leaky_slope,
            dropout_rate: self.dropout_rate,
            input_prior: self.input_prior,
            loss_exponent: self.loss_exponent,
            penalty_weight: self.penalty_weight,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub phase2_enabled: bool,
    pub folds: usize,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = lpn_core::TrainConfig::default();
        TrainSection {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            phase1_epochs: t.phase1_epochs,
            phase2_epochs: t.phase2_epochs,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            phase2_enabled: t.phase2_enabled,
            folds: t.folds,
            seed: 42,
        }
    }
}

impl TrainSection {
    pub fn to_core(&self) -> lpn_core::TrainConfig {
        lpn_core::TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            phase1_epochs: self.phase1_epochs,
            phase2_epochs: self.phase2_epochs,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            phase2_enabled: self.phase2_enabled,
            folds: self.folds,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Which `[data.datasets.<name>]` entry to use; `--dataset` overrides.
    pub dataset: String,
    /// Directory holding (or receiving) dataset files.
    pub dir: String,
    pub split_fraction: f64,
    pub split_seed: u64,
    pub datasets: BTreeMap<String, DatasetSchema>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            dataset: "synthetic".to_string(),
            dir: "data".to_string(),
            split_fraction: 0.8,
            split_seed: 7,
            datasets: BTreeMap::new(),
        }
    }
}

/// How to obtain one named dataset: either a CSV file plus column schema,
/// or a named synthetic generator.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSchema {
    pub file: Option<String>,
    pub target: Option<String>,
    pub drop: Vec<String>,
    pub synthetic: Option<String>,
    pub synthetic_seed: u64,
}

/// Built-in schemas for the experiment datasets; a `[data.datasets.<name>]`
/// section with the same name overrides these.
pub fn builtin_schema(name: &str) -> Option<DatasetSchema> {
    match name {
        "parkinsons" => Some(DatasetSchema {
            file: Some("parkinsons.csv".to_string()),
            target: Some("total_UPDRS".to_string()),
            drop: vec![
                "subject#".to_string(),
                "test_time".to_string(),
                "motor_UPDRS".to_string(),
            ],
            synthetic: None,
            synthetic_seed: 0,
        }),
        "energy" => Some(DatasetSchema {
            file: Some("energydata_complete.csv".to_string()),
            target: Some("Appliances".to_string()),
            drop: vec!["date".to_string()],
            synthetic: None,
            synthetic_seed: 0,
        }),
        "synthetic" | "linear-2d-dead-feature" => Some(DatasetSchema {
            synthetic: Some("linear-2d-dead-feature".to_string()),
            synthetic_seed: 11,
            ..DatasetSchema::default()
        }),
        "linear-1d" => Some(DatasetSchema {
            synthetic: Some("linear-1d".to_string()),
            synthetic_seed: 11,
            ..DatasetSchema::default()
        }),
        "noisy-feature" => Some(DatasetSchema {
            synthetic: Some("noisy-feature".to_string()),
            synthetic_seed: 11,
            ..DatasetSchema::default()
        }),
        _ => None,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GapSection {
    pub factors: Vec<f64>,
    pub warm_start: bool,
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for GapSection {
    fn default() -> Self {
        let g = lpn_core::GapConfig::default();
        GapSection {
            factors: g.factors,
            warm_start: g.warm_start,
            learning_rate: g.learning_rate,
            max_iterations: g.max_iterations,
            tolerance: g.tolerance,
        }
    }
}

impl GapSection {
    pub fn to_core(&self) -> lpn_core::GapConfig {
        lpn_core::GapConfig {
            factors: self.factors.clone(),
            warm_start: self.warm_start,
            learning_rate: self.learning_rate,
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
        }
    }
}

impl FileConfig {
    /// Reads a config file; a missing path argument yields all defaults.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(CliError::io(format!("cannot read config {}", p.display())))?;
                toml::from_str(&text).map_err(|e| CliError::TomlParse {
                    path: p.display().to_string(),
                    message: e.to_string(),
                })
            }
        }
    }

    /// Applies command-line overrides (they win over the file).
    pub fn apply_overrides(&mut self, dataset: Option<&str>, seed: Option<u64>) {
        if let Some(d) = dataset {
            self.data.dataset = d.to_string();
        }
        if let Some(s) = seed {
            self.train.seed = s;
        }
    }

    /// Schema for the active dataset: the file's entry if present, else a
    /// built-in.
    pub fn dataset_schema(&self) -> Result<DatasetSchema, CliError> {
        let name = &self.data.dataset;
        if let Some(s) = self.data.datasets.get(name) {
            return Ok(s.clone());
        }
        builtin_schema(name).ok_or_else(|| {
            CliError::Config(format!(
                "dataset {name:?} has no [data.datasets.{name}] section and no built-in schema"
            ))
        })
    }

    /// Stable hash of the resolved configuration. Everything that affects
    /// numerics is included; output paths are not.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(&(
            &self.network,
            &self.train,
            &self.data.dataset,
            &self.data.split_fraction,
            &self.data.split_seed,
            &self.dataset_schema().ok(),
            &self.gap,
        ))
        .expect("config types serialize infallibly");
        format!("{:016x}", fnv1a64(canonical.as_bytes()))
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_protocol_defaults() {
        let cfg: FileConfig = toml::from_str("").unwrap();
        assert_eq!(cfg.network.hidden, vec![256, 128, 16]);
        assert_eq!(cfg.network.dropout_rate, 0.3);
        assert_eq!(cfg.train.learning_rate, 5e-4);
        assert_eq!(cfg.train.phase1_epochs, 300);
        assert_eq!(cfg.train.phase2_epochs, 100);
        assert_eq!(cfg.train.folds, 5);
        assert_eq!(cfg.data.split_fraction, 0.8);
        assert_eq!(cfg.gap.factors, vec![1.1, 1.25, 1.5, 1.75, 2.0, 2.5]);
    }

    #[test]
    fn sections_parse_and_override() {
        let cfg: FileConfig = toml::from_str(
            r#"
            [network]
            hidden = [8, 4]
            dropout_rate = 0.0
            [train]
            phase1_epochs = 10
            seed = 5
            [data]
            dataset = "energy"
            split_fraction = 0.75
            [data.datasets.custom]
            file = "my.csv"
            target = "y"
            drop = ["id"]
            [gap]
            factors = [1.5, 2.0]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.network.hidden, vec![8, 4]);
        assert_eq!(cfg.train.phase1_epochs, 10);
        assert_eq!(cfg.data.dataset, "energy");
        assert_eq!(cfg.data.datasets["custom"].target.as_deref(), Some("y"));
        assert_eq!(cfg.gap.factors, vec![1.5, 2.0]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let r: Result<FileConfig, _> = toml::from_str("[network]\nwidth = 3\n");
        assert!(r.is_err());
    }

    #[test]
    fn hash_tracks_numeric_fields_only() {
        let mut a = FileConfig::default();
        let b = FileConfig::default();
        assert_eq!(a.config_hash(), b.config_hash());
        a.train.seed = 43;
        assert_ne!(a.config_hash(), b.config_hash());
        let mut c = FileConfig::default();
        c.data.dir = "elsewhere".to_string();
        assert_eq!(c.config_hash(), b.config_hash(), "storage location is not numerics");
    }

    #[test]
    fn builtin_schemas_cover_experiment_datasets() {
        let p = builtin_schema("parkinsons").unwrap();
        assert_eq!(p.target.as_deref(), Some("total_UPDRS"));
        assert_eq!(p.drop.len(), 3);
        let e = builtin_schema("energy").unwrap();
        assert_eq!(e.target.as_deref(), Some("Appliances"));
        assert!(builtin_schema("nope").is_none());
    }

    #[test]
    fn overrides_apply() {
        let mut cfg = FileConfig::default();
        cfg.apply_overrides(Some("energy"), Some(99));
        assert_eq!(cfg.data.dataset, "energy");
        assert_eq!(cfg.train.seed, 99);
    }
}

//! File plumbing: CSV ingestion, the versioned parameters container, and
//! atomic writes.
//!
//! All outputs go through write-then-rename so a crashed command never
//! leaves a half-written file behind. Parameter values round-trip through
//! JSON bit-exactly (the serializer emits shortest-round-trip decimal
//! forms).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use lpn_core::data::{Dataset, SyntheticKind};
use lpn_core::{NetworkConfig, Standardization};

use crate::config::{DataSection, DatasetSchema};
use crate::error::CliError;

/// Writes `bytes` to `path` atomically (same-directory temp file, then
/// rename).
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = parent {
        std::fs::create_dir_all(dir)
            .map_err(CliError::io(format!("cannot create {}", dir.display())))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)
        .map_err(CliError::io(format!("cannot write {}", tmp.display())))?;
    std::fs::rename(&tmp, path)
        .map_err(CliError::io(format!("cannot move {} into place", tmp.display())))?;
    Ok(())
}

/// Ingestion bookkeeping surfaced in reports.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LoadStats {
    /// Data rows seen in the file (or generated).
    pub rows_total: usize,
    /// Rows rejected for unparseable numeric cells.
    pub rows_rejected: usize,
    /// Feature columns retained after target/drop handling.
    pub retained_columns: usize,
    /// Short label of where the data came from.
    pub source: String,
}

/// Loads a CSV with a header row, keeping every column except the target
/// and the dropped ones as f64 features. Rows with any unparseable retained
/// cell are rejected and counted.
pub fn load_csv(path: &Path, schema: &DatasetSchema) -> Result<(Dataset, LoadStats), CliError> {
    let target_name = schema
        .target
        .as_deref()
        .ok_or_else(|| CliError::Config("file-backed dataset needs a target column".into()))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|source| CliError::Csv {
            context: format!("cannot open {}", path.display()),
            source,
        })?;
    let headers: Vec<String> =
        reader
            .headers()
            .map_err(|source| CliError::Csv {
                context: format!("cannot read header of {}", path.display()),
                source,
            })?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
    let target_idx = headers
        .iter()
        .position(|h| h == target_name)
        .ok_or_else(|| {
            CliError::Data(format!(
                "target column {target_name:?} not found in {}",
                path.display()
            ))
        })?;
    let keep: Vec<usize> = (0..headers.len())
        .filter(|&i| i != target_idx && !schema.drop.contains(&headers[i]))
        .collect();
    if keep.is_empty() {
        return Err(CliError::Data(format!(
            "no feature columns left in {} after drops",
            path.display()
        )));
    }
    let names: Vec<String> = keep.iter().map(|&i| headers[i].clone()).collect();

    let mut features = Vec::new();
    let mut targets = Vec::new();
    let mut rows_total = 0usize;
    let mut rows_rejected = 0usize;
    for record in reader.records() {
        let record = record.map_err(|source| CliError::Csv {
            context: format!("cannot read row of {}", path.display()),
            source,
        })?;
        rows_total += 1;
        let parse = |i: usize| record.get(i).and_then(|c| c.trim().parse::<f64>().ok());
        let Some(y) = parse(target_idx) else {
            rows_rejected += 1;
            continue;
        };
        let mut row = Vec::with_capacity(keep.len());
        let mut ok = true;
        for &i in &keep {
            match parse(i) {
                Some(v) => row.push(v),
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            rows_rejected += 1;
            continue;
        }
        features.push(row);
        targets.push(y);
    }
    if features.is_empty() {
        return Err(CliError::Data(format!(
            "{} contains no usable data rows ({rows_rejected} rejected)",
            path.display()
        )));
    }
    let file_label = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let source = format!("file:{file_label}");
    let ds = Dataset::new(features, targets, names, source.clone())?;
    let stats = LoadStats {
        rows_total,
        rows_rejected,
        retained_columns: ds.dim(),
        source,
    };
    Ok((ds, stats))
}

/// Materializes the active dataset: from its CSV file when the schema names
/// one, otherwise from the named synthetic generator.
pub fn load_dataset(
    data: &DataSection,
    schema: &DatasetSchema,
) -> Result<(Dataset, LoadStats), CliError> {
    if let Some(file) = &schema.file {
        let path = Path::new(&data.dir).join(file);
        if !path.exists() {
            return Err(CliError::Data(format!(
                "dataset file {} does not exist (run the prep command to generate a \
                 surrogate, or place the real file there)",
                path.display()
            )));
        }
        let (ds, mut stats) = load_csv(&path, schema)?;
        stats.source = sourced_label(&path, &stats.source);
        return Ok((ds, stats));
    }
    if let Some(kind) = &schema.synthetic {
        let kind: SyntheticKind = kind
            .parse()
            .map_err(|e: lpn_core::data::DataError| CliError::Data(e.to_string()))?;
        let ds = lpn_core::data::make_synthetic(kind, schema.synthetic_seed);
        let stats = LoadStats {
            rows_total: ds.len(),
            rows_rejected: 0,
            retained_columns: ds.dim(),
            source: ds.provenance.clone(),
        };
        return Ok((ds, stats));
    }
    Err(CliError::Config(
        "dataset schema names neither a file nor a synthetic generator".into(),
    ))
}

/// Path of the provenance sidecar that `prep` writes next to a generated
/// surrogate file (`<file>.source`). Genuine files have no sidecar.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".source");
    PathBuf::from(s)
}

/// Combines a file's source label with its sidecar note when one exists,
/// so reports distinguish surrogate data from the genuine file.
pub fn sourced_label(path: &Path, base: &str) -> String {
    match std::fs::read_to_string(sidecar_path(path)) {
        Ok(note) if !note.trim().is_empty() => format!("{base} [{}]", note.trim()),
        _ => base.to_string(),
    }
}

/// Versioned on-disk parameter container, binding weights to the exact
/// configuration and standardization that produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamsFile {
    pub format_version: u32,
    /// "probabilistic" or "deterministic".
    pub model_kind: String,
    pub config_hash: String,
    pub dataset: String,
    pub train_seed: u64,
    pub network: NetworkConfig,
    pub standardization: Standardization,
    pub values: Vec<f64>,
}

pub const PARAMS_FORMAT_VERSION: u32 = 1;

pub fn save_params(path: &Path, file: &ParamsFile) -> Result<(), CliError> {
    let bytes = serde_json::to_vec_pretty(file).map_err(|source| CliError::Json {
        context: "cannot serialize parameters".into(),
        source,
    })?;
    atomic_write(path, &bytes)
}

pub fn load_params(path: &Path) -> Result<ParamsFile, CliError> {
    let bytes = std::fs::read(path)
        .map_err(CliError::io(format!("cannot read parameters {}", path.display())))?;
    let file: ParamsFile = serde_json::from_slice(&bytes).map_err(|source| CliError::Json {
        context: format!("cannot parse parameters {}", path.display()),
        source,
    })?;
    if file.format_version != PARAMS_FORMAT_VERSION {
        return Err(CliError::Data(format!(
            "parameters {} use format version {}, this build reads {}",
            path.display(),
            file.format_version,
            PARAMS_FORMAT_VERSION
        )));
    }
    let expected = file.network.param_count();
    if file.values.len() != expected {
        return Err(CliError::Data(format!(
            "parameters {}: {} values but the config needs {expected}",
            path.display(),
            file.values.len()
        )));
    }
    Ok(file)
}

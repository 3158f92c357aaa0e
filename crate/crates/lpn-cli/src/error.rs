//! One error type for the whole driver, so every command funnels into a
//! single printable failure path with a nonzero exit.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    Io { context: String, source: std::io::Error },
    Csv { context: String, source: csv::Error },
    TomlParse { path: String, message: String },
    Json { context: String, source: serde_json::Error },
    Config(String),
    /// Dataset schema or content problems (missing target, empty table…).
    Data(String),
    Core(String),
    /// A self-check or precondition failed (hash mismatch, unknown id…).
    Check(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io { context, source } => write!(f, "{context}: {source}"),
            CliError::Csv { context, source } => write!(f, "{context}: {source}"),
            CliError::TomlParse { path, message } => {
                write!(f, "failed to parse config {path}: {message}")
            }
            CliError::Json { context, source } => write!(f, "{context}: {source}"),
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Data(msg) => write!(f, "data error: {msg}"),
            CliError::Core(msg) => write!(f, "{msg}"),
            CliError::Check(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for CliError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            CliError::Io { source, .. } => Some(source),
            CliError::Csv { source, .. } => Some(source),
            CliError::Json { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl CliError {
    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }
}

impl From<lpn_core::model::ModelError> for CliError {
    fn from(e: lpn_core::model::ModelError) -> Self {
        CliError::Core(format!("model error: {e}"))
    }
}

impl From<lpn_core::train::TrainError> for CliError {
    fn from(e: lpn_core::train::TrainError) -> Self {
        CliError::Core(format!("training error: {e}"))
    }
}

impl From<lpn_core::gap::GapError> for CliError {
    fn from(e: lpn_core::gap::GapError) -> Self {
        CliError::Core(format!("calibration error: {e}"))
    }
}

impl From<lpn_core::data::DataError> for CliError {
    fn from(e: lpn_core::data::DataError) -> Self {
        CliError::Core(format!("data error: {e}"))
    }
}

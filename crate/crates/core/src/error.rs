use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum DadiError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("row {row}: {message}")]
    MalformedRow { row: usize, message: String },
    #[error("row {row}: unknown value {value:?} for column {column}")]
    UnknownCategory {
        row: usize,
        column: String,
        value: String,
    },
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("duplicate coordinate {0} in token set")]
    DuplicateCoordinate(usize),
    #[error("coordinate {coordinate} out of range for {n_coords} features")]
    CoordinateOutOfRange { coordinate: usize, n_coords: usize },
    #[error("attention over an empty memory bank")]
    EmptyMemory,
    #[error("illegal action {action}: {reason}")]
    IllegalAction { action: usize, reason: &'static str },
    #[error("state is not terminal")]
    NotTerminal,
    #[error("auc is undefined when only one class is present")]
    SingleClass,
    #[error("sensitive group {0} has no members")]
    EmptyGroup(u8),
    #[error("non-finite {what} loss at iteration {iteration}")]
    Divergence { what: &'static str, iteration: usize },
    #[error("format error: {0}")]
    Format(String),
    #[error("{}", format_issues(.0))]
    Config(Vec<ConfigIssue>),
    #[error("cell {cell} failed: {message}")]
    CellFailed { cell: String, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One schema violation found while validating a config file.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct ConfigIssue {
    pub key: String,
    pub message: String,
}

fn format_issues(issues: &[ConfigIssue]) -> String {
    let parts: Vec<String> = issues
        .iter()
        .map(|i| format!("{}: {}", i.key, i.message))
        .collect();
    format!("invalid config: {}", parts.join("; "))
}

impl DadiError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DadiError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            DadiError::Io { .. } => "io",
            DadiError::EmptyDataset => "empty_dataset",
            DadiError::MalformedRow { .. } => "malformed_row",
            DadiError::UnknownCategory { .. } => "unknown_category",
            DadiError::Schema(_) => "schema",
            DadiError::InvalidArgument(_) => "invalid_argument",
            DadiError::DuplicateCoordinate(_) => "duplicate_coordinate",
            DadiError::CoordinateOutOfRange { .. } => "coordinate_out_of_range",
            DadiError::EmptyMemory => "empty_memory",
            DadiError::IllegalAction { .. } => "illegal_action",
            DadiError::NotTerminal => "not_terminal",
            DadiError::SingleClass => "single_class",
            DadiError::EmptyGroup(_) => "empty_group",
            DadiError::Divergence { .. } => "divergence",
            DadiError::Format(_) => "format",
            DadiError::Config(_) => "config",
            DadiError::CellFailed { .. } => "cell_failed",
            DadiError::Csv(_) => "csv",
            DadiError::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, DadiError>;

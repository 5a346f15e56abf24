//! Ingestion, encoding, cross-validation splits, and synthetic data.

pub mod adult;
pub mod cache;
pub mod encode;
pub mod folds;
pub mod schema;
pub mod synthetic;
pub mod table;

pub use adult::{load_adult, load_adult_with, parse_adult, AdultOptions};
pub use encode::{encode_features, ActionGroup, ColumnStats, EncodedDataset, GroupCounts};
pub use folds::{make_folds, FoldSplit};
pub use schema::{ColumnKind, ColumnSpec, FeatureSchema};
pub use synthetic::{make_synthetic, SyntheticParams};
pub use table::{read_csv_table, RawColumn, RawTable, TargetEncoding};

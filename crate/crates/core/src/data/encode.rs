use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::schema::FeatureSchema;
use crate::data::table::{RawColumn, RawTable};
use crate::error::{DadiError, Result};

/// A block of encoded columns acquired together by one agent action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionGroup {
    pub group_id: usize,
    pub feature_indices: Vec<usize>,
    pub source_column: String,
}

/// Standardization statistics of one numeric source column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub column: String,
    pub mean: f64,
    pub std: f64,
}

/// Sizes of the whole population and of each sensitive group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCounts {
    pub total: usize,
    pub group0: usize,
    pub group1: usize,
}

impl GroupCounts {
    pub fn of(&self, b: u8) -> usize {
        if b == 0 {
            self.group0
        } else {
            self.group1
        }
    }
}

/// Encoded feature matrix with per-instance label and sensitive bit.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    /// `n_instances x n_features`.
    pub features: Array2<f64>,
    pub labels: Vec<u8>,
    pub sensitive: Vec<u8>,
    pub groups: Vec<ActionGroup>,
    pub feature_names: Vec<String>,
    pub standardization: Vec<ColumnStats>,
}

impl EncodedDataset {
    pub fn n_instances(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn group(&self, g: usize) -> &ActionGroup {
        &self.groups[g]
    }

    /// Id of the group built from `column`, if any.
    pub fn group_of_column(&self, column: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.source_column == column)
    }

    pub fn group_counts(&self, indices: &[usize]) -> GroupCounts {
        let group1 = indices.iter().filter(|&&i| self.sensitive[i] == 1).count();
        GroupCounts {
            total: indices.len(),
            group0: indices.len() - group1,
            group1,
        }
    }

    /// Checks shape consistency, the binary targets, and that groups partition
    /// the encoded columns.
    pub fn validate(&self) -> Result<()> {
        let n = self.features.nrows();
        if self.labels.len() != n || self.sensitive.len() != n {
            return Err(DadiError::Format("target length mismatch".into()));
        }
        if self.feature_names.len() != self.n_features() {
            return Err(DadiError::Format("feature name count mismatch".into()));
        }
        if self.labels.iter().chain(&self.sensitive).any(|&v| v > 1) {
            return Err(DadiError::Format("targets must be binary".into()));
        }
        check_partition(&self.groups, self.n_features())
    }
}

/// Errors unless every index in `0..d` belongs to exactly one nonempty group
/// and group ids are `0..groups.len()` in order.
pub fn check_partition(groups: &[ActionGroup], d: usize) -> Result<()> {
    let mut owner = vec![usize::MAX; d];
    for (gid, g) in groups.iter().enumerate() {
        if g.group_id != gid {
            return Err(DadiError::Format(format!("group {gid} has id {}", g.group_id)));
        }
        if g.feature_indices.is_empty() {
            return Err(DadiError::Format(format!("group {gid} is empty")));
        }
        for &j in &g.feature_indices {
            if j >= d {
                return Err(DadiError::Format(format!("group {gid} index {j} out of range")));
            }
            if owner[j] != usize::MAX {
                return Err(DadiError::Format(format!("index {j} in two groups")));
            }
            owner[j] = gid;
        }
    }
    if let Some(j) = owner.iter().position(|&o| o == usize::MAX) {
        return Err(DadiError::Format(format!("index {j} belongs to no group")));
    }
    Ok(())
}

/// One-hot encodes categorical columns and standardizes numeric ones using
/// statistics from `train_indices` only. Each source column becomes one
/// action group.
pub fn encode_features(
    schema: &FeatureSchema,
    table: &RawTable,
    train_indices: &[usize],
) -> Result<EncodedDataset> {
    if train_indices.is_empty() {
        return Err(DadiError::InvalidArgument("train_indices is empty".into()));
    }
    let n = table.n_rows();
    if n == 0 {
        return Err(DadiError::EmptyDataset);
    }
    if table.columns.len() != schema.columns().len() {
        return Err(DadiError::Schema("table does not match schema".into()));
    }
    if let Some(&bad) = train_indices.iter().find(|&&i| i >= n) {
        return Err(DadiError::InvalidArgument(format!("train index {bad} out of range")));
    }

    let width: usize = table
        .columns
        .iter()
        .map(|c| match c {
            RawColumn::Numeric(_) => 1,
            RawColumn::Categorical { levels, .. } => levels.len(),
        })
        .sum();
    let mut features = Array2::<f64>::zeros((n, width));
    let mut groups = Vec::with_capacity(table.columns.len());
    let mut names = Vec::with_capacity(width);
    let mut stats = Vec::new();
    let mut offset = 0;

    for (spec, column) in schema.columns().iter().zip(&table.columns) {
        if column.len() != n {
            return Err(DadiError::Schema(format!("column {} has wrong length", spec.name)));
        }
        match column {
            RawColumn::Numeric(values) => {
                let m = train_indices.len() as f64;
                let mean = train_indices.iter().map(|&i| values[i]).sum::<f64>() / m;
                let var = train_indices
                    .iter()
                    .map(|&i| (values[i] - mean).powi(2))
                    .sum::<f64>()
                    / m;
                let mut std = var.sqrt();
                if !(std > 0.0) || !std.is_finite() {
                    log::warn!("column {} has zero variance on the training split; using unit scale", spec.name);
                    std = 1.0;
                }
                for (i, v) in values.iter().enumerate() {
                    features[[i, offset]] = (v - mean) / std;
                }
                stats.push(ColumnStats {
                    column: spec.name.clone(),
                    mean,
                    std,
                });
                names.push(spec.name.clone());
                groups.push(ActionGroup {
                    group_id: groups.len(),
                    feature_indices: vec![offset],
                    source_column: spec.name.clone(),
                });
                offset += 1;
            }
            RawColumn::Categorical { levels, codes } => {
                if levels.is_empty() {
                    return Err(DadiError::Schema(format!("column {} has no levels", spec.name)));
                }
                for (i, &c) in codes.iter().enumerate() {
                    features[[i, offset + c as usize]] = 1.0;
                }
                names.extend(levels.iter().map(|l| format!("{}={}", spec.name, l)));
                groups.push(ActionGroup {
                    group_id: groups.len(),
                    feature_indices: (offset..offset + levels.len()).collect(),
                    source_column: spec.name.clone(),
                });
                offset += levels.len();
            }
        }
    }

    let ds = EncodedDataset {
        features,
        labels: table.labels.clone(),
        sensitive: table.sensitive.clone(),
        groups,
        feature_names: names,
        standardization: stats,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::ColumnSpec;

    fn one_categorical() -> (FeatureSchema, RawTable) {
        let schema = FeatureSchema::new(vec![ColumnSpec::categorical("c")], "s", "y", false).unwrap();
        let table = RawTable {
            columns: vec![RawColumn::Categorical {
                levels: vec!["a".into(), "b".into(), "c".into()],
                codes: vec![0, 1, 2, 1, 0],
            }],
            labels: vec![0, 1, 0, 1, 1],
            sensitive: vec![1, 0, 0, 1, 0],
        };
        (schema, table)
    }

    #[test]
    fn three_level_categorical_is_one_group_of_three() {
        let (schema, table) = one_categorical();
        let ds = encode_features(&schema, &table, &[0, 1, 2]).unwrap();
        assert_eq!(ds.n_features(), 3);
        assert_eq!(ds.n_groups(), 1);
        assert_eq!(ds.groups[0].feature_indices, vec![0, 1, 2]);
        for row in ds.features.rows() {
            assert_eq!(row.sum(), 1.0);
        }
    }

    #[test]
    fn all_numeric_schema_gives_singleton_groups() {
        let k = 4;
        let schema = FeatureSchema::new(
            (0..k).map(|i| ColumnSpec::numeric(format!("x{i}"))).collect(),
            "s",
            "y",
            false,
        )
        .unwrap();
        let table = RawTable {
            columns: (0..k)
                .map(|i| RawColumn::Numeric((0..6).map(|r| (r * (i + 1)) as f64).collect()))
                .collect(),
            labels: vec![0, 1, 0, 1, 0, 1],
            sensitive: vec![0, 0, 1, 1, 0, 1],
        };
        let ds = encode_features(&schema, &table, &[0, 1, 2, 3]).unwrap();
        assert_eq!(ds.n_groups(), k);
        assert!(ds.groups.iter().all(|g| g.feature_indices.len() == 1));
    }

    #[test]
    fn statistics_come_from_training_rows_only() {
        let schema = FeatureSchema::new(vec![ColumnSpec::numeric("x")], "s", "y", false).unwrap();
        let table = RawTable {
            columns: vec![RawColumn::Numeric(vec![1.0, 3.0, 100.0, 200.0])],
            labels: vec![0, 1, 0, 1],
            sensitive: vec![0, 1, 0, 1],
        };
        let ds = encode_features(&schema, &table, &[0, 1]).unwrap();
        assert_eq!(ds.standardization[0].mean, 2.0);
        assert_eq!(ds.standardization[0].std, 1.0);
        assert_eq!(ds.features[[2, 0]], 98.0);
        let other = encode_features(&schema, &table, &[2, 3]).unwrap();
        assert_ne!(other.standardization[0], ds.standardization[0]);
    }

    #[test]
    fn zero_variance_column_uses_unit_scale() {
        let schema = FeatureSchema::new(vec![ColumnSpec::numeric("x")], "s", "y", false).unwrap();
        let table = RawTable {
            columns: vec![RawColumn::Numeric(vec![5.0, 5.0, 7.0])],
            labels: vec![0, 1, 0],
            sensitive: vec![0, 1, 0],
        };
        let ds = encode_features(&schema, &table, &[0, 1]).unwrap();
        assert_eq!(ds.standardization[0].std, 1.0);
        assert_eq!(ds.features[[2, 0]], 2.0);
    }

    #[test]
    fn empty_train_indices_rejected() {
        let (schema, table) = one_categorical();
        assert!(encode_features(&schema, &table, &[]).is_err());
    }

    #[test]
    fn partition_check_catches_overlap_and_gaps() {
        let g = |id, idx: Vec<usize>| ActionGroup {
            group_id: id,
            feature_indices: idx,
            source_column: String::new(),
        };
        assert!(check_partition(&[g(0, vec![0, 1]), g(1, vec![2])], 3).is_ok());
        assert!(check_partition(&[g(0, vec![0, 1]), g(1, vec![1, 2])], 3).is_err());
        assert!(check_partition(&[g(0, vec![0])], 2).is_err());
        assert!(check_partition(&[g(0, vec![])], 0).is_err());
    }
}

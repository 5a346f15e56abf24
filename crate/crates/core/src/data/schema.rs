use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{DadiError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

impl ColumnSpec {
    pub fn numeric(name: impl Into<String>) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Numeric,
        }
    }

    pub fn categorical(name: impl Into<String>) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Categorical,
        }
    }
}

/// Acquirable feature columns plus the names of the label and sensitive columns.
///
/// The label column is never acquirable. The sensitive column is excluded from
/// the acquirable set unless `sensitive_acquirable` is set, in which case the
/// agent may request it like any other attribute (the adversary still receives
/// the bit as its target).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    columns: Vec<ColumnSpec>,
    sensitive_column: String,
    label_column: String,
    sensitive_acquirable: bool,
}

impl FeatureSchema {
    pub fn new(
        columns: Vec<ColumnSpec>,
        sensitive_column: impl Into<String>,
        label_column: impl Into<String>,
        sensitive_acquirable: bool,
    ) -> Result<Self> {
        let schema = FeatureSchema {
            columns,
            sensitive_column: sensitive_column.into(),
            label_column: label_column.into(),
            sensitive_acquirable,
        };
        schema.validate()?;
        Ok(schema)
    }

    fn validate(&self) -> Result<()> {
        if self.columns.is_empty() {
            return Err(DadiError::Schema("no feature columns".into()));
        }
        let mut seen = HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(DadiError::Schema(format!("duplicate column {:?}", c.name)));
            }
        }
        if seen.contains(self.label_column.as_str()) {
            return Err(DadiError::Schema(format!(
                "label column {:?} listed as a feature",
                self.label_column
            )));
        }
        let sensitive_listed = seen.contains(self.sensitive_column.as_str());
        if sensitive_listed && !self.sensitive_acquirable {
            return Err(DadiError::Schema(format!(
                "sensitive column {:?} listed as a feature",
                self.sensitive_column
            )));
        }
        if self.sensitive_acquirable && !sensitive_listed {
            return Err(DadiError::Schema(format!(
                "sensitive column {:?} marked acquirable but not listed",
                self.sensitive_column
            )));
        }
        if self.sensitive_column == self.label_column {
            return Err(DadiError::Schema(
                "label and sensitive column must differ".into(),
            ));
        }
        Ok(())
    }

    pub fn columns(&self) -> &[ColumnSpec] {
        &self.columns
    }

    pub fn sensitive_column(&self) -> &str {
        &self.sensitive_column
    }

    pub fn label_column(&self) -> &str {
        &self.label_column
    }

    pub fn sensitive_acquirable(&self) -> bool {
        self.sensitive_acquirable
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicate_columns() {
        let err = FeatureSchema::new(
            vec![ColumnSpec::numeric("a"), ColumnSpec::numeric("a")],
            "s",
            "y",
            false,
        )
        .unwrap_err();
        assert!(matches!(err, DadiError::Schema(_)));
    }

    #[test]
    fn label_never_acquirable() {
        assert!(FeatureSchema::new(vec![ColumnSpec::numeric("y")], "s", "y", false).is_err());
        assert!(FeatureSchema::new(vec![ColumnSpec::numeric("y")], "s", "y", true).is_err());
    }

    #[test]
    fn sensitive_needs_explicit_opt_in() {
        let cols = vec![ColumnSpec::numeric("a"), ColumnSpec::categorical("s")];
        assert!(FeatureSchema::new(cols.clone(), "s", "y", false).is_err());
        assert!(FeatureSchema::new(cols, "s", "y", true).is_ok());
        assert!(FeatureSchema::new(vec![ColumnSpec::numeric("a")], "s", "y", true).is_err());
    }
}

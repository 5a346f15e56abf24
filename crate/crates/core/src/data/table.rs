use std::collections::HashMap;
use std::io::Read;

use crate::data::schema::{ColumnKind, ColumnSpec, FeatureSchema};
use crate::error::{DadiError, Result};

/// Values of one feature column after parsing, before any encoding.
#[derive(Debug, Clone, PartialEq)]
pub enum RawColumn {
    Numeric(Vec<f64>),
    /// `codes[i]` indexes into `levels`.
    Categorical { levels: Vec<String>, codes: Vec<u32> },
}

impl RawColumn {
    pub fn len(&self) -> usize {
        match self {
            RawColumn::Numeric(v) => v.len(),
            RawColumn::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parsed rows in column-major form, aligned with `FeatureSchema::columns`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub columns: Vec<RawColumn>,
    pub labels: Vec<u8>,
    pub sensitive: Vec<u8>,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }
}

/// How the label and sensitive bit are read from their columns.
#[derive(Debug, Clone)]
pub struct TargetEncoding {
    pub label_positive: Vec<String>,
    pub sensitive_positive: Vec<String>,
}

pub(crate) fn is_missing(field: &str) -> bool {
    matches!(field, "" | "?" | "NA" | "NaN" | "nan")
}

/// Accumulates string rows into a [`RawTable`].
///
/// Categorical columns either carry a closed vocabulary (unknown values are
/// rejected) or grow their level list on first sight. Levels that never occur in
/// a retained row are pruned by [`TableBuilder::finish`].
pub(crate) struct TableBuilder {
    kinds: Vec<ColumnKind>,
    names: Vec<String>,
    vocab: Vec<Option<HashMap<String, u32>>>,
    levels: Vec<Vec<String>>,
    numeric: Vec<Vec<f64>>,
    codes: Vec<Vec<u32>>,
    labels: Vec<u8>,
    sensitive: Vec<u8>,
    targets: TargetEncoding,
    dropped: usize,
}

impl TableBuilder {
    pub fn new(
        columns: &[ColumnSpec],
        vocabularies: Vec<Option<Vec<String>>>,
        targets: TargetEncoding,
    ) -> Self {
        let n = columns.len();
        let mut vocab = Vec::with_capacity(n);
        let mut levels = Vec::with_capacity(n);
        for v in vocabularies.into_iter().chain(std::iter::repeat(None)).take(n) {
            match v {
                Some(list) => {
                    vocab.push(Some(
                        list.iter()
                            .enumerate()
                            .map(|(i, s)| (s.clone(), i as u32))
                            .collect(),
                    ));
                    levels.push(list);
                }
                None => {
                    vocab.push(None);
                    levels.push(Vec::new());
                }
            }
        }
        TableBuilder {
            kinds: columns.iter().map(|c| c.kind).collect(),
            names: columns.iter().map(|c| c.name.clone()).collect(),
            vocab,
            levels,
            numeric: vec![Vec::new(); n],
            codes: vec![Vec::new(); n],
            labels: Vec::new(),
            sensitive: Vec::new(),
            targets,
            dropped: 0,
        }
    }

    /// Adds one row. Rows with any missing field are skipped; returns whether
    /// the row was kept.
    pub fn push(&mut self, row: usize, fields: &[&str], label: &str, sensitive: &str) -> Result<bool> {
        debug_assert_eq!(fields.len(), self.kinds.len());
        if is_missing(label) || is_missing(sensitive) || fields.iter().any(|f| is_missing(f)) {
            self.dropped += 1;
            return Ok(false);
        }
        let mut nums = Vec::new();
        let mut cats = Vec::new();
        for (c, field) in fields.iter().enumerate() {
            match self.kinds[c] {
                ColumnKind::Numeric => {
                    let v: f64 = field.parse().map_err(|_| DadiError::MalformedRow {
                        row,
                        message: format!("column {} is not numeric: {:?}", self.names[c], field),
                    })?;
                    if !v.is_finite() {
                        return Err(DadiError::MalformedRow {
                            row,
                            message: format!("column {} is not finite", self.names[c]),
                        });
                    }
                    nums.push((c, v));
                }
                ColumnKind::Categorical => {
                    let code = match &self.vocab[c] {
                        Some(map) => *map.get(*field).ok_or_else(|| DadiError::UnknownCategory {
                            row,
                            column: self.names[c].clone(),
                            value: field.to_string(),
                        })?,
                        None => match self.levels[c].iter().position(|l| l == field) {
                            Some(i) => i as u32,
                            None => {
                                self.levels[c].push(field.to_string());
                                (self.levels[c].len() - 1) as u32
                            }
                        },
                    };
                    cats.push((c, code));
                }
            }
        }
        let y = self.targets.label_positive.iter().any(|p| p == label) as u8;
        let b = self.targets.sensitive_positive.iter().any(|p| p == sensitive) as u8;
        for (c, v) in nums {
            self.numeric[c].push(v);
        }
        for (c, code) in cats {
            self.codes[c].push(code);
        }
        self.labels.push(y);
        self.sensitive.push(b);
        Ok(true)
    }

    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn finish(self) -> Result<RawTable> {
        if self.labels.is_empty() {
            return Err(DadiError::EmptyDataset);
        }
        let mut columns = Vec::with_capacity(self.kinds.len());
        let mut numeric = self.numeric.into_iter();
        let mut codes = self.codes.into_iter();
        for (kind, levels) in self.kinds.iter().zip(self.levels) {
            let nums = numeric.next().unwrap_or_default();
            let cs = codes.next().unwrap_or_default();
            columns.push(match kind {
                ColumnKind::Numeric => RawColumn::Numeric(nums),
                ColumnKind::Categorical => prune_levels(levels, cs),
            });
        }
        Ok(RawTable {
            columns,
            labels: self.labels,
            sensitive: self.sensitive,
        })
    }
}

fn prune_levels(levels: Vec<String>, codes: Vec<u32>) -> RawColumn {
    let mut used = vec![false; levels.len()];
    for &c in &codes {
        used[c as usize] = true;
    }
    let mut remap = vec![u32::MAX; levels.len()];
    let mut kept = Vec::new();
    for (i, level) in levels.into_iter().enumerate() {
        if used[i] {
            remap[i] = kept.len() as u32;
            kept.push(level);
        }
    }
    let codes = codes.into_iter().map(|c| remap[c as usize]).collect();
    RawColumn::Categorical {
        levels: kept,
        codes,
    }
}

/// Reads a headed CSV whose header names every schema column plus the label
/// and sensitive columns. Extra columns are ignored.
pub fn read_csv_table<R: Read>(
    reader: R,
    schema: &FeatureSchema,
    targets: TargetEncoding,
) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DadiError::Schema(format!("column {name:?} missing from header")))
    };
    let feature_pos: Vec<usize> = schema
        .columns()
        .iter()
        .map(|c| find(&c.name))
        .collect::<Result<_>>()?;
    let label_pos = find(schema.label_column())?;
    let sensitive_pos = find(schema.sensitive_column())?;

    let mut builder = TableBuilder::new(schema.columns(), Vec::new(), targets);
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { .. } => DadiError::MalformedRow {
                row: i,
                message: "wrong number of fields".into(),
            },
            _ => DadiError::Csv(e),
        })?;
        let fields: Vec<&str> = feature_pos.iter().map(|&p| &record[p]).collect();
        builder.push(i, &fields, &record[label_pos], &record[sensitive_pos])?;
    }
    builder.finish()
}

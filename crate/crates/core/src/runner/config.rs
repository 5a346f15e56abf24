//! Experiment config files.
//!
//! ```toml
//! schema_version = 1
//! output_dir = "runs"          # relative paths resolve against the file
//! seed = 0
//! gamma_grid = [0.0, 0.5, 0.9]
//! reward_kinds = ["ce", "gnl1"]
//! n_folds = 8
//! folds = [0, 1]               # default: every fold
//!
//! [dataset]
//! kind = "synthetic"           # or "adult", "csv"
//! n = 5000                     # synthetic only
//! d_noise = 8
//! leak_strength = 1.0
//!
//! [pretrain]                   # optional, any subset of fields
//! iterations = 10000
//!
//! [joint]
//! iterations = 10000
//! ```
//!
//! `adult` takes `path` (file or directory with `adult.data` / `adult.test`)
//! and `sensitive_acquirable`. `csv` takes `path`, `label_column`,
//! `sensitive_column`, `label_positive`, `sensitive_positive`, `numeric`,
//! `categorical` and `sensitive_acquirable`. Every kind accepts `name`, which
//! names the output subdirectory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

use crate::env::AdversaryLoss;
use crate::error::{ConfigIssue, DadiError, Result};
use crate::trainer::{JointConfig, PretrainConfig};

pub const SCHEMA_VERSION: i64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    Synthetic {
        n: usize,
        d_noise: usize,
        leak_strength: f64,
    },
    Adult {
        path: PathBuf,
        sensitive_acquirable: bool,
    },
    Csv {
        path: PathBuf,
        label_column: String,
        sensitive_column: String,
        label_positive: Vec<String>,
        sensitive_positive: Vec<String>,
        numeric: Vec<String>,
        categorical: Vec<String>,
        sensitive_acquirable: bool,
    },
}

impl DatasetSpec {
    fn default_name(&self) -> &'static str {
        match self {
            DatasetSpec::Synthetic { .. } => "synthetic",
            DatasetSpec::Adult { .. } => "adult",
            DatasetSpec::Csv { .. } => "csv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub schema_version: i64,
    pub dataset_name: String,
    pub dataset: DatasetSpec,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub gamma_grid: Vec<f64>,
    pub reward_kinds: Vec<AdversaryLoss>,
    pub n_folds: usize,
    pub folds: Vec<usize>,
    pub pretrain: PretrainConfig,
    pub joint: JointConfig,
}

impl ExperimentConfig {
    /// A synthetic experiment with default training settings.
    pub fn synthetic(output_dir: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            dataset_name: "synthetic".into(),
            dataset: DatasetSpec::Synthetic {
                n: 5_000,
                d_noise: 8,
                leak_strength: 1.0,
            },
            output_dir: output_dir.into(),
            seed: 0,
            gamma_grid: vec![0.0, 0.9],
            reward_kinds: vec![AdversaryLoss::Ce],
            n_folds: 8,
            folds: (0..8).collect(),
            pretrain: PretrainConfig::default(),
            joint: JointConfig::default(),
        }
    }

    /// Root of this dataset's artifacts.
    pub fn dataset_dir(&self) -> PathBuf {
        self.output_dir.join(&self.dataset_name)
    }
}

/// Reads and validates a config file.
pub fn validate_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| DadiError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_config(&text, base)
}

/// Parses config text; relative paths resolve against `base`. Every schema
/// violation is collected before returning.
pub fn parse_config(text: &str, base: &Path) -> Result<ExperimentConfig> {
    let root: Table = text.parse().map_err(|e: toml::de::Error| {
        DadiError::Config(vec![ConfigIssue {
            key: "<file>".into(),
            message: e.message().to_string(),
        }])
    })?;
    let mut w = Walker::default();
    w.unknown_keys(
        &root,
        "",
        &[
            "schema_version",
            "output_dir",
            "seed",
            "gamma_grid",
            "reward_kinds",
            "n_folds",
            "folds",
            "dataset",
            "pretrain",
            "joint",
        ],
    );

    let schema_version = match root.get("schema_version") {
        None => w.issue("schema_version", "missing"),
        Some(Value::Integer(SCHEMA_VERSION)) => Some(SCHEMA_VERSION),
        Some(v) => w.issue("schema_version", format!("unsupported version {v}, expected {SCHEMA_VERSION}")),
    };
    let output_dir = w.string(&root, "output_dir").map(|s| base.join(s));
    let output_dir = output_dir.or_else(|| {
        if root.contains_key("output_dir") {
            None
        } else {
            w.issue("output_dir", "missing")
        }
    });
    let seed = w.uint(&root, "seed", Some(0));

    let gamma_grid = w.floats(&root, "gamma_grid").and_then(|g| {
        let mut ok = true;
        for (i, v) in g.iter().enumerate() {
            if !(0.0..=1.0).contains(v) {
                w.issue::<()>(&format!("gamma_grid[{i}]"), format!("{v} outside [0, 1]"));
                ok = false;
            }
        }
        if g.is_empty() {
            return w.issue("gamma_grid", "must not be empty");
        }
        let distinct: BTreeSet<u64> = g.iter().map(|v| v.to_bits()).collect();
        if distinct.len() != g.len() {
            return w.issue("gamma_grid", "duplicate values");
        }
        ok.then_some(g)
    });

    let reward_kinds = match root.get("reward_kinds") {
        None => Some(vec![AdversaryLoss::Ce]),
        Some(Value::Array(items)) if !items.is_empty() => {
            let mut out = Vec::new();
            let mut ok = true;
            for (i, item) in items.iter().enumerate() {
                match item.as_str().and_then(AdversaryLoss::parse) {
                    Some(k) if !out.contains(&k) => out.push(k),
                    Some(_) => ok = w.issue::<()>("reward_kinds", "duplicate kind").is_some(),
                    None => ok = w.issue::<()>(&format!("reward_kinds[{i}]"), "expected \"ce\" or \"gnl1\"").is_some(),
                }
            }
            ok.then_some(out)
        }
        Some(_) => w.issue("reward_kinds", "expected a non-empty array of strings"),
    };

    let n_folds = w.uint(&root, "n_folds", Some(8)).and_then(|k| {
        if k < 2 {
            w.issue("n_folds", "must be at least 2")
        } else {
            Some(k as usize)
        }
    });
    let folds = match (root.get("folds"), n_folds) {
        (None, Some(k)) => Some((0..k).collect::<Vec<usize>>()),
        (None, None) => None,
        (Some(Value::Array(items)), k) => {
            let mut out = Vec::new();
            let mut ok = true;
            for (i, item) in items.iter().enumerate() {
                match item.as_integer() {
                    Some(f) if f >= 0 && k.is_none_or(|k| (f as usize) < k) => out.push(f as usize),
                    _ => ok = w.issue::<()>(&format!("folds[{i}]"), "expected a fold id below n_folds").is_some(),
                }
            }
            out.sort_unstable();
            out.dedup();
            if items.is_empty() {
                w.issue("folds", "must name at least one fold")
            } else {
                ok.then_some(out)
            }
        }
        (Some(_), _) => w.issue("folds", "expected an array of integers"),
    };

    let dataset = match root.get("dataset") {
        Some(Value::Table(t)) => w.dataset(t, base),
        Some(_) => w.issue("dataset", "expected a table"),
        None => w.issue("dataset", "missing"),
    };
    let pretrain: Option<PretrainConfig> = w.section(&root, "pretrain");
    let pretrain = pretrain.and_then(|p| match p.validate() {
        Ok(()) => Some(p),
        Err(e) => w.issue("pretrain", e.to_string()),
    });
    let joint: Option<JointConfig> = w.section(&root, "joint");
    let joint = joint.and_then(|j| match j.validate() {
        Ok(()) => Some(j),
        Err(e) => w.issue("joint", e.to_string()),
    });

    if !w.issues.is_empty() {
        return Err(DadiError::Config(w.issues));
    }
    let (dataset_name, dataset) = dataset.expect("no issues");
    Ok(ExperimentConfig {
        schema_version: schema_version.expect("no issues"),
        dataset_name,
        dataset,
        output_dir: output_dir.expect("no issues"),
        seed: seed.expect("no issues"),
        gamma_grid: gamma_grid.expect("no issues"),
        reward_kinds: reward_kinds.expect("no issues"),
        n_folds: n_folds.expect("no issues"),
        folds: folds.expect("no issues"),
        pretrain: pretrain.expect("no issues"),
        joint: joint.expect("no issues"),
    })
}

#[derive(Default)]
struct Walker {
    issues: Vec<ConfigIssue>,
}

impl Walker {
    fn issue<T>(&mut self, key: &str, message: impl Into<String>) -> Option<T> {
        self.issues.push(ConfigIssue {
            key: key.to_string(),
            message: message.into(),
        });
        None
    }

    fn unknown_keys(&mut self, t: &Table, prefix: &str, known: &[&str]) {
        for k in t.keys().filter(|k| !known.contains(&k.as_str())) {
            self.issue::<()>(&format!("{prefix}{k}"), "unknown key");
        }
    }

    fn string(&mut self, t: &Table, key: &str) -> Option<String> {
        match t.get(key)? {
            Value::String(s) if !s.is_empty() => Some(s.clone()),
            _ => self.issue(key, "expected a non-empty string"),
        }
    }

    fn uint(&mut self, t: &Table, key: &str, default: Option<u64>) -> Option<u64> {
        match t.get(key) {
            None => default.or_else(|| self.issue(key, "missing")),
            Some(Value::Integer(v)) if *v >= 0 => Some(*v as u64),
            Some(_) => self.issue(key, "expected a non-negative integer"),
        }
    }

    fn bool(&mut self, t: &Table, key: &str, prefix: &str, default: bool) -> Option<bool> {
        match t.get(key) {
            None => Some(default),
            Some(Value::Boolean(b)) => Some(*b),
            Some(_) => self.issue(&format!("{prefix}{key}"), "expected a boolean"),
        }
    }

    fn floats(&mut self, t: &Table, key: &str) -> Option<Vec<f64>> {
        match t.get(key) {
            None => self.issue(key, "missing"),
            Some(Value::Array(items)) => {
                let vals: Option<Vec<f64>> = items
                    .iter()
                    .map(|v| v.as_float().or_else(|| v.as_integer().map(|i| i as f64)))
                    .collect();
                vals.or_else(|| self.issue(key, "expected an array of numbers"))
            }
            Some(_) => self.issue(key, "expected an array of numbers"),
        }
    }

    fn strings(&mut self, t: &Table, key: &str, prefix: &str, required: bool) -> Option<Vec<String>> {
        let full = format!("{prefix}{key}");
        match t.get(key) {
            None if required => self.issue(&full, "missing"),
            None => Some(Vec::new()),
            Some(Value::Array(items)) => {
                let vals: Option<Vec<String>> = items.iter().map(|v| v.as_str().map(str::to_string)).collect();
                vals.or_else(|| self.issue(&full, "expected an array of strings"))
            }
            Some(_) => self.issue(&full, "expected an array of strings"),
        }
    }

    fn path(&mut self, t: &Table, base: &Path) -> Option<PathBuf> {
        match t.get("path") {
            None => self.issue("dataset.path", "missing"),
            Some(Value::String(s)) => {
                let p = base.join(s);
                if p.exists() {
                    Some(p)
                } else {
                    self.issue("dataset.path", format!("{} does not exist", p.display()))
                }
            }
            Some(_) => self.issue("dataset.path", "expected a string"),
        }
    }

    fn dataset(&mut self, t: &Table, base: &Path) -> Option<(String, DatasetSpec)> {
        let name = match t.get("name") {
            None => None,
            Some(Value::String(s)) if is_safe_name(s) => Some(s.clone()),
            Some(_) => return self.issue("dataset.name", "expected letters, digits, '-' or '_'"),
        };
        let p = "dataset.";
        let spec = match t.get("kind").and_then(Value::as_str) {
            Some("synthetic") => {
                self.unknown_keys(t, p, &["kind", "name", "n", "d_noise", "leak_strength"]);
                let n = match t.get("n") {
                    None => Some(5_000),
                    Some(Value::Integer(v)) if *v >= 100 => Some(*v as usize),
                    Some(_) => self.issue("dataset.n", "expected an integer of at least 100"),
                };
                let d_noise = match t.get("d_noise") {
                    None => Some(8),
                    Some(Value::Integer(v)) if *v >= 0 => Some(*v as usize),
                    Some(_) => self.issue("dataset.d_noise", "expected a non-negative integer"),
                };
                let leak_strength = match t.get("leak_strength") {
                    None => Some(1.0),
                    Some(v) => match v.as_float().or_else(|| v.as_integer().map(|i| i as f64)) {
                        Some(x) if (0.0..=1.0).contains(&x) => Some(x),
                        _ => self.issue("dataset.leak_strength", "expected a number in [0, 1]"),
                    },
                };
                Some(DatasetSpec::Synthetic {
                    n: n?,
                    d_noise: d_noise?,
                    leak_strength: leak_strength?,
                })
            }
            Some("adult") => {
                self.unknown_keys(t, p, &["kind", "name", "path", "sensitive_acquirable"]);
                let path = self.path(t, base);
                let sa = self.bool(t, "sensitive_acquirable", p, true);
                Some(DatasetSpec::Adult {
                    path: path?,
                    sensitive_acquirable: sa?,
                })
            }
            Some("csv") => {
                self.unknown_keys(
                    t,
                    p,
                    &[
                        "kind",
                        "name",
                        "path",
                        "label_column",
                        "sensitive_column",
                        "label_positive",
                        "sensitive_positive",
                        "numeric",
                        "categorical",
                        "sensitive_acquirable",
                    ],
                );
                let path = self.path(t, base);
                let label_column = self.string(t, "label_column").or_else(|| {
                    if t.contains_key("label_column") {
                        None
                    } else {
                        self.issue("dataset.label_column", "missing")
                    }
                });
                let sensitive_column = self.string(t, "sensitive_column").or_else(|| {
                    if t.contains_key("sensitive_column") {
                        None
                    } else {
                        self.issue("dataset.sensitive_column", "missing")
                    }
                });
                let label_positive = self.strings(t, "label_positive", p, true);
                let sensitive_positive = self.strings(t, "sensitive_positive", p, true);
                let numeric = self.strings(t, "numeric", p, false);
                let categorical = self.strings(t, "categorical", p, false);
                let sa = self.bool(t, "sensitive_acquirable", p, true);
                if let (Some(n), Some(c)) = (&numeric, &categorical) {
                    if n.is_empty() && c.is_empty() {
                        self.issue::<()>("dataset.numeric", "no feature columns listed");
                    }
                }
                Some(DatasetSpec::Csv {
                    path: path?,
                    label_column: label_column?,
                    sensitive_column: sensitive_column?,
                    label_positive: label_positive?,
                    sensitive_positive: sensitive_positive?,
                    numeric: numeric?,
                    categorical: categorical?,
                    sensitive_acquirable: sa?,
                })
            }
            Some(other) => self.issue("dataset.kind", format!("unknown kind {other:?}")),
            None => self.issue("dataset.kind", "missing"),
        }?;
        Some((name.unwrap_or_else(|| spec.default_name().to_string()), spec))
    }

    /// Deserializes an optional section over the type's defaults, checking
    /// each key on its own so that every bad key is reported.
    fn section<T: Serialize + DeserializeOwned + Default>(&mut self, root: &Table, key: &str) -> Option<T> {
        let defaults = match Value::try_from(T::default()) {
            Ok(Value::Table(t)) => t,
            _ => unreachable!("config sections serialize to tables"),
        };
        let given = match root.get(key) {
            None => return Some(T::default()),
            Some(Value::Table(t)) => t,
            Some(_) => return self.issue(key, "expected a table"),
        };
        let mut merged = defaults.clone();
        let mut ok = true;
        for (k, v) in given {
            if !defaults.contains_key(k) {
                ok = self.issue::<()>(&format!("{key}.{k}"), "unknown key").is_some();
                continue;
            }
            let mut probe = defaults.clone();
            probe.insert(k.clone(), v.clone());
            if let Err(e) = Value::Table(probe).try_into::<T>() {
                ok = self.issue::<()>(&format!("{key}.{k}"), e.message().to_string()).is_some();
                continue;
            }
            merged.insert(k.clone(), v.clone());
        }
        if !ok {
            return None;
        }
        Value::Table(merged).try_into::<T>().ok()
    }
}

fn is_safe_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

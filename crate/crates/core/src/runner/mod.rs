//! End-to-end experiment orchestration: ingest, pretrain, joint training per
//! `(reward kind, gamma, fold)` cell, evaluation, and reporting.
//!
//! Layout under `<output_dir>/<dataset>/`:
//!
//! ```text
//! data/ingest.json data/folds.json data/fold_<k>.bin
//! pretrain/fold_<k>/{checkpoint.json, curve.json, baseline.json}
//! <kind>/gamma_<v>/fold_<k>/{checkpoint.json, train_log.csv, validation.json, eval_run.json, metrics.json}
//! report.csv aggregate.csv baseline.csv report.json tradeoff.svg
//! ```
//!
//! Every file is written atomically, so an interrupted run leaves completed
//! artifacts intact. With `resume`, stages skip work whose final artifact
//! already exists.

mod config;
mod pool;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

pub use config::{parse_config, validate_config, DatasetSpec, ExperimentConfig, SCHEMA_VERSION};
pub use pool::run_jobs;

use crate::data::cache::{read_dataset, write_dataset};
use crate::data::{
    encode_features, load_adult_with, make_folds, make_synthetic, read_csv_table, AdultOptions, ColumnSpec,
    EncodedDataset, FeatureSchema, FoldSplit, SyntheticParams, TargetEncoding,
};
use crate::env::{AdversaryLoss, RewardConfig};
use crate::error::{DadiError, Result};
use crate::eval::{
    aggregate_folds, baseline_full_features, evaluate_policy, quartiles, render_tradeoff_svg, sort_rows,
    write_aggregate_csv, write_report_csv, TradeoffRow, DECISION_THRESHOLD,
};
use crate::fsutil::write_atomic;
use crate::networks::{BundleOptimizers, Checkpoint, ModelBundle};
use crate::rng::derive_seed;
use crate::trainer::{joint_train, pretrain, JointObserver, LogRow, TrainLogWriter};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub workers: usize,
    pub resume: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            workers: 1,
            resume: false,
        }
    }
}

/// One `(reward kind, gamma, fold)` job.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub kind: AdversaryLoss,
    pub gamma: f64,
    pub fold: usize,
}

impl Cell {
    pub fn dir(&self, config: &ExperimentConfig) -> PathBuf {
        config
            .dataset_dir()
            .join(self.kind.as_str())
            .join(format!("gamma_{}", self.gamma))
            .join(format!("fold_{}", self.fold))
    }

    fn label(&self) -> String {
        format!("{}/gamma_{}/fold_{}", self.kind, self.gamma, self.fold)
    }

    fn seed(&self, base: u64) -> u64 {
        let kind = match self.kind {
            AdversaryLoss::Ce => 0,
            AdversaryLoss::Gnl1 => 1,
        };
        derive_seed(base, &[self.fold as u64, kind, self.gamma.to_bits(), 2])
    }
}

/// Cells in report order: kind, then gamma, then fold.
pub fn cells(config: &ExperimentConfig) -> Vec<Cell> {
    let mut gammas = config.gamma_grid.clone();
    gammas.sort_by(f64::total_cmp);
    let mut kinds = config.reward_kinds.clone();
    kinds.sort_by_key(|k| k.as_str());
    let mut out = Vec::new();
    for &kind in &kinds {
        for &gamma in &gammas {
            for &fold in &config.folds {
                out.push(Cell { kind, gamma, fold });
            }
        }
    }
    out
}

/// Per-cell evaluation summary stored as `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub fold: usize,
    pub gamma: f64,
    pub reward_kind: AdversaryLoss,
    pub auc: f64,
    pub disparity: f64,
    pub mean_features: f64,
    pub accuracy: f64,
    pub n_instances: usize,
    pub threshold: f64,
    /// Per action group, the fraction of test instances that acquired it.
    pub acquisition_rates: Vec<f64>,
}

impl CellMetrics {
    pub fn row(&self) -> TradeoffRow {
        TradeoffRow {
            fold: self.fold,
            gamma: self.gamma,
            reward_kind: self.reward_kind,
            auc: self.auc,
            disparity: self.disparity,
            mean_features: self.mean_features,
        }
    }
}

/// Full-feature test metrics of a fold's pretrained classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub fold: usize,
    pub auc: f64,
    pub disparity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub dataset: String,
    pub n_instances: usize,
    pub n_features: usize,
    pub group_names: Vec<String>,
    pub n_folds: usize,
    pub source: serde_json::Value,
}

fn data_dir(config: &ExperimentConfig) -> PathBuf {
    config.dataset_dir().join("data")
}

fn pretrain_dir(config: &ExperimentConfig, fold: usize) -> PathBuf {
    config.dataset_dir().join("pretrain").join(format!("fold_{fold}"))
}

fn fold_path(config: &ExperimentConfig, fold: usize) -> PathBuf {
    data_dir(config).join(format!("fold_{fold}.bin"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| DadiError::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

/// Identity of the ingested data; a resumed run must match it.
fn ingest_fingerprint(config: &ExperimentConfig) -> serde_json::Value {
    json!({
        "dataset": config.dataset,
        "seed": config.seed,
        "n_folds": config.n_folds,
    })
}

/// Loads the raw source and writes every configured fold's encoded dataset
/// (numeric statistics from that fold's training rows) plus the split table.
pub fn ingest(config: &ExperimentConfig, opts: &RunOptions) -> Result<IngestSummary> {
    let dir = data_dir(config);
    let summary_path = dir.join("ingest.json");
    let fingerprint = ingest_fingerprint(config);
    if opts.resume && summary_path.exists() {
        let prev: IngestSummary = read_json(&summary_path)?;
        if prev.source != fingerprint {
            return Err(DadiError::InvalidArgument(format!(
                "{} was produced by a different dataset config; use a fresh output directory",
                summary_path.display()
            )));
        }
        if config.folds.iter().all(|&k| fold_path(config, k).exists()) {
            log::info!("ingest: reusing {}", dir.display());
            return Ok(prev);
        }
    }

    let (n, build): (usize, Box<dyn Fn(&FoldSplit) -> Result<EncodedDataset>>) = match &config.dataset {
        DatasetSpec::Synthetic {
            n,
            d_noise,
            leak_strength,
        } => {
            let ds = make_synthetic(&SyntheticParams {
                n: *n,
                d_noise: *d_noise,
                leak_strength: *leak_strength,
                seed: derive_seed(config.seed, &[7]),
            })?;
            (ds.n_instances(), Box::new(move |_| Ok(ds.clone())))
        }
        DatasetSpec::Adult {
            path,
            sensitive_acquirable,
        } => {
            let (schema, table) = load_adult_with(
                path,
                AdultOptions {
                    sensitive_acquirable: *sensitive_acquirable,
                },
            )?;
            (
                table.n_rows(),
                Box::new(move |s: &FoldSplit| encode_features(&schema, &table, &s.train_indices)),
            )
        }
        DatasetSpec::Csv {
            path,
            label_column,
            sensitive_column,
            label_positive,
            sensitive_positive,
            numeric,
            categorical,
            sensitive_acquirable,
        } => {
            let columns = numeric
                .iter()
                .map(ColumnSpec::numeric)
                .chain(categorical.iter().map(ColumnSpec::categorical))
                .collect();
            let schema = FeatureSchema::new(columns, sensitive_column, label_column, *sensitive_acquirable)?;
            let f = File::open(path).map_err(|e| DadiError::io(path, e))?;
            let table = read_csv_table(
                BufReader::new(f),
                &schema,
                TargetEncoding {
                    label_positive: label_positive.clone(),
                    sensitive_positive: sensitive_positive.clone(),
                },
            )?;
            (
                table.n_rows(),
                Box::new(move |s: &FoldSplit| encode_features(&schema, &table, &s.train_indices)),
            )
        }
    };

    let splits = make_folds(n, config.n_folds, derive_seed(config.seed, &[0]))?;
    write_json(&dir.join("folds.json"), &splits)?;
    let mut shape = None;
    for &k in &config.folds {
        let ds = build(&splits[k])?;
        write_dataset(&fold_path(config, k), &ds)?;
        shape.get_or_insert((ds.n_features(), ds.groups.iter().map(|g| g.source_column.clone()).collect()));
    }
    let (n_features, group_names) = shape.expect("at least one fold");
    let summary = IngestSummary {
        dataset: config.dataset_name.clone(),
        n_instances: n,
        n_features,
        group_names,
        n_folds: config.n_folds,
        source: fingerprint,
    };
    write_json(&summary_path, &summary)?;
    log::info!("ingest: {n} instances, {} folds written", config.folds.len());
    Ok(summary)
}

fn load_fold(config: &ExperimentConfig, fold: usize) -> Result<(EncodedDataset, FoldSplit)> {
    let ds = read_dataset(&fold_path(config, fold))?;
    let splits: Vec<FoldSplit> = read_json(&data_dir(config).join("folds.json"))?;
    let split = splits
        .into_iter()
        .find(|s| s.fold_id == fold)
        .ok_or_else(|| DadiError::Format(format!("fold {fold} missing from folds.json")))?;
    if split
        .train_indices
        .iter()
        .chain(&split.val_indices)
        .chain(&split.test_indices)
        .any(|&i| i >= ds.n_instances())
    {
        return Err(DadiError::Format(format!("fold {fold} indices exceed the dataset")));
    }
    Ok((ds, split))
}

fn meta(pairs: &[(&str, serde_json::Value)]) -> BTreeMap<String, serde_json::Value> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

/// Pretrains both classifiers for every configured fold.
pub fn pretrain_stage(config: &ExperimentConfig, opts: &RunOptions) -> Result<()> {
    run_jobs(
        &config.folds,
        opts.workers,
        |k| format!("pretrain/fold_{k}"),
        |&fold| {
            let dir = pretrain_dir(config, fold);
            if opts.resume && dir.join("baseline.json").exists() {
                log::info!("pretrain fold {fold}: done, skipping");
                return Ok(());
            }
            let (ds, split) = load_fold(config, fold)?;
            let init = ModelBundle::new(ds.n_features(), ds.n_groups(), derive_seed(config.seed, &[fold as u64, 3]));
            let out = pretrain(init, &ds, &split, &config.pretrain, derive_seed(config.seed, &[fold as u64, 1]))?;
            log::info!(
                "pretrain fold {fold}: label auc {:.4} @ {}, adversary auc {:.4} @ {}",
                out.best_label_auc,
                out.best_label_iteration,
                out.best_adversary_auc,
                out.best_adversary_iteration
            );
            let ck = out.bundle.checkpoint(
                None,
                meta(&[
                    ("stage", json!("pretrain")),
                    ("fold", json!(fold)),
                    ("best_label_iteration", json!(out.best_label_iteration)),
                    ("best_adversary_iteration", json!(out.best_adversary_iteration)),
                ]),
            );
            ck.save(&dir.join("checkpoint.json"))?;
            write_json(&dir.join("curve.json"), &out.curve)?;
            let run = baseline_full_features(&out.bundle, &ds, &split.test_indices)?;
            write_json(
                &dir.join("baseline.json"),
                &Baseline {
                    fold,
                    auc: run.auc()?,
                    disparity: run.disparity()?,
                },
            )
        },
    )
}

/// Writes rolling and divergence checkpoints while a cell trains.
struct CellObserver {
    dir: PathBuf,
    log: Vec<LogRow>,
    meta: BTreeMap<String, serde_json::Value>,
}

impl JointObserver for CellObserver {
    fn on_log(&mut self, row: &LogRow) -> Result<()> {
        self.log.push(row.clone());
        Ok(())
    }

    fn on_checkpoint(&mut self, iteration: usize, bundle: &ModelBundle, optim: &BundleOptimizers) -> Result<()> {
        let mut m = self.meta.clone();
        m.insert("iteration".into(), json!(iteration));
        bundle.checkpoint(Some(optim), m).save(&self.dir.join("checkpoint_latest.json"))
    }

    fn on_divergence(&mut self, iteration: usize, bundle: &ModelBundle, optim: &BundleOptimizers) {
        let mut m = self.meta.clone();
        m.insert("diverged_at".into(), json!(iteration));
        if let Err(e) = bundle.checkpoint(Some(optim), m).save(&self.dir.join("diverged.json")) {
            log::warn!("could not save divergence checkpoint: {e}");
        }
    }
}

fn log_csv(rows: &[LogRow]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let mut w = TrainLogWriter::new(&mut buf).map_err(|e| DadiError::io("<train log>", e))?;
    for r in rows {
        w.write(r).map_err(|e| DadiError::io("<train log>", e))?;
    }
    Ok(buf)
}

/// Joint training of one cell from its fold's pretrained bundle.
pub fn train_cell(config: &ExperimentConfig, cell: &Cell, opts: &RunOptions) -> Result<()> {
    let dir = cell.dir(config);
    if opts.resume && dir.join("checkpoint.json").exists() {
        log::info!("train {}: done, skipping", cell.label());
        return Ok(());
    }
    let (ds, split) = load_fold(config, cell.fold)?;
    let ck = Checkpoint::load(&pretrain_dir(config, cell.fold).join("checkpoint.json"))?;
    let (bundle, _) = ModelBundle::from_checkpoint(&ck)?;
    if bundle.n_coords() != ds.n_features() || bundle.n_groups() != ds.n_groups() {
        return Err(DadiError::Format("pretrained checkpoint does not match the dataset".into()));
    }
    let reward = RewardConfig::new(cell.gamma, cell.kind, ds.group_counts(&split.train_indices))?;
    let cell_meta = meta(&[
        ("stage", json!("joint")),
        ("fold", json!(cell.fold)),
        ("gamma", json!(cell.gamma)),
        ("reward_kind", json!(cell.kind.as_str())),
    ]);
    let mut observer = CellObserver {
        dir: dir.clone(),
        log: Vec::new(),
        meta: cell_meta.clone(),
    };
    let out = joint_train(
        bundle,
        &ds,
        &split,
        &config.joint,
        &reward,
        cell.seed(config.seed),
        &mut observer,
    )?;
    write_atomic(&dir.join("train_log.csv"), &log_csv(&out.log)?)?;
    write_json(&dir.join("validation.json"), &out.validation)?;
    let mut m = cell_meta;
    m.insert("iteration".into(), json!(config.joint.iterations));
    out.bundle
        .checkpoint(Some(&out.optimizers), m)
        .save(&dir.join("checkpoint.json"))?;
    log::info!("train {}: {} iterations", cell.label(), config.joint.iterations);
    Ok(())
}

/// Greedy test-set evaluation of one trained cell.
pub fn evaluate_cell(config: &ExperimentConfig, cell: &Cell, opts: &RunOptions) -> Result<CellMetrics> {
    let dir = cell.dir(config);
    let metrics_path = dir.join("metrics.json");
    if opts.resume && metrics_path.exists() {
        return read_json(&metrics_path);
    }
    let (ds, split) = load_fold(config, cell.fold)?;
    let (bundle, _) = ModelBundle::from_checkpoint(&Checkpoint::load(&dir.join("checkpoint.json"))?)?;
    let run = evaluate_policy(&bundle, &ds, &split.test_indices)?;
    let summary = run.summary()?;
    let metrics = CellMetrics {
        fold: cell.fold,
        gamma: cell.gamma,
        reward_kind: cell.kind,
        auc: summary.auc,
        disparity: summary.disparity,
        mean_features: summary.mean_features,
        accuracy: summary.accuracy,
        n_instances: summary.n_instances,
        threshold: summary.threshold,
        acquisition_rates: (0..ds.n_groups()).map(|g| run.acquisition_rate(g)).collect(),
    };
    write_json(&dir.join("eval_run.json"), &run)?;
    write_json(&metrics_path, &metrics)?;
    log::info!(
        "evaluate {}: auc {:.4}, disparity {:.4}, features {:.2}",
        cell.label(),
        metrics.auc,
        metrics.disparity,
        metrics.mean_features
    );
    Ok(metrics)
}

pub fn train_stage(config: &ExperimentConfig, opts: &RunOptions) -> Result<()> {
    run_jobs(&cells(config), opts.workers, Cell::label, |c| train_cell(config, c, opts))
}

pub fn evaluate_stage(config: &ExperimentConfig, opts: &RunOptions) -> Result<()> {
    run_jobs(&cells(config), opts.workers, Cell::label, |c| {
        evaluate_cell(config, c, opts).map(|_| ())
    })
}

/// Collects every cell's metrics into the report files and returns the rows.
pub fn report_stage(config: &ExperimentConfig) -> Result<Vec<TradeoffRow>> {
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for cell in cells(config) {
        let path = cell.dir(config).join("metrics.json");
        if path.exists() {
            rows.push(read_json::<CellMetrics>(&path)?.row());
        } else {
            missing.push(cell.label());
        }
    }
    if !missing.is_empty() {
        return Err(DadiError::InvalidArgument(format!(
            "cells without metrics: {}",
            missing.join(", ")
        )));
    }
    sort_rows(&mut rows);
    let root = config.dataset_dir();
    let mut buf = Vec::new();
    write_report_csv(&mut buf, &rows)?;
    write_atomic(&root.join("report.csv"), &buf)?;

    let agg = aggregate_folds(&rows);
    let mut buf = Vec::new();
    write_aggregate_csv(&mut buf, &agg)?;
    write_atomic(&root.join("aggregate.csv"), &buf)?;

    let mut baselines = Vec::new();
    for &fold in &config.folds {
        let path = pretrain_dir(config, fold).join("baseline.json");
        if path.exists() {
            baselines.push(read_json::<Baseline>(&path)?);
        }
    }
    let mut text = String::from("fold,auc,disparity\n");
    for b in &baselines {
        text.push_str(&format!("{},{},{}\n", b.fold, b.auc, b.disparity));
    }
    write_atomic(&root.join("baseline.csv"), text.as_bytes())?;

    write_json(
        &root.join("report.json"),
        &json!({
            "dataset": config.dataset_name,
            "seed": config.seed,
            "cells": rows.len(),
            "decision_threshold": DECISION_THRESHOLD,
            "quantiles": "linear interpolation between order statistics (type 7)",
            "aggregation": "median and first/third quartiles over folds",
        }),
    )?;

    let baseline = (!baselines.is_empty()).then(|| {
        (
            quartiles(&baselines.iter().map(|b| b.auc).collect::<Vec<_>>()).median,
            quartiles(&baselines.iter().map(|b| b.disparity).collect::<Vec<_>>()).median,
        )
    });
    let svg = root.join("tradeoff.svg");
    let tmp = root.join(".tradeoff.svg.tmp");
    render_tradeoff_svg(&tmp, &config.dataset_name, &agg, baseline)?;
    std::fs::rename(&tmp, &svg).map_err(|e| DadiError::io(&svg, e))?;
    log::info!("report: {} rows in {}", rows.len(), root.join("report.csv").display());
    Ok(rows)
}

/// Runs every stage in order.
pub fn run_experiment(config: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<TradeoffRow>> {
    ingest(config, opts)?;
    pretrain_stage(config, opts)?;
    train_stage(config, opts)?;
    evaluate_stage(config, opts)?;
    report_stage(config)
}

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{EncodedDataset, FoldSplit};
use crate::encoder::SetBatch;
use crate::env::{adversary_loss_gnl1, binary_cross_entropy, AcquisitionEnv, AcquisitionState};
use crate::error::{DadiError, Result};
use crate::eval::auc;
use crate::networks::{bce_grads, BundleOptimizers, ModelBundle};
use crate::rng::seeded;
use crate::trainer::{random_mask, PretrainConfig};

/// Scores of both classifiers on the masked validation sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    pub iteration: usize,
    pub label_auc: f64,
    pub label_loss: f64,
    pub adversary_auc: f64,
    pub adversary_loss: f64,
    /// Mean group-normalized L1 loss of the adversary; absent when the
    /// training split lacks one of the groups.
    pub adversary_gnl1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    /// Best label side and best adversary side, selected independently.
    pub bundle: ModelBundle,
    pub curve: Vec<ValidationPoint>,
    pub best_label_iteration: usize,
    pub best_label_auc: f64,
    pub best_adversary_iteration: usize,
    pub best_adversary_auc: f64,
}

/// Trains both classifiers with cross-entropy on batches that mix fully
/// observed and randomly masked instances, keeping the parameters with the
/// best validation AUC on masked validation sets.
pub fn pretrain(
    mut bundle: ModelBundle,
    dataset: &EncodedDataset,
    split: &FoldSplit,
    config: &PretrainConfig,
    seed: u64,
) -> Result<PretrainOutcome> {
    config.validate()?;
    if split.train_indices.is_empty() || split.val_indices.is_empty() {
        return Err(DadiError::InvalidArgument("pretraining needs train and validation rows".into()));
    }
    let env = AcquisitionEnv::new(dataset);
    let mut rng = seeded(seed, &[0x9E7]);
    let validation = validation_states(&env, &split.val_indices, config.validation_size, seed);
    let counts = dataset.group_counts(&split.train_indices);
    let gnl1_ok = counts.group0 > 0 && counts.group1 > 0;

    let mut optim = BundleOptimizers::new(config.adam());
    let mut curve = Vec::new();
    let first = score(&bundle, dataset, &validation, gnl1_ok.then_some(&counts), 0)?;
    curve.push(first);
    let mut best_label = (bundle.label_encoder.clone(), bundle.label_head.clone(), first.label_auc, 0);
    let mut best_adv = (
        bundle.adversary_encoder.clone(),
        bundle.adversary_head.clone(),
        first.adversary_auc,
        0,
    );

    let n_full = if config.half_full_half_missing {
        config.batch_size / 2
    } else {
        0
    };
    for it in 1..=config.iterations {
        let states: Vec<AcquisitionState> = (0..config.batch_size)
            .map(|k| {
                let i = split.train_indices[rng.random_range(0..split.train_indices.len())];
                if k < n_full {
                    env.full_state(i)
                } else {
                    random_mask(&env, i, &mut rng)
                }
            })
            .collect();
        let batch = SetBatch::from_states(&states);
        let y: Vec<u8> = states.iter().map(|s| dataset.labels[s.instance]).collect();
        let b: Vec<u8> = states.iter().map(|s| dataset.sensitive[s.instance]).collect();

        let g = bce_grads(&bundle.label_encoder, &bundle.label_head, &batch, &y);
        if !g.loss.is_finite() {
            return Err(DadiError::Divergence {
                what: "pretrain label",
                iteration: it,
            });
        }
        optim.label_encoder.step(&mut bundle.label_encoder, &g.encoder);
        optim.label_head.step(&mut bundle.label_head, &g.head);

        let g = bce_grads(&bundle.adversary_encoder, &bundle.adversary_head, &batch, &b);
        if !g.loss.is_finite() {
            return Err(DadiError::Divergence {
                what: "pretrain adversary",
                iteration: it,
            });
        }
        optim.adversary_encoder.step(&mut bundle.adversary_encoder, &g.encoder);
        optim.adversary_head.step(&mut bundle.adversary_head, &g.head);

        if it % config.validation_every == 0 || it == config.iterations {
            let p = score(&bundle, dataset, &validation, gnl1_ok.then_some(&counts), it)?;
            log::debug!(
                "pretrain {it}: label auc {:.4}, adversary auc {:.4}",
                p.label_auc,
                p.adversary_auc
            );
            if p.label_auc > best_label.2 {
                best_label = (bundle.label_encoder.clone(), bundle.label_head.clone(), p.label_auc, it);
            }
            if p.adversary_auc > best_adv.2 {
                best_adv = (
                    bundle.adversary_encoder.clone(),
                    bundle.adversary_head.clone(),
                    p.adversary_auc,
                    it,
                );
            }
            curve.push(p);
        }
    }

    let (label_encoder, label_head, best_label_auc, best_label_iteration) = best_label;
    let (adversary_encoder, adversary_head, best_adversary_auc, best_adversary_iteration) = best_adv;
    bundle.label_encoder = label_encoder;
    bundle.label_head = label_head;
    bundle.adversary_encoder = adversary_encoder;
    bundle.adversary_head = adversary_head;
    Ok(PretrainOutcome {
        bundle,
        curve,
        best_label_iteration,
        best_label_auc,
        best_adversary_iteration,
        best_adversary_auc,
    })
}

/// A fixed masked view of (at most `cap`) validation instances.
fn validation_states(
    env: &AcquisitionEnv<'_>,
    val: &[usize],
    cap: usize,
    seed: u64,
) -> Vec<AcquisitionState> {
    let mut rng = seeded(seed, &[0x7A1]);
    let mut chosen = val.to_vec();
    if chosen.len() > cap {
        chosen.shuffle(&mut rng);
        chosen.truncate(cap);
        chosen.sort_unstable();
    }
    chosen.into_iter().map(|i| random_mask(env, i, &mut rng)).collect()
}

fn score(
    bundle: &ModelBundle,
    dataset: &EncodedDataset,
    states: &[AcquisitionState],
    counts: Option<&crate::data::GroupCounts>,
    iteration: usize,
) -> Result<ValidationPoint> {
    let mut py = Vec::with_capacity(states.len());
    let mut pb = Vec::with_capacity(states.len());
    for chunk in states.chunks(512) {
        let batch = SetBatch::from_states(chunk);
        py.extend(bundle.label_probs(&batch));
        pb.extend(bundle.sensitive_probs(&batch));
    }
    let y: Vec<u8> = states.iter().map(|s| dataset.labels[s.instance]).collect();
    let b: Vec<u8> = states.iter().map(|s| dataset.sensitive[s.instance]).collect();
    let n = states.len() as f64;
    let mean = |f: &dyn Fn(usize) -> f64| (0..states.len()).map(f).sum::<f64>() / n;
    Ok(ValidationPoint {
        iteration,
        label_auc: auc(&py, &y)?,
        label_loss: mean(&|k| binary_cross_entropy(py[k], y[k])),
        adversary_auc: auc(&pb, &b)?,
        adversary_loss: mean(&|k| binary_cross_entropy(pb[k], b[k])),
        adversary_gnl1: counts.map(|c| mean(&|k| adversary_loss_gnl1(pb[k], b[k], c))),
    })
}

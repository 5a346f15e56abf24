use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DadiError, Result};
use crate::rng::derive_seed;

/// Fraction of the non-test instances held out for validation.
pub const VALIDATION_FRACTION: f64 = 0.2;

/// Train/validation/test indices of one cross-validation fold. Each set is
/// sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_id: usize,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Disjoint K-fold test sets over a seeded shuffle; the remainder of each fold
/// is split again 80/20 into train and validation.
pub fn make_folds(n_instances: usize, n_folds: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if n_folds < 2 {
        return Err(DadiError::InvalidArgument(format!(
            "n_folds must be at least 2, got {n_folds}"
        )));
    }
    if n_instances < n_folds {
        return Err(DadiError::InvalidArgument(format!(
            "{n_instances} instances cannot fill {n_folds} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n_instances).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xF01D])));

    let base = n_instances / n_folds;
    let extra = n_instances % n_folds;
    let mut bounds = Vec::with_capacity(n_folds + 1);
    bounds.push(0);
    for k in 0..n_folds {
        bounds.push(bounds[k] + base + usize::from(k < extra));
    }

    let mut folds = Vec::with_capacity(n_folds);
    for k in 0..n_folds {
        let mut test: Vec<usize> = order[bounds[k]..bounds[k + 1]].to_vec();
        let mut rest: Vec<usize> = order[..bounds[k]]
            .iter()
            .chain(&order[bounds[k + 1]..])
            .copied()
            .collect();
        rest.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xF01D, k as u64 + 1])));
        let n_val = (rest.len() as f64 * VALIDATION_FRACTION).round() as usize;
        let mut val = rest[..n_val].to_vec();
        let mut train = rest[n_val..].to_vec();
        test.sort_unstable();
        val.sort_unstable();
        train.sort_unstable();
        folds.push(FoldSplit {
            fold_id: k,
            train_indices: train,
            val_indices: val,
            test_indices: test,
        });
    }
    Ok(folds)
}

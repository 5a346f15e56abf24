use crate::error::{DadiError, Result};

/// Area under the ROC curve via average ranks; tied scores count one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(DadiError::InvalidArgument(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(DadiError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; the tie block i..=j shares their average
        let avg = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_block = order[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        pos_rank_sum += avg * pos_in_block as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// `|P(y_hat = 1 | b = 0) - P(y_hat = 1 | b = 1)|`.
pub fn demographic_disparity(y_hat: &[u8], b: &[u8]) -> Result<f64> {
    if y_hat.len() != b.len() {
        return Err(DadiError::InvalidArgument(format!(
            "{} predictions for {} group bits",
            y_hat.len(),
            b.len()
        )));
    }
    let mut pos = [0usize; 2];
    let mut cnt = [0usize; 2];
    for (&y, &g) in y_hat.iter().zip(b) {
        let g = usize::from(g != 0);
        cnt[g] += 1;
        pos[g] += usize::from(y != 0);
    }
    for g in 0..2 {
        if cnt[g] == 0 {
            return Err(DadiError::EmptyGroup(g as u8));
        }
    }
    let rate = |g: usize| pos[g] as f64 / cnt[g] as f64;
    Ok((rate(0) - rate(1)).abs())
}

/// Linear-interpolation quantile of sorted data: position `q * (n - 1)`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

pub fn quartiles(values: &[f64]) -> Quartiles {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Quartiles {
        q1: quantile_sorted(&v, 0.25),
        median: quantile_sorted(&v, 0.5),
        q3: quantile_sorted(&v, 0.75),
    }
}

/// Points `(auc, disparity)` not dominated by any other (higher-or-equal AUC
/// and lower-or-equal disparity, one strictly). Duplicates collapse to one;
/// output is sorted by disparity, then AUC.
pub fn pareto_front(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.1.total_cmp(&b.1).then(b.0.total_cmp(&a.0)));
    pts.dedup();
    let mut front: Vec<(f64, f64)> = Vec::new();
    let mut best_auc = f64::NEG_INFINITY;
    // Sweep by increasing disparity; within equal disparity the highest AUC
    // comes first, so the rest of that block is dominated.
    for (k, &(a, d)) in pts.iter().enumerate() {
        let first_of_block = k == 0 || pts[k - 1].1 != d;
        if first_of_block && a > best_auc {
            front.push((a, d));
        }
        if a > best_auc {
            best_auc = a;
        }
    }
    front
}

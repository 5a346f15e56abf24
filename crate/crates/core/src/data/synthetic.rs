//! Synthetic data with a known fairness/accuracy conflict.
//!
//! Columns, each its own action group, in this order:
//!
//! * `leak`: exactly the sensitive bit `b`.
//! * `signal`: standard normal `s`, independent of `b`.
//! * `noise_k`: independent standard normals.
//!
//! The label is `y = 1[w_b * s + sqrt(1 - w_b^2) * e > c]` with `e ~ N(0, 1)`.
//! The latent score is standard normal in both groups, so `P(y = 1 | b)` is the
//! same for both. Group 1 follows the signal almost deterministically, group 0
//! much more loosely, so a classifier that also sees `leak` is more accurate but
//! thresholds the two groups differently (nonzero demographic disparity). A
//! classifier without `leak` applies one threshold on `s` to everyone and has
//! zero disparity in expectation.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::encode::{ActionGroup, EncodedDataset};
use crate::error::{DadiError, Result};
use crate::rng::seeded;

pub const LEAK_GROUP: usize = 0;
pub const SIGNAL_GROUP: usize = 1;

const P_GROUP1: f64 = 0.5;
const THRESHOLD: f64 = 0.6;
const W_GROUP1: f64 = 0.999;
const W_GROUP0_AT_FULL_LEAK: f64 = 0.45;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticParams {
    pub n: usize,
    pub d_noise: usize,
    /// In `[0, 1]`: how much group membership changes the label mechanism.
    /// At 0 both groups share `w = 0.999` and the leak is useless to the
    /// classifier.
    pub leak_strength: f64,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            n: 5_000,
            d_noise: 8,
            leak_strength: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticParams {
    pub fn validate(&self) -> Result<()> {
        if self.n < 100 {
            return Err(DadiError::InvalidArgument(format!(
                "synthetic n must be at least 100, got {}",
                self.n
            )));
        }
        if !(0.0..=1.0).contains(&self.leak_strength) {
            return Err(DadiError::InvalidArgument(format!(
                "leak_strength must lie in [0, 1], got {}",
                self.leak_strength
            )));
        }
        Ok(())
    }
}

pub fn make_synthetic(params: &SyntheticParams) -> Result<EncodedDataset> {
    params.validate()?;
    let mut rng = seeded(params.seed, &[0x5EED]);
    let d = 2 + params.d_noise;
    let w0 = W_GROUP1 - params.leak_strength * (W_GROUP1 - W_GROUP0_AT_FULL_LEAK);
    let mut features = Array2::<f64>::zeros((params.n, d));
    let mut labels = Vec::with_capacity(params.n);
    let mut sensitive = Vec::with_capacity(params.n);
    for i in 0..params.n {
        let b = u8::from(rng.random::<f64>() < P_GROUP1);
        let s: f64 = rng.sample(StandardNormal);
        let e: f64 = rng.sample(StandardNormal);
        let w = if b == 1 { W_GROUP1 } else { w0 };
        let latent = w * s + (1.0 - w * w).sqrt() * e;
        features[[i, 0]] = f64::from(b);
        features[[i, 1]] = s;
        for k in 0..params.d_noise {
            features[[i, 2 + k]] = rng.sample(StandardNormal);
        }
        labels.push(u8::from(latent > THRESHOLD));
        sensitive.push(b);
    }
    let mut names = vec!["leak".to_string(), "signal".to_string()];
    names.extend((0..params.d_noise).map(|k| format!("noise_{k}")));
    let groups = names
        .iter()
        .enumerate()
        .map(|(j, name)| ActionGroup {
            group_id: j,
            feature_indices: vec![j],
            source_column: name.clone(),
        })
        .collect();
    let ds = EncodedDataset {
        features,
        labels,
        sensitive,
        groups,
        feature_names: names,
        standardization: Vec::new(),
    };
    ds.validate()?;
    Ok(ds)
}

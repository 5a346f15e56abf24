//! Pretraining on randomly masked sets, then joint n-step double Q-learning.

mod joint;
mod pretrain;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{AcquisitionEnv, AcquisitionState, Action};
use crate::error::{DadiError, Result};
use crate::nn::AdamConfig;

pub use joint::{
    collect_experience, joint_train, q_targets, Agent, JointObserver, JointOutcome, JointValidation, LogRow,
    QEstimator, QTarget, TrainLogWriter, LOG_HEADER,
};
pub use pretrain::{pretrain, PretrainOutcome, ValidationPoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    /// Half of every batch fully observed, half randomly masked; otherwise
    /// the whole batch is masked.
    pub half_full_half_missing: bool,
    pub validation_every: usize,
    /// Cap on validation instances scored per sweep.
    pub validation_size: usize,
    pub learning_rate: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            iterations: 10_000,
            batch_size: 64,
            half_full_half_missing: true,
            validation_every: 250,
            validation_size: 2_000,
            learning_rate: 1e-3,
        }
    }
}

impl PretrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DadiError::InvalidArgument(format!("pretrain: {m}")));
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.validation_every == 0 || self.validation_size == 0 {
            return bad("validation_every and validation_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JointConfig {
    pub iterations: usize,
    pub n_step: usize,
    pub n_agents: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_anneal_iters: usize,
    pub target_sync_every: usize,
    /// Most recent records kept for classifier and adversary updates.
    pub buffer_capacity: usize,
    pub classifier_batch: usize,
    pub checkpoint_every: usize,
    pub validation_every: usize,
    pub validation_size: usize,
    pub learning_rate: f64,
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            iterations: 10_000,
            n_step: 4,
            n_agents: 64,
            epsilon_start: 1.0,
            epsilon_end: 0.1,
            epsilon_anneal_iters: 5_000,
            target_sync_every: 100,
            buffer_capacity: 10_000,
            classifier_batch: 64,
            checkpoint_every: 1_000,
            validation_every: 500,
            validation_size: 500,
            learning_rate: 1e-3,
        }
    }
}

impl JointConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DadiError::InvalidArgument(format!("joint: {m}")));
        for (name, v) in [
            ("n_step", self.n_step),
            ("n_agents", self.n_agents),
            ("target_sync_every", self.target_sync_every),
            ("buffer_capacity", self.buffer_capacity),
            ("classifier_batch", self.classifier_batch),
            ("checkpoint_every", self.checkpoint_every),
            ("validation_every", self.validation_every),
            ("validation_size", self.validation_size),
        ] {
            if v == 0 {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("epsilon values must lie in [0, 1]");
        }
        if self.epsilon_end > self.epsilon_start {
            return bad("epsilon_end must not exceed epsilon_start");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}

/// Linear decay from `epsilon_start` to `epsilon_end` over the first
/// `epsilon_anneal_iters` iterations, constant afterwards.
pub fn epsilon_at(iteration: usize, config: &JointConfig) -> f64 {
    let (start, end) = (config.epsilon_start, config.epsilon_end);
    if iteration >= config.epsilon_anneal_iters {
        return end;
    }
    let frac = iteration as f64 / config.epsilon_anneal_iters as f64;
    start + (end - start) * frac
}

/// Q-values with acquired groups replaced by negative infinity; STOP is
/// never masked.
pub fn mask_q(q: &[f64], state: &AcquisitionState) -> Vec<f64> {
    q.iter()
        .enumerate()
        .map(|(a, &v)| if state.is_acquired(a) { f64::NEG_INFINITY } else { v })
        .collect()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn greedy_action(q: &[f64], state: &AcquisitionState) -> Action {
    Action::from_index(argmax(&mask_q(q, state)), state.n_groups())
}

/// With probability `epsilon` a uniformly random legal action, otherwise the
/// greedy one.
pub fn epsilon_greedy<R: Rng + ?Sized>(q: &[f64], state: &AcquisitionState, epsilon: f64, rng: &mut R) -> Action {
    if rng.random::<f64>() < epsilon {
        let legal = crate::env::legal_actions(state);
        legal[rng.random_range(0..legal.len())]
    } else {
        greedy_action(q, state)
    }
}

/// Keeps each action group independently with probability `1 - p`.
pub fn mask_with_probability<R: Rng + ?Sized>(
    env: &AcquisitionEnv<'_>,
    instance: usize,
    p: f64,
    rng: &mut R,
) -> AcquisitionState {
    let kept: Vec<usize> = (0..env.n_groups()).filter(|_| rng.random::<f64>() >= p).collect();
    env.state_with(instance, &kept).expect("distinct in-range groups")
}

/// Draws `p ~ U(0, 1)` once, then drops each group with probability `p`.
pub fn random_mask<R: Rng + ?Sized>(env: &AcquisitionEnv<'_>, instance: usize, rng: &mut R) -> AcquisitionState {
    let p = rng.random::<f64>();
    mask_with_probability(env, instance, p, rng)
}

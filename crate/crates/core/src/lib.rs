//! Fairness-aware dynamic feature acquisition.
//!
//! A reinforcement-learning agent chooses, per instance, which groups of
//! features to observe before a classifier predicts the label. Its reward
//! trades label accuracy against how well an adversary can recover a
//! sensitive attribute from the same observed set.

pub mod data;
pub mod encoder;
pub mod env;
pub mod error;
pub mod eval;
pub mod fsutil;
pub mod networks;
pub mod nn;
pub mod rng;
pub mod runner;
pub mod trainer;

pub use error::{DadiError, Result};

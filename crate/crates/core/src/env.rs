//! Per-instance acquisition MDP and the terminal reward.
//!
//! A state is the set of action groups acquired so far for one instance. Every
//! step either acquires one unacquired group or chooses STOP; STOP is always
//! legal and is the only way an episode ends. All reward is paid at the end:
//!
//! ```text
//! r(O_T) = -(1 - gamma) * L_C + gamma * L_A
//! ```
//!
//! where `L_C` is the label classifier's cross-entropy and `L_A` the
//! adversary's loss on the final set, either cross-entropy or the
//! group-normalized L1 loss `|P| / (2 |P_b|) * |p - b|`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{EncodedDataset, GroupCounts};
use crate::encoder::{FeatureToken, SetBatch};
use crate::error::{DadiError, Result};
use crate::networks::ModelBundle;

/// Lower/upper bound applied to probabilities before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Acquire(usize),
    Stop,
}

impl Action {
    /// Position in the Q-vector: group ids first, STOP last.
    pub fn index(self, n_groups: usize) -> usize {
        match self {
            Action::Acquire(g) => g,
            Action::Stop => n_groups,
        }
    }

    pub fn from_index(index: usize, n_groups: usize) -> Action {
        if index >= n_groups {
            Action::Stop
        } else {
            Action::Acquire(index)
        }
    }
}

/// Observed feature set of one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionState {
    pub instance: usize,
    /// Indexed by group id.
    pub acquired: Vec<bool>,
    /// Group ids in acquisition order.
    pub order: Vec<usize>,
    pub values: Vec<f64>,
    pub coords: Vec<usize>,
    /// Number of acquisitions so far.
    pub t: usize,
    pub stopped: bool,
}

impl AcquisitionState {
    pub fn empty(instance: usize, n_groups: usize) -> Self {
        AcquisitionState {
            instance,
            acquired: vec![false; n_groups],
            order: Vec::new(),
            values: Vec::new(),
            coords: Vec::new(),
            t: 0,
            stopped: false,
        }
    }

    pub fn n_groups(&self) -> usize {
        self.acquired.len()
    }

    pub fn is_acquired(&self, group: usize) -> bool {
        self.acquired.get(group).copied().unwrap_or(false)
    }

    pub fn tokens(&self) -> Vec<FeatureToken> {
        self.values
            .iter()
            .zip(&self.coords)
            .map(|(&value, &coordinate)| FeatureToken { value, coordinate })
            .collect()
    }

    fn add_group(&mut self, group: usize, dataset: &EncodedDataset) {
        self.acquired[group] = true;
        self.order.push(group);
        for &j in &dataset.group(group).feature_indices {
            self.values.push(dataset.features[[self.instance, j]]);
            self.coords.push(j);
        }
        self.t += 1;
    }
}

/// STOP plus every unacquired group, in index order.
pub fn legal_actions(state: &AcquisitionState) -> Vec<Action> {
    state
        .acquired
        .iter()
        .enumerate()
        .filter(|(_, &a)| !a)
        .map(|(g, _)| Action::Acquire(g))
        .chain(std::iter::once(Action::Stop))
        .collect()
}

/// Transition function over one dataset.
#[derive(Debug, Clone, Copy)]
pub struct AcquisitionEnv<'a> {
    pub dataset: &'a EncodedDataset,
}

impl<'a> AcquisitionEnv<'a> {
    pub fn new(dataset: &'a EncodedDataset) -> Self {
        AcquisitionEnv { dataset }
    }

    pub fn n_groups(&self) -> usize {
        self.dataset.n_groups()
    }

    pub fn reset(&self, instance: usize) -> AcquisitionState {
        AcquisitionState::empty(instance, self.n_groups())
    }

    /// State holding exactly `groups` (in that order), not stopped.
    pub fn state_with(&self, instance: usize, groups: &[usize]) -> Result<AcquisitionState> {
        let mut st = self.reset(instance);
        for &g in groups {
            if g >= self.n_groups() || st.acquired[g] {
                return Err(DadiError::IllegalAction {
                    action: g,
                    reason: "group out of range or repeated",
                });
            }
            st.add_group(g, self.dataset);
        }
        Ok(st)
    }

    pub fn full_state(&self, instance: usize) -> AcquisitionState {
        let all: Vec<usize> = (0..self.n_groups()).collect();
        self.state_with(instance, &all).expect("all groups are legal once")
    }

    /// Applies `action`; returns the successor and whether the episode ended.
    pub fn step(&self, state: &AcquisitionState, action: Action) -> Result<(AcquisitionState, bool)> {
        let n = self.n_groups();
        if state.stopped {
            return Err(DadiError::IllegalAction {
                action: action.index(n),
                reason: "episode already stopped",
            });
        }
        match action {
            Action::Stop => {
                let mut next = state.clone();
                next.stopped = true;
                Ok((next, true))
            }
            Action::Acquire(g) if g >= n => Err(DadiError::IllegalAction {
                action: g,
                reason: "no such group",
            }),
            Action::Acquire(g) if state.acquired[g] => Err(DadiError::IllegalAction {
                action: g,
                reason: "group already acquired",
            }),
            Action::Acquire(g) => {
                let mut next = state.clone();
                next.add_group(g, self.dataset);
                Ok((next, false))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdversaryLoss {
    Ce,
    Gnl1,
}

impl AdversaryLoss {
    pub fn as_str(self) -> &'static str {
        match self {
            AdversaryLoss::Ce => "ce",
            AdversaryLoss::Gnl1 => "gnl1",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ce" => Some(AdversaryLoss::Ce),
            "gnl1" | "gn-l1" | "gn_l1" => Some(AdversaryLoss::Gnl1),
            _ => None,
        }
    }
}

impl std::fmt::Display for AdversaryLoss {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub gamma: f64,
    pub adversary_loss: AdversaryLoss,
    /// Population sizes from the training split.
    pub counts: GroupCounts,
}

impl RewardConfig {
    pub fn new(gamma: f64, adversary_loss: AdversaryLoss, counts: GroupCounts) -> Result<Self> {
        let cfg = RewardConfig {
            gamma,
            adversary_loss,
            counts,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(DadiError::InvalidArgument(format!(
                "gamma must lie in [0, 1], got {}",
                self.gamma
            )));
        }
        if self.counts.group0 + self.counts.group1 != self.counts.total {
            return Err(DadiError::InvalidArgument(
                "group counts do not sum to the population size".into(),
            ));
        }
        if self.adversary_loss == AdversaryLoss::Gnl1 {
            for (b, c) in [(0u8, self.counts.group0), (1, self.counts.group1)] {
                if c == 0 {
                    return Err(DadiError::EmptyGroup(b));
                }
            }
        }
        Ok(())
    }
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Binary cross-entropy of probability `p` against a 0/1 target.
pub fn binary_cross_entropy(p: f64, target: u8) -> f64 {
    let p = clamp_prob(p);
    if target == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

pub fn adversary_loss_ce(prob_b: f64, b: u8) -> f64 {
    binary_cross_entropy(prob_b, b)
}

/// `|P| / (2 |P_b|) * |p - b|`; `counts` must have been validated.
pub fn adversary_loss_gnl1(prob_b: f64, b: u8, counts: &GroupCounts) -> f64 {
    let weight = counts.total as f64 / (2.0 * counts.of(b) as f64);
    weight * (prob_b - f64::from(b)).abs()
}

pub fn reward_from_losses(gamma: f64, label_loss: f64, adversary_loss: f64) -> f64 {
    -(1.0 - gamma) * label_loss + gamma * adversary_loss
}

/// Reward from already-computed probabilities of the two classifiers.
pub fn reward_from_probs(prob_y: f64, y: u8, prob_b: f64, b: u8, config: &RewardConfig) -> f64 {
    let lc = binary_cross_entropy(prob_y, y);
    let la = match config.adversary_loss {
        AdversaryLoss::Ce => adversary_loss_ce(prob_b, b),
        AdversaryLoss::Gnl1 => adversary_loss_gnl1(prob_b, b, &config.counts),
    };
    reward_from_losses(config.gamma, lc, la)
}

pub fn terminal_reward(
    state: &AcquisitionState,
    bundle: &ModelBundle,
    dataset: &EncodedDataset,
    config: &RewardConfig,
) -> Result<f64> {
    if !state.stopped {
        return Err(DadiError::NotTerminal);
    }
    Ok(terminal_rewards(&[state], bundle, dataset, config)[0])
}

/// Batched reward evaluation; states are assumed terminal.
pub(crate) fn terminal_rewards(
    states: &[&AcquisitionState],
    bundle: &ModelBundle,
    dataset: &EncodedDataset,
    config: &RewardConfig,
) -> Vec<f64> {
    if states.is_empty() {
        return Vec::new();
    }
    let batch = SetBatch::from_states(states.iter().copied());
    let py = bundle.label_probs(&batch);
    let pb = bundle.sensitive_probs(&batch);
    states
        .iter()
        .enumerate()
        .map(|(k, st)| {
            let i = st.instance;
            reward_from_probs(py[k], dataset.labels[i], pb[k], dataset.sensitive[i], config)
        })
        .collect()
}

/// An n-step fragment of one episode.
///
/// Holds consecutive `(state, action)` pairs. A terminal record ends with STOP
/// and carries the episode reward; a truncated one carries the state reached
/// after its last action for bootstrapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceRecord {
    pub pairs: Vec<(AcquisitionState, Action)>,
    pub terminal: bool,
    pub reward: Option<f64>,
    pub bootstrap: Option<AcquisitionState>,
}

impl ExperienceRecord {
    /// Checks the record invariants: nonempty, consecutive states differ by
    /// exactly the acquired group, reward present iff terminal, bootstrap
    /// present iff truncated.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DadiError::Format(format!("malformed experience record: {m}")));
        if self.pairs.is_empty() {
            return bad("no pairs");
        }
        if self.terminal != self.reward.is_some() || self.terminal == self.bootstrap.is_some() {
            return bad("reward/bootstrap inconsistent with terminal flag");
        }
        let mut next_states = self.pairs.iter().skip(1).map(|(s, _)| s).chain(self.bootstrap.iter());
        for (k, (s, a)) in self.pairs.iter().enumerate() {
            match a {
                Action::Stop => {
                    if !(self.terminal && k + 1 == self.pairs.len()) {
                        return bad("STOP not at the end of a terminal record");
                    }
                }
                Action::Acquire(g) => {
                    let Some(n) = next_states.next() else {
                        return bad("missing successor");
                    };
                    if s.is_acquired(*g) || n.order.len() != s.order.len() + 1 || n.order.last() != Some(g)
                        || n.order[..s.order.len()] != s.order[..]
                    {
                        return bad("successor does not add exactly the chosen group");
                    }
                }
            }
        }
        Ok(())
    }
}

/// Writes records as JSON Lines, one record per line.
pub fn write_episode_log<W: Write>(mut out: W, records: &[ExperienceRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| DadiError::io("<episode log>", e))?;
    }
    Ok(())
}

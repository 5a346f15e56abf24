use std::collections::VecDeque;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{EncodedDataset, FoldSplit};
use crate::encoder::SetBatch;
use crate::env::{terminal_rewards, AcquisitionEnv, AcquisitionState, Action, ExperienceRecord, RewardConfig};
use crate::error::{DadiError, Result};
use crate::eval::evaluate_policy;
use crate::networks::{bce_grads, td_grads, BundleOptimizers, ModelBundle};
use crate::rng::seeded;
use crate::trainer::{argmax, epsilon_at, epsilon_greedy, mask_q, JointConfig};

pub const LOG_HEADER: &str = "iteration,td_loss,clf_loss,adv_loss,epsilon,mean_episode_length";

/// One line of the training log. `mean_episode_length` counts actions,
/// STOP included, over episodes that ended in that iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub td_loss: f64,
    pub clf_loss: f64,
    pub adv_loss: f64,
    pub epsilon: f64,
    pub mean_episode_length: Option<f64>,
}

/// Greedy-policy scores on validation instances, logged for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointValidation {
    pub iteration: usize,
    pub auc: f64,
    pub disparity: f64,
    pub mean_features: f64,
}

#[derive(Debug, Clone)]
pub struct JointOutcome {
    pub bundle: ModelBundle,
    pub optimizers: BundleOptimizers,
    pub log: Vec<LogRow>,
    pub validation: Vec<JointValidation>,
}

/// Callbacks for artifacts produced while training. All default to no-ops.
pub trait JointObserver {
    fn on_log(&mut self, _row: &LogRow) -> Result<()> {
        Ok(())
    }

    fn on_checkpoint(&mut self, _iteration: usize, _bundle: &ModelBundle, _optim: &BundleOptimizers) -> Result<()> {
        Ok(())
    }

    /// Called with the offending parameters before a divergence error is returned.
    fn on_divergence(&mut self, _iteration: usize, _bundle: &ModelBundle, _optim: &BundleOptimizers) {}
}

impl JointObserver for () {}

/// Append-only CSV writer for [`LogRow`]s.
pub struct TrainLogWriter<W: Write> {
    out: W,
}

impl<W: Write> TrainLogWriter<W> {
    pub fn new(mut out: W) -> std::io::Result<Self> {
        writeln!(out, "{LOG_HEADER}")?;
        Ok(TrainLogWriter { out })
    }

    pub fn write(&mut self, r: &LogRow) -> std::io::Result<()> {
        let len = r.mean_episode_length.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            self.out,
            "{},{},{},{},{},{}",
            r.iteration, r.td_loss, r.clf_loss, r.adv_loss, r.epsilon, len
        )?;
        self.out.flush()
    }
}

/// Online and target Q-vectors for a batch of states.
pub trait QEstimator {
    fn q_online_target(&self, states: &[&AcquisitionState]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>);
}

impl QEstimator for ModelBundle {
    fn q_online_target(&self, states: &[&AcquisitionState]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        if states.is_empty() {
            return (Vec::new(), Vec::new());
        }
        let (online, target) = ModelBundle::q_online_target(self, &SetBatch::from_states(states.iter().copied()));
        let rows = |m: ndarray::Array2<f64>| m.outer_iter().map(|r| r.to_vec()).collect();
        (rows(online), rows(target))
    }
}

/// Regression target for pair `pair` of record `record`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QTarget {
    pub record: usize,
    pub pair: usize,
    pub value: f64,
}

/// Undiscounted n-step targets with zero intermediate reward: a terminal
/// record's pairs all regress to its reward; a truncated record's pairs
/// regress to `Q_target(s', argmax_a Q_online(s', a))` at its bootstrap state,
/// with acquired groups masked before the argmax.
pub fn q_targets<Q: QEstimator + ?Sized>(records: &[ExperienceRecord], estimator: &Q) -> Vec<QTarget> {
    let boot: Vec<(usize, &AcquisitionState)> = records
        .iter()
        .enumerate()
        .filter_map(|(k, r)| if r.terminal { None } else { r.bootstrap.as_ref().map(|s| (k, s)) })
        .collect();
    let states: Vec<&AcquisitionState> = boot.iter().map(|(_, s)| *s).collect();
    let (online, target) = estimator.q_online_target(&states);
    let mut value = vec![0.0; records.len()];
    for (j, (k, s)) in boot.iter().enumerate() {
        let a = argmax(&mask_q(&online[j], s));
        value[*k] = target[j][a];
    }
    let mut out = Vec::new();
    for (k, r) in records.iter().enumerate() {
        let v = if r.terminal {
            r.reward.expect("terminal record carries its reward")
        } else {
            value[k]
        };
        out.extend((0..r.pairs.len()).map(|pair| QTarget { record: k, pair, value: v }));
    }
    out
}

/// One of the parallel acting agents.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub state: Option<AcquisitionState>,
    pub episode_steps: usize,
}

impl Agent {
    pub fn idle() -> Self {
        Agent {
            state: None,
            episode_steps: 0,
        }
    }
}

/// Advances every agent by up to `n_step` epsilon-greedy steps and returns
/// one record per agent (cut at termination or after `n_step` steps) plus the
/// lengths of episodes that ended. Agents without a live episode first start
/// one on an instance drawn uniformly from `instances`. Terminal records come
/// back without a reward.
pub fn collect_experience<R: Rng + ?Sized>(
    bundle: &ModelBundle,
    env: &AcquisitionEnv<'_>,
    agents: &mut [Agent],
    instances: &[usize],
    epsilon: f64,
    n_step: usize,
    rng: &mut R,
) -> Result<(Vec<ExperienceRecord>, Vec<usize>)> {
    for a in agents.iter_mut() {
        if a.state.as_ref().is_none_or(|s| s.stopped) {
            let i = instances[rng.random_range(0..instances.len())];
            a.state = Some(env.reset(i));
            a.episode_steps = 0;
        }
    }
    let mut pairs: Vec<Vec<(AcquisitionState, Action)>> = vec![Vec::new(); agents.len()];
    let mut live: Vec<usize> = (0..agents.len()).collect();
    let mut finished = Vec::new();
    for _ in 0..n_step {
        if live.is_empty() {
            break;
        }
        let q = bundle.q_batch(&SetBatch::from_states(live.iter().map(|&k| agents[k].state.as_ref().unwrap())), false);
        let mut still = Vec::with_capacity(live.len());
        for (row, &k) in live.iter().enumerate() {
            let state = agents[k].state.take().unwrap();
            let action = epsilon_greedy(&q.row(row).to_vec(), &state, epsilon, rng);
            let (next, done) = env.step(&state, action)?;
            pairs[k].push((state, action));
            agents[k].episode_steps += 1;
            if done {
                finished.push(agents[k].episode_steps);
            } else {
                still.push(k);
            }
            agents[k].state = Some(next);
        }
        live = still;
    }
    let records = agents
        .iter()
        .zip(pairs)
        .filter(|(_, p)| !p.is_empty())
        .map(|(a, p)| {
            let st = a.state.as_ref().unwrap();
            ExperienceRecord {
                pairs: p,
                terminal: st.stopped,
                reward: None,
                bootstrap: (!st.stopped).then(|| st.clone()),
            }
        })
        .collect();
    Ok((records, finished))
}

/// State stored in the classifier buffer, rebuilt from the dataset on use.
#[derive(Debug, Clone)]
struct StateKey {
    instance: usize,
    order: Vec<usize>,
}

/// Joint phase: acting, TD update of the label encoder and policy head, then
/// cross-entropy updates of both classifiers on states sampled from recent
/// experience; the target policy is synced every `target_sync_every`
/// iterations. Returns the final iterate.
pub fn joint_train(
    mut bundle: ModelBundle,
    dataset: &EncodedDataset,
    split: &FoldSplit,
    config: &JointConfig,
    reward: &RewardConfig,
    seed: u64,
    observer: &mut dyn JointObserver,
) -> Result<JointOutcome> {
    config.validate()?;
    reward.validate()?;
    if split.train_indices.is_empty() {
        return Err(DadiError::InvalidArgument("joint training needs training rows".into()));
    }
    let env = AcquisitionEnv::new(dataset);
    let mut rng = seeded(seed, &[0x101]);
    let mut optim = BundleOptimizers::new(config.adam());
    let mut agents = vec![Agent::idle(); config.n_agents];
    let mut buffer: VecDeque<Vec<StateKey>> = VecDeque::with_capacity(config.buffer_capacity);
    let mut log = Vec::with_capacity(config.iterations);
    let mut validation = Vec::new();
    let val: Vec<usize> = split.val_indices.iter().copied().take(config.validation_size).collect();

    for it in 0..config.iterations {
        let epsilon = epsilon_at(it, config);
        let (mut records, finished) = collect_experience(
            &bundle,
            &env,
            &mut agents,
            &split.train_indices,
            epsilon,
            config.n_step,
            &mut rng,
        )?;

        let terminal: Vec<usize> = (0..records.len()).filter(|&k| records[k].terminal).collect();
        let finals: Vec<&AcquisitionState> = terminal.iter().map(|&k| &records[k].pairs.last().unwrap().0).collect();
        let rewards = terminal_rewards(&finals, &bundle, dataset, reward);
        for (&k, r) in terminal.iter().zip(rewards) {
            records[k].reward = Some(r);
        }

        let targets = q_targets(&records, &bundle);
        let td_states: Vec<&AcquisitionState> = targets.iter().map(|t| &records[t.record].pairs[t.pair].0).collect();
        let actions: Vec<usize> = targets
            .iter()
            .map(|t| records[t.record].pairs[t.pair].1.index(dataset.n_groups()))
            .collect();
        let values: Vec<f64> = targets.iter().map(|t| t.value).collect();
        let g = td_grads(
            &bundle.label_encoder,
            &bundle.policy_head,
            &SetBatch::from_states(td_states),
            &actions,
            &values,
        );
        let td_loss = g.loss;
        if !td_loss.is_finite() {
            observer.on_divergence(it, &bundle, &optim);
            return Err(DadiError::Divergence { what: "td", iteration: it });
        }
        optim.label_encoder.step(&mut bundle.label_encoder, &g.encoder);
        optim.policy_head.step(&mut bundle.policy_head, &g.head);

        for r in &records {
            if buffer.len() == config.buffer_capacity {
                buffer.pop_front();
            }
            buffer.push_back(
                r.pairs
                    .iter()
                    .map(|(s, _)| StateKey {
                        instance: s.instance,
                        order: s.order.clone(),
                    })
                    .collect(),
            );
        }
        let sampled: Vec<AcquisitionState> = (0..config.classifier_batch)
            .map(|_| {
                let rec = &buffer[rng.random_range(0..buffer.len())];
                let key = &rec[rng.random_range(0..rec.len())];
                env.state_with(key.instance, &key.order)
            })
            .collect::<Result<_>>()?;
        let batch = SetBatch::from_states(&sampled);
        let y: Vec<u8> = sampled.iter().map(|s| dataset.labels[s.instance]).collect();
        let b: Vec<u8> = sampled.iter().map(|s| dataset.sensitive[s.instance]).collect();

        let g = bce_grads(&bundle.label_encoder, &bundle.label_head, &batch, &y);
        let clf_loss = g.loss;
        if !clf_loss.is_finite() {
            observer.on_divergence(it, &bundle, &optim);
            return Err(DadiError::Divergence {
                what: "classifier",
                iteration: it,
            });
        }
        optim.label_encoder.step(&mut bundle.label_encoder, &g.encoder);
        optim.label_head.step(&mut bundle.label_head, &g.head);

        let g = bce_grads(&bundle.adversary_encoder, &bundle.adversary_head, &batch, &b);
        let adv_loss = g.loss;
        if !adv_loss.is_finite() {
            observer.on_divergence(it, &bundle, &optim);
            return Err(DadiError::Divergence {
                what: "adversary",
                iteration: it,
            });
        }
        optim.adversary_encoder.step(&mut bundle.adversary_encoder, &g.encoder);
        optim.adversary_head.step(&mut bundle.adversary_head, &g.head);

        if it > 0 && it % config.target_sync_every == 0 {
            bundle.sync_target();
        }

        let row = LogRow {
            iteration: it,
            td_loss,
            clf_loss,
            adv_loss,
            epsilon,
            mean_episode_length: (!finished.is_empty())
                .then(|| finished.iter().sum::<usize>() as f64 / finished.len() as f64),
        };
        observer.on_log(&row)?;
        log.push(row);

        let done = it + 1;
        if done % config.checkpoint_every == 0 {
            observer.on_checkpoint(done, &bundle, &optim)?;
        }
        if done % config.validation_every == 0 && !val.is_empty() {
            let run = evaluate_policy(&bundle, dataset, &val)?;
            let v = JointValidation {
                iteration: done,
                auc: run.auc().unwrap_or(f64::NAN),
                disparity: run.disparity().unwrap_or(f64::NAN),
                mean_features: run.mean_features(),
            };
            log::info!(
                "joint {done}: val auc {:.4}, disparity {:.4}, features {:.2}",
                v.auc,
                v.disparity,
                v.mean_features
            );
            validation.push(v);
        }
    }
    Ok(JointOutcome {
        bundle,
        optimizers: optim,
        log,
        validation,
    })
}

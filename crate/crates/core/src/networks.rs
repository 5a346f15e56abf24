//! The two encoders, three heads and target policy, with loss gradients and
//! JSON checkpoints.
//!
//! Label side: `f_theta` feeds both the label head `g_psi` and the policy head
//! `pi_phi`. Adversary side: `f_chi` feeds `g_omega` and shares nothing with
//! the label side.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::encoder::{SetBatch, SetEncoder, MEMORY_WIDTH, PROCESSING_STEPS};
use crate::env::AcquisitionState;
use crate::error::{DadiError, Result};
use crate::fsutil::write_atomic;
use crate::nn::params::{export_tensors, import_tensors, zeros_like};
use crate::nn::{Adam, AdamConfig, Mlp, TensorMap};
use crate::rng::seeded;

pub const HEAD_HIDDEN: usize = 64;
pub const CHECKPOINT_FORMAT: &str = "dadi-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

const NET_NAMES: [&str; 6] = [
    "label_encoder",
    "label_head",
    "policy_head",
    "adversary_encoder",
    "adversary_head",
    "target_policy",
];

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy computed from a logit.
pub fn bce_with_logit(z: f64, target: u8) -> f64 {
    z.max(0.0) - z * f64::from(target) + (-z.abs()).exp().ln_1p()
}

fn head(out: usize, rng: &mut impl rand::Rng) -> Mlp {
    Mlp::new(&[MEMORY_WIDTH, HEAD_HIDDEN, HEAD_HIDDEN, out], rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub label_encoder: SetEncoder,
    pub label_head: Mlp,
    pub policy_head: Mlp,
    pub adversary_encoder: SetEncoder,
    pub adversary_head: Mlp,
    pub target_policy: Mlp,
}

impl ModelBundle {
    /// Freshly initialized networks; the target policy starts as a copy.
    pub fn new(n_coords: usize, n_groups: usize, seed: u64) -> Self {
        let label_encoder = SetEncoder::new(n_coords, &mut seeded(seed, &[1]));
        let label_head = head(1, &mut seeded(seed, &[2]));
        let policy_head = head(n_groups + 1, &mut seeded(seed, &[3]));
        let adversary_encoder = SetEncoder::new(n_coords, &mut seeded(seed, &[4]));
        let adversary_head = head(1, &mut seeded(seed, &[5]));
        ModelBundle {
            target_policy: policy_head.clone(),
            label_encoder,
            label_head,
            policy_head,
            adversary_encoder,
            adversary_head,
        }
    }

    pub fn n_coords(&self) -> usize {
        self.label_encoder.n_coords()
    }

    pub fn n_groups(&self) -> usize {
        self.policy_head.out_dim() - 1
    }

    pub fn label_probs(&self, batch: &SetBatch) -> Vec<f64> {
        let z = self.label_head.forward(&self.label_encoder.forward(batch));
        z.column(0).iter().map(|&v| sigmoid(v)).collect()
    }

    pub fn sensitive_probs(&self, batch: &SetBatch) -> Vec<f64> {
        let z = self.adversary_head.forward(&self.adversary_encoder.forward(batch));
        z.column(0).iter().map(|&v| sigmoid(v)).collect()
    }

    /// Q-values, one row per set.
    pub fn q_batch(&self, batch: &SetBatch, use_target: bool) -> Array2<f64> {
        let emb = self.label_encoder.forward(batch);
        if use_target {
            self.target_policy.forward(&emb)
        } else {
            self.policy_head.forward(&emb)
        }
    }

    /// Online and target Q-values sharing one encoder pass.
    pub fn q_online_target(&self, batch: &SetBatch) -> (Array2<f64>, Array2<f64>) {
        let emb = self.label_encoder.forward(batch);
        (self.policy_head.forward(&emb), self.target_policy.forward(&emb))
    }

    pub fn predict_label(&self, state: &AcquisitionState) -> f64 {
        self.label_probs(&SetBatch::from_states([state]))[0]
    }

    pub fn predict_sensitive(&self, state: &AcquisitionState) -> f64 {
        self.sensitive_probs(&SetBatch::from_states([state]))[0]
    }

    pub fn q_values(&self, state: &AcquisitionState, use_target: bool) -> Vec<f64> {
        self.q_batch(&SetBatch::from_states([state]), use_target).row(0).to_vec()
    }

    pub fn sync_target(&mut self) {
        self.target_policy.clone_from(&self.policy_head);
    }

    pub fn tensors(&self) -> TensorMap {
        let mut map = TensorMap::new();
        export_tensors(&self.label_encoder, NET_NAMES[0], &mut map);
        export_tensors(&self.label_head, NET_NAMES[1], &mut map);
        export_tensors(&self.policy_head, NET_NAMES[2], &mut map);
        export_tensors(&self.adversary_encoder, NET_NAMES[3], &mut map);
        export_tensors(&self.adversary_head, NET_NAMES[4], &mut map);
        export_tensors(&self.target_policy, NET_NAMES[5], &mut map);
        map
    }

    fn load_tensors(&mut self, map: &TensorMap) -> Result<()> {
        import_tensors(&mut self.label_encoder, NET_NAMES[0], map)?;
        import_tensors(&mut self.label_head, NET_NAMES[1], map)?;
        import_tensors(&mut self.policy_head, NET_NAMES[2], map)?;
        import_tensors(&mut self.adversary_encoder, NET_NAMES[3], map)?;
        import_tensors(&mut self.adversary_head, NET_NAMES[4], map)?;
        import_tensors(&mut self.target_policy, NET_NAMES[5], map)
    }

    pub fn checkpoint(&self, optim: Option<&BundleOptimizers>, meta: BTreeMap<String, serde_json::Value>) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            format_version: CHECKPOINT_VERSION,
            n_coords: self.n_coords(),
            n_groups: self.n_groups(),
            processing_steps: self.label_encoder.processing_steps,
            meta,
            tensors: self.tensors(),
            optimizer: optim.map(|o| o.export(self)),
        }
    }

    /// Rebuilds a bundle (and optimizer state, when stored) from a checkpoint.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(ModelBundle, Option<BundleOptimizers>)> {
        ck.check_header()?;
        let mut bundle = ModelBundle::new(ck.n_coords, ck.n_groups, 0);
        bundle.load_tensors(&ck.tensors)?;
        let optim = match &ck.optimizer {
            None => None,
            Some(state) => Some(BundleOptimizers::import(&bundle, state)?),
        };
        Ok((bundle, optim))
    }
}

/// Separate Adam state per trainable network.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleOptimizers {
    pub label_encoder: Adam,
    pub label_head: Adam,
    pub policy_head: Adam,
    pub adversary_encoder: Adam,
    pub adversary_head: Adam,
}

impl BundleOptimizers {
    pub fn new(config: AdamConfig) -> Self {
        BundleOptimizers {
            label_encoder: Adam::new(config),
            label_head: Adam::new(config),
            policy_head: Adam::new(config),
            adversary_encoder: Adam::new(config),
            adversary_head: Adam::new(config),
        }
    }

    fn export(&self, bundle: &ModelBundle) -> OptimizerState {
        let mut moments = TensorMap::new();
        self.label_encoder.export(&bundle.label_encoder, NET_NAMES[0], &mut moments);
        self.label_head.export(&bundle.label_head, NET_NAMES[1], &mut moments);
        self.policy_head.export(&bundle.policy_head, NET_NAMES[2], &mut moments);
        self.adversary_encoder.export(&bundle.adversary_encoder, NET_NAMES[3], &mut moments);
        self.adversary_head.export(&bundle.adversary_head, NET_NAMES[4], &mut moments);
        OptimizerState {
            config: self.label_encoder.config,
            moments,
        }
    }

    fn import(bundle: &ModelBundle, state: &OptimizerState) -> Result<Self> {
        let mut o = BundleOptimizers::new(state.config);
        o.label_encoder.import(&bundle.label_encoder, NET_NAMES[0], &state.moments)?;
        o.label_head.import(&bundle.label_head, NET_NAMES[1], &state.moments)?;
        o.policy_head.import(&bundle.policy_head, NET_NAMES[2], &state.moments)?;
        o.adversary_encoder.import(&bundle.adversary_encoder, NET_NAMES[3], &state.moments)?;
        o.adversary_head.import(&bundle.adversary_head, NET_NAMES[4], &state.moments)?;
        Ok(o)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub moments: TensorMap,
}

/// Serialized bundle.
///
/// ```text
/// {
///   "format": "dadi-checkpoint", "format_version": 1,
///   "n_coords": d, "n_groups": g, "processing_steps": 5,
///   "meta": {...},
///   "tensors": {"label_encoder.read_in.w": {"shape": [64, 1 + d], "data": [...]}, ...},
///   "optimizer": null | {"config": {...}, "moments": {"label_head.m.layers.0.w": ..., ...}}
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub format_version: u32,
    pub n_coords: usize,
    pub n_groups: usize,
    pub processing_steps: usize,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
    pub tensors: TensorMap,
    #[serde(default)]
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    fn check_header(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(DadiError::Format(format!("not a checkpoint: format {:?}", self.format)));
        }
        if self.format_version != CHECKPOINT_VERSION {
            return Err(DadiError::Format(format!(
                "unsupported checkpoint version {}",
                self.format_version
            )));
        }
        if self.processing_steps != PROCESSING_STEPS {
            return Err(DadiError::Format(format!(
                "unsupported processing_steps {}",
                self.processing_steps
            )));
        }
        if self.n_coords == 0 || self.n_groups == 0 || self.n_groups > self.n_coords || self.n_coords > 1 << 20 {
            return Err(DadiError::Format("implausible network dimensions".into()));
        }
        Ok(())
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_slice(bytes)?;
        ck.check_header()?;
        Ok(ck)
    }

    pub fn to_vec(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_vec()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| DadiError::io(path, e))?;
        Self::from_slice(&bytes)
    }
}

/// Gradients of one encoder plus one head.
#[derive(Debug, Clone)]
pub struct EncoderHeadGrads {
    pub loss: f64,
    pub encoder: SetEncoder,
    pub head: Mlp,
}

/// Mean binary cross-entropy of `sigmoid(head(encoder(batch)))` against
/// `targets`, with gradients.
pub fn bce_grads(encoder: &SetEncoder, head: &Mlp, batch: &SetBatch, targets: &[u8]) -> EncoderHeadGrads {
    let n = batch.n_sets();
    assert_eq!(n, targets.len(), "one target per set");
    let (emb, enc_cache) = encoder.forward_cached(batch);
    let (z, head_cache) = head.forward_cached(emb);
    let mut loss = 0.0;
    let mut dz = Array2::zeros((n, 1));
    for k in 0..n {
        let zk = z[[k, 0]];
        loss += bce_with_logit(zk, targets[k]);
        dz[[k, 0]] = (sigmoid(zk) - f64::from(targets[k])) / n as f64;
    }
    finish(encoder, head, enc_cache, head_cache, dz, loss / n as f64)
}

/// Mean squared TD error `(Q(s, a) - R)^2` of the online policy, with
/// gradients for the label encoder and policy head.
pub fn td_grads(
    encoder: &SetEncoder,
    policy: &Mlp,
    batch: &SetBatch,
    actions: &[usize],
    targets: &[f64],
) -> EncoderHeadGrads {
    let n = batch.n_sets();
    assert!(actions.len() == n && targets.len() == n, "one action and target per set");
    let (emb, enc_cache) = encoder.forward_cached(batch);
    let (q, head_cache) = policy.forward_cached(emb);
    let mut loss = 0.0;
    let mut dq = Array2::zeros(q.raw_dim());
    for k in 0..n {
        let err = q[[k, actions[k]]] - targets[k];
        loss += err * err;
        dq[[k, actions[k]]] = 2.0 * err / n as f64;
    }
    finish(encoder, policy, enc_cache, head_cache, dq, loss / n as f64)
}

fn finish(
    encoder: &SetEncoder,
    head: &Mlp,
    enc_cache: crate::encoder::EncoderCache,
    head_cache: crate::nn::MlpCache,
    d_out: Array2<f64>,
    loss: f64,
) -> EncoderHeadGrads {
    let mut g_head = zeros_like(head);
    let d_emb = head.backward(&head_cache, d_out, &mut g_head);
    let mut g_enc = zeros_like(encoder);
    encoder.backward(&enc_cache, &d_emb, &mut g_enc);
    EncoderHeadGrads {
        loss,
        encoder: g_enc,
        head: g_head,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::{flatten, nudge, param_count};
    use crate::nn::Parameters;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn state(values: &[f64], coords: &[usize]) -> AcquisitionState {
        let mut s = AcquisitionState::empty(0, 6);
        s.values = values.to_vec();
        s.coords = coords.to_vec();
        s
    }

    fn batch(rng: &mut ChaCha8Rng, n_sets: usize, d: usize) -> SetBatch {
        let mut b = SetBatch::new();
        for _ in 0..n_sets {
            let mut coords: Vec<usize> = (0..d).collect();
            rand::seq::SliceRandom::shuffle(coords.as_mut_slice(), rng);
            coords.truncate(3);
            b.push_set(coords.into_iter().map(|c| (rng.random_range(-1.5..1.5), c)));
        }
        b
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn classifier_outputs_are_probabilities() {
        let b = ModelBundle::new(6, 3, 11);
        for s in [state(&[], &[]), state(&[40.0, -40.0], &[0, 5])] {
            let p = b.predict_label(&s);
            assert!(p > 0.0 && p < 1.0);
            let p = b.predict_sensitive(&s);
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn predictions_are_permutation_invariant() {
        let b = ModelBundle::new(6, 3, 5);
        let s1 = state(&[0.3, -1.2, 2.0], &[1, 4, 2]);
        let s2 = state(&[2.0, 0.3, -1.2], &[2, 1, 4]);
        assert!((b.predict_label(&s1) - b.predict_label(&s2)).abs() < 1e-5);
        assert!((b.predict_sensitive(&s1) - b.predict_sensitive(&s2)).abs() < 1e-5);
        let (q1, q2) = (b.q_values(&s1, false), b.q_values(&s2, false));
        assert_eq!(q1.len(), 4);
        for (a, c) in q1.iter().zip(&q2) {
            assert!((a - c).abs() < 1e-5);
        }
    }

    #[test]
    fn initialization_is_seed_deterministic() {
        let s = state(&[1.0], &[2]);
        let (a, b) = (ModelBundle::new(6, 3, 9), ModelBundle::new(6, 3, 9));
        assert_eq!(a, b);
        assert_eq!(a.predict_label(&s), b.predict_label(&s));
        assert_ne!(a, ModelBundle::new(6, 3, 10));
    }

    #[test]
    fn encoders_share_no_parameters() {
        let b = ModelBundle::new(6, 3, 1);
        let mut label_ptrs = Vec::new();
        b.label_encoder.visit("", &mut |_, _, d| label_ptrs.push(d.as_ptr()));
        b.adversary_encoder.visit("", &mut |_, _, d| assert!(!label_ptrs.contains(&d.as_ptr())));
        assert_ne!(flatten(&b.label_encoder), flatten(&b.adversary_encoder));
    }

    #[test]
    fn target_sync_copies_deeply() {
        let mut b = ModelBundle::new(6, 3, 2);
        let last = param_count(&b.policy_head) - 1;
        nudge(&mut b.policy_head, last, 0.5);
        let s = state(&[0.5], &[1]);
        assert_ne!(b.q_values(&s, true), b.q_values(&s, false));
        b.sync_target();
        assert_eq!(b.target_policy, b.policy_head);
        assert_eq!(b.q_values(&s, true), b.q_values(&s, false));
        let snapshot = b.clone();
        nudge(&mut b.policy_head, last, 0.5);
        assert_eq!(b.target_policy, snapshot.target_policy);
        b.sync_target();
        let once = b.clone();
        b.sync_target();
        assert_eq!(b, once);
    }

    #[test]
    fn bce_logit_matches_probability_form() {
        for z in [-3.0, -0.2, 0.0, 1.7] {
            let p = sigmoid(z);
            assert!((bce_with_logit(z, 1) + p.ln()).abs() < 1e-12);
            assert!((bce_with_logit(z, 0) + (1.0 - p).ln()).abs() < 1e-12);
        }
        assert!(bce_with_logit(800.0, 0).is_finite());
    }

    fn check_fd<F>(mut net: SetEncoder, mut head: Mlp, loss: F, grads: EncoderHeadGrads, rng: &mut ChaCha8Rng)
    where
        F: Fn(&SetEncoder, &Mlp) -> f64,
    {
        let h = 1e-5;
        let ge = flatten(&grads.encoder);
        let gh = flatten(&grads.head);
        for _ in 0..25 {
            let i = rng.random_range(0..ge.len());
            nudge(&mut net, i, h);
            let up = loss(&net, &head);
            nudge(&mut net, i, -2.0 * h);
            let down = loss(&net, &head);
            nudge(&mut net, i, h);
            let fd = (up - down) / (2.0 * h);
            assert!(rel_err(fd, ge[i]) < 1e-3 || (fd - ge[i]).abs() < 1e-8, "encoder {i}: {fd} vs {}", ge[i]);
        }
        for _ in 0..25 {
            let i = rng.random_range(0..gh.len());
            nudge(&mut head, i, h);
            let up = loss(&net, &head);
            nudge(&mut head, i, -2.0 * h);
            let down = loss(&net, &head);
            nudge(&mut head, i, h);
            let fd = (up - down) / (2.0 * h);
            assert!(rel_err(fd, gh[i]) < 1e-3 || (fd - gh[i]).abs() < 1e-8, "head {i}: {fd} vs {}", gh[i]);
        }
    }

    #[test]
    fn classifier_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = ModelBundle::new(6, 3, 3);
        let batch = batch(&mut rng, 4, 6);
        let targets = [1, 0, 0, 1];
        let g = bce_grads(&b.label_encoder, &b.label_head, &batch, &targets);
        let loss = |e: &SetEncoder, h: &Mlp| bce_grads(e, h, &batch, &targets).loss;
        check_fd(b.label_encoder.clone(), b.label_head.clone(), loss, g, &mut rng);
    }

    #[test]
    fn td_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = ModelBundle::new(6, 3, 4);
        let batch = batch(&mut rng, 4, 6);
        let (actions, targets) = ([0, 3, 2, 3], [0.4, -0.7, 0.1, -0.2]);
        let g = td_grads(&b.label_encoder, &b.policy_head, &batch, &actions, &targets);
        let loss = |e: &SetEncoder, h: &Mlp| td_grads(e, h, &batch, &actions, &targets).loss;
        check_fd(b.label_encoder.clone(), b.policy_head.clone(), loss, g, &mut rng);
    }

    #[test]
    fn checkpoint_restores_networks_and_optimizers() {
        let mut b = ModelBundle::new(6, 3, 8);
        let mut o = BundleOptimizers::new(AdamConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = batch(&mut rng, 3, 6);
        let g = bce_grads(&b.label_encoder, &b.label_head, &batch, &[1, 0, 1]);
        o.label_encoder.step(&mut b.label_encoder, &g.encoder);
        o.label_head.step(&mut b.label_head, &g.head);
        let ck = b.checkpoint(Some(&o), BTreeMap::new());
        let bytes = ck.to_vec().unwrap();
        let (b2, o2) = ModelBundle::from_checkpoint(&Checkpoint::from_slice(&bytes).unwrap()).unwrap();
        assert_eq!(b2, b);
        assert_eq!(o2.unwrap(), o);
    }

    #[test]
    fn checkpoint_rejects_wrong_header_and_shapes() {
        let b = ModelBundle::new(6, 3, 8);
        let mut ck = b.checkpoint(None, BTreeMap::new());
        ck.format_version = 2;
        assert!(Checkpoint::from_slice(&ck.to_vec().unwrap()).is_err());
        let mut ck = b.checkpoint(None, BTreeMap::new());
        ck.n_coords = 7;
        assert!(ModelBundle::from_checkpoint(&ck).is_err());
        assert!(Checkpoint::from_slice(b"{}").is_err());
    }
}

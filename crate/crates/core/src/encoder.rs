//! Order-invariant set encoder.
//!
//! Each observed feature becomes a token `u_j = [x_j, onehot(j)]`. A shared
//! reading network maps every token to a memory vector; a processing block then
//! runs an LSTM whose hidden state acts as the attention query over the memory
//! bank for a fixed number of rounds. The final attention read is the set
//! embedding.
//!
//! Processing schedule (`K = processing_steps`):
//!
//! ```text
//! r_0   = mean(m)                      (zero vector for an empty set)
//! q_1   = LSTM([0, r_0])               from a zero state
//! for k in 1..=K:
//!     a_k = softmax(M q_k)
//!     r_k = a_k^T M                    (zero vector for an empty set)
//!     q_{k+1} = LSTM([q_k, r_k])       (skipped after the last round)
//! embedding = r_K
//! ```

use std::collections::HashSet;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;

use crate::env::AcquisitionState;
use crate::error::{DadiError, Result};
use crate::nn::params::{join, Parameters};
use crate::nn::{Linear, LstmCell, LstmStep, Mlp, MlpCache};

pub const READ_HIDDEN: usize = 64;
pub const MEMORY_WIDTH: usize = 32;
pub const PROCESSING_STEPS: usize = 5;

/// One observed feature: its value and its encoded-column index (0-based).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureToken {
    pub value: f64,
    pub coordinate: usize,
}

/// Memory vectors, one row per token, in token order.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    pub memories: Array2<f64>,
}

impl MemoryBank {
    pub fn len(&self) -> usize {
        self.memories.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetEmbedding {
    pub vector: Array1<f64>,
}

/// A batch of token sets laid out contiguously; set `s` owns tokens
/// `offsets[s]..offsets[s + 1]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SetBatch {
    pub values: Vec<f64>,
    pub coords: Vec<usize>,
    pub offsets: Vec<usize>,
}

impl SetBatch {
    pub fn new() -> Self {
        SetBatch {
            values: Vec::new(),
            coords: Vec::new(),
            offsets: vec![0],
        }
    }

    pub fn push_set<I: IntoIterator<Item = (f64, usize)>>(&mut self, tokens: I) {
        if self.offsets.is_empty() {
            self.offsets.push(0);
        }
        for (v, c) in tokens {
            self.values.push(v);
            self.coords.push(c);
        }
        self.offsets.push(self.values.len());
    }

    pub fn push_state(&mut self, state: &AcquisitionState) {
        self.push_set(state.values.iter().copied().zip(state.coords.iter().copied()));
    }

    pub fn from_states<'a, I: IntoIterator<Item = &'a AcquisitionState>>(states: I) -> Self {
        let mut b = SetBatch::new();
        for st in states {
            b.push_state(st);
        }
        b
    }

    pub fn n_sets(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn n_tokens(&self) -> usize {
        self.values.len()
    }
}

/// Parameters of one encoder: the shared reading network and the processing LSTM.
#[derive(Debug, Clone, PartialEq)]
pub struct SetEncoder {
    /// `(1 + n_coords) -> 64`, applied to `[x_j, onehot(j)]`.
    pub read_in: Linear,
    /// `64 -> 64 -> 32`.
    pub read_out: Mlp,
    /// Input `[q, r]` (64 wide), hidden 32.
    pub lstm: LstmCell,
    pub processing_steps: usize,
}

/// Intermediate values of a batched forward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    offsets: Vec<usize>,
    values: Vec<f64>,
    coords: Vec<usize>,
    h1: Array2<f64>,
    read_cache: MlpCache,
    memories: Array2<f64>,
    lstm_steps: Vec<LstmStep>,
    queries: Vec<Array2<f64>>,
    attention: Vec<Vec<f64>>,
}

impl EncoderCache {
    /// Attention weights of every round, each flattened over all tokens of the
    /// batch in token order.
    pub fn attention(&self) -> &[Vec<f64>] {
        &self.attention
    }
}

pub(crate) fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        total += *l;
    }
    for l in logits.iter_mut() {
        *l /= total;
    }
}

/// Softmax over the dot products `m_i . query`.
pub fn attention_weights(memories: &MemoryBank, query: &[f64]) -> Result<Vec<f64>> {
    if memories.is_empty() {
        return Err(DadiError::EmptyMemory);
    }
    if query.len() != memories.memories.ncols() {
        return Err(DadiError::InvalidArgument(format!(
            "query width {} does not match memory width {}",
            query.len(),
            memories.memories.ncols()
        )));
    }
    let q = ArrayView1::from(query);
    let mut logits: Vec<f64> = memories.memories.rows().into_iter().map(|m| m.dot(&q)).collect();
    softmax_in_place(&mut logits);
    Ok(logits)
}

impl SetEncoder {
    pub fn new<R: Rng + ?Sized>(n_coords: usize, rng: &mut R) -> Self {
        SetEncoder {
            read_in: Linear::new(1 + n_coords, READ_HIDDEN, rng),
            read_out: Mlp::new(&[READ_HIDDEN, READ_HIDDEN, MEMORY_WIDTH], rng),
            lstm: LstmCell::new(2 * MEMORY_WIDTH, MEMORY_WIDTH, rng),
            processing_steps: PROCESSING_STEPS,
        }
    }

    pub fn n_coords(&self) -> usize {
        self.read_in.in_dim() - 1
    }

    pub fn embedding_width(&self) -> usize {
        MEMORY_WIDTH
    }

    pub fn check_tokens(&self, tokens: &[FeatureToken]) -> Result<()> {
        let mut seen = HashSet::with_capacity(tokens.len());
        for t in tokens {
            if t.coordinate >= self.n_coords() {
                return Err(DadiError::CoordinateOutOfRange {
                    coordinate: t.coordinate,
                    n_coords: self.n_coords(),
                });
            }
            if !seen.insert(t.coordinate) {
                return Err(DadiError::DuplicateCoordinate(t.coordinate));
            }
        }
        Ok(())
    }

    /// First reading layer, exploiting the one-hot coordinate: returns the
    /// post-ReLU activations (`T x 64`).
    fn read_first(&self, values: &[f64], coords: &[usize]) -> Array2<f64> {
        let w = &self.read_in.w;
        let value_col = w.column(0);
        let mut h = Array2::<f64>::zeros((values.len(), READ_HIDDEN));
        for (t, mut row) in h.axis_iter_mut(Axis(0)).enumerate() {
            let coord_col = w.column(1 + coords[t]);
            let x = values[t];
            for k in 0..READ_HIDDEN {
                row[k] = (value_col[k] * x + coord_col[k] + self.read_in.b[k]).max(0.0);
            }
        }
        h
    }

    /// Maps tokens to memory vectors with the shared reading network.
    pub fn read_block(&self, tokens: &[FeatureToken]) -> Result<MemoryBank> {
        self.check_tokens(tokens)?;
        let values: Vec<f64> = tokens.iter().map(|t| t.value).collect();
        let coords: Vec<usize> = tokens.iter().map(|t| t.coordinate).collect();
        if tokens.is_empty() {
            return Ok(MemoryBank {
                memories: Array2::zeros((0, MEMORY_WIDTH)),
            });
        }
        let h1 = self.read_first(&values, &coords);
        Ok(MemoryBank {
            memories: self.read_out.forward(&h1),
        })
    }

    /// Runs the attention/LSTM loop over the memory bank.
    pub fn process_block(&self, memories: &MemoryBank) -> SetEmbedding {
        let (out, _) = self.process(&memories.memories, &[0, memories.len()], false);
        SetEmbedding {
            vector: out.row(0).to_owned(),
        }
    }

    /// Attention weights of every processing round for one memory bank.
    pub fn attention_trace(&self, memories: &MemoryBank) -> Vec<Vec<f64>> {
        let (_, trace) = self.process(&memories.memories, &[0, memories.len()], true);
        trace.map(|t| t.attention).unwrap_or_default()
    }

    pub fn encode_tokens(&self, tokens: &[FeatureToken]) -> Result<SetEmbedding> {
        let bank = self.read_block(tokens)?;
        Ok(self.process_block(&bank))
    }

    pub fn encode(&self, state: &AcquisitionState) -> Result<SetEmbedding> {
        self.encode_tokens(&state.tokens())
    }

    /// Embeds every set in the batch (`n_sets x 32`).
    pub fn forward(&self, batch: &SetBatch) -> Array2<f64> {
        let memories = if batch.n_tokens() == 0 {
            Array2::zeros((0, MEMORY_WIDTH))
        } else {
            self.read_out.forward(&self.read_first(&batch.values, &batch.coords))
        };
        self.process(&memories, &batch.offsets, false).0
    }

    pub fn forward_cached(&self, batch: &SetBatch) -> (Array2<f64>, EncoderCache) {
        let h1 = self.read_first(&batch.values, &batch.coords);
        let (memories, read_cache) = self.read_out.forward_cached(h1.clone());
        let (out, trace) = self.process(&memories, &batch.offsets, true);
        let trace = trace.expect("trace requested");
        let cache = EncoderCache {
            offsets: batch.offsets.clone(),
            values: batch.values.clone(),
            coords: batch.coords.clone(),
            h1,
            read_cache,
            memories,
            lstm_steps: trace.lstm_steps,
            queries: trace.queries,
            attention: trace.attention,
        };
        (out, cache)
    }

    fn process(
        &self,
        memories: &Array2<f64>,
        offsets: &[usize],
        keep: bool,
    ) -> (Array2<f64>, Option<ProcessTrace>) {
        let n_sets = offsets.len().saturating_sub(1);
        let width = MEMORY_WIDTH;
        let mut r = Array2::<f64>::zeros((n_sets, width));
        for s in 0..n_sets {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            if hi > lo {
                let mean = memories.slice(s![lo..hi, ..]).mean_axis(Axis(0)).unwrap();
                r.row_mut(s).assign(&mean);
            }
        }
        let mut x = Array2::<f64>::zeros((n_sets, 2 * width));
        x.slice_mut(s![.., width..]).assign(&r);
        let zeros = Array2::<f64>::zeros((n_sets, width));
        let (mut h, mut c, step0) = self.lstm.forward(x, zeros.clone(), zeros);

        let mut trace = keep.then(|| ProcessTrace {
            lstm_steps: vec![step0],
            queries: Vec::new(),
            attention: Vec::new(),
        });
        for k in 1..=self.processing_steps {
            let mut weights = vec![0.0; memories.nrows()];
            for s in 0..n_sets {
                let (lo, hi) = (offsets[s], offsets[s + 1]);
                let mut row = r.row_mut(s);
                row.fill(0.0);
                if hi == lo {
                    continue;
                }
                let q = h.row(s);
                let a = &mut weights[lo..hi];
                for (i, m) in memories.slice(s![lo..hi, ..]).rows().into_iter().enumerate() {
                    a[i] = m.dot(&q);
                }
                softmax_in_place(a);
                for (i, m) in memories.slice(s![lo..hi, ..]).rows().into_iter().enumerate() {
                    row.scaled_add(a[i], &m);
                }
            }
            if let Some(t) = trace.as_mut() {
                t.queries.push(h.clone());
                t.attention.push(weights);
            }
            if k < self.processing_steps {
                let mut x = Array2::<f64>::zeros((n_sets, 2 * width));
                x.slice_mut(s![.., ..width]).assign(&h);
                x.slice_mut(s![.., width..]).assign(&r);
                let (h2, c2, step) = self.lstm.forward(x, h, c);
                h = h2;
                c = c2;
                if let Some(t) = trace.as_mut() {
                    t.lstm_steps.push(step);
                }
            }
        }
        (r, trace)
    }

    /// Backpropagates `d_out` (`n_sets x 32`) into `grad`.
    pub fn backward(&self, cache: &EncoderCache, d_out: &Array2<f64>, grad: &mut SetEncoder) {
        let width = MEMORY_WIDTH;
        let offsets = &cache.offsets;
        let n_sets = offsets.len() - 1;
        let m = &cache.memories;
        let mut dm = Array2::<f64>::zeros(m.raw_dim());
        let mut dr = d_out.clone();
        let mut dh = Array2::<f64>::zeros((n_sets, width));
        let mut dc = Array2::<f64>::zeros((n_sets, width));

        for k in (1..=self.processing_steps).rev() {
            let q = &cache.queries[k - 1];
            let a = &cache.attention[k - 1];
            for s in 0..n_sets {
                let (lo, hi) = (offsets[s], offsets[s + 1]);
                if hi == lo {
                    continue;
                }
                let drs = dr.row(s);
                let qs = q.row(s);
                let da: Vec<f64> = (lo..hi).map(|i| m.row(i).dot(&drs)).collect();
                let mean_da: f64 = (lo..hi).map(|i| a[i] * da[i - lo]).sum();
                let mut dq = Array1::<f64>::zeros(width);
                for i in lo..hi {
                    let dl = a[i] * (da[i - lo] - mean_da);
                    let mut dmi = dm.row_mut(i);
                    dmi.scaled_add(a[i], &drs);
                    dmi.scaled_add(dl, &qs);
                    dq.scaled_add(dl, &m.row(i));
                }
                let mut dhs = dh.row_mut(s);
                dhs += &dq;
            }
            let call = k - 1;
            let (dx, dh_prev, dc_prev) =
                self.lstm
                    .backward(&cache.lstm_steps[call], &dh, &dc, &mut grad.lstm);
            if call >= 1 {
                dh = dh_prev + &dx.slice(s![.., ..width]);
                dc = dc_prev;
                dr = dx.slice(s![.., width..]).to_owned();
            } else {
                let dr0 = dx.slice(s![.., width..]);
                for s in 0..n_sets {
                    let (lo, hi) = (offsets[s], offsets[s + 1]);
                    if hi == lo {
                        continue;
                    }
                    let scale = 1.0 / (hi - lo) as f64;
                    for i in lo..hi {
                        dm.row_mut(i).scaled_add(scale, &dr0.row(s));
                    }
                }
            }
        }

        if m.nrows() == 0 {
            return;
        }
        let mut dh1 = self.read_out.backward(&cache.read_cache, dm, &mut grad.read_out);
        dh1.zip_mut_with(&cache.h1, |g, &a| {
            if a <= 0.0 {
                *g = 0.0
            }
        });
        for (t, row) in dh1.axis_iter(Axis(0)).enumerate() {
            let x = cache.values[t];
            let j = 1 + cache.coords[t];
            for k in 0..READ_HIDDEN {
                let g = row[k];
                if g != 0.0 {
                    grad.read_in.w[[k, 0]] += g * x;
                    grad.read_in.w[[k, j]] += g;
                    grad.read_in.b[k] += g;
                }
            }
        }
    }
}

struct ProcessTrace {
    lstm_steps: Vec<LstmStep>,
    queries: Vec<Array2<f64>>,
    attention: Vec<Vec<f64>>,
}

impl Parameters for SetEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.read_in.visit(&join(prefix, "read_in"), f);
        self.read_out.visit(&join(prefix, "read_out"), f);
        self.lstm.visit(&join(prefix, "lstm"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.read_in.visit_mut(&join(prefix, "read_in"), f);
        self.read_out.visit_mut(&join(prefix, "read_out"), f);
        self.lstm.visit_mut(&join(prefix, "lstm"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::{nudge, zeros_like};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn encoder(d: usize, seed: u64) -> SetEncoder {
        SetEncoder::new(d, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn random_tokens(d: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<FeatureToken> {
        let mut coords: Vec<usize> = (0..d).collect();
        coords.shuffle(rng);
        coords[..n]
            .iter()
            .map(|&c| FeatureToken {
                value: rng.random_range(-2.0..2.0),
                coordinate: c,
            })
            .collect()
    }

    #[test]
    fn empty_tokens_give_empty_bank_and_zero_embedding() {
        let enc = encoder(6, 1);
        let bank = enc.read_block(&[]).unwrap();
        assert!(bank.is_empty());
        let emb = enc.process_block(&bank);
        assert_eq!(emb.vector.len(), MEMORY_WIDTH);
        assert!(emb.vector.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_token_has_one_memory_of_width_32() {
        let enc = encoder(6, 1);
        let bank = enc
            .read_block(&[FeatureToken {
                value: 1.0,
                coordinate: 3,
            }])
            .unwrap();
        assert_eq!(bank.memories.dim(), (1, 32));
    }

    #[test]
    fn singleton_reads_its_own_memory_every_round() {
        let enc = encoder(6, 2);
        let bank = enc
            .read_block(&[FeatureToken {
                value: -0.7,
                coordinate: 2,
            }])
            .unwrap();
        let emb = enc.process_block(&bank);
        for (a, b) in emb.vector.iter().zip(bank.memories.row(0)) {
            assert!((a - b).abs() < 1e-12);
        }
        for round in enc.attention_trace(&bank) {
            assert_eq!(round, vec![1.0]);
        }
    }

    #[test]
    fn duplicate_and_out_of_range_coordinates_rejected() {
        let enc = encoder(4, 0);
        let t = |c| FeatureToken {
            value: 0.0,
            coordinate: c,
        };
        assert!(matches!(
            enc.read_block(&[t(1), t(1)]).unwrap_err(),
            DadiError::DuplicateCoordinate(1)
        ));
        assert!(matches!(
            enc.read_block(&[t(4)]).unwrap_err(),
            DadiError::CoordinateOutOfRange { .. }
        ));
    }

    #[test]
    fn permuted_tokens_permute_memories() {
        let enc = encoder(8, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tokens = random_tokens(8, 5, &mut rng);
        let mut perm: Vec<usize> = (0..5).collect();
        perm.shuffle(&mut rng);
        let permuted: Vec<FeatureToken> = perm.iter().map(|&i| tokens[i]).collect();
        let a = enc.read_block(&tokens).unwrap();
        let b = enc.read_block(&permuted).unwrap();
        for (row, &i) in perm.iter().enumerate() {
            assert_eq!(b.memories.row(row), a.memories.row(i));
        }
    }

    #[test]
    fn attention_examples() {
        let one = MemoryBank {
            memories: Array2::from_shape_fn((1, 3), |(_, j)| j as f64),
        };
        assert_eq!(attention_weights(&one, &[0.3, 0.1, 2.0]).unwrap(), vec![1.0]);

        let twins = MemoryBank {
            memories: Array2::from_shape_fn((2, 3), |(_, j)| j as f64 - 0.5),
        };
        let w = attention_weights(&twins, &[1.0, -2.0, 0.5]).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);

        // Dot products 0 and ln 2 give weights 1/3 and 2/3.
        let bank = MemoryBank {
            memories: ndarray::array![[0.0, 0.0], [std::f64::consts::LN_2, 0.0]],
        };
        let w = attention_weights(&bank, &[1.0, 0.0]).unwrap();
        assert!((w[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((w[1] - 2.0 / 3.0).abs() < 1e-12);

        let empty = MemoryBank {
            memories: Array2::zeros((0, 2)),
        };
        assert!(matches!(
            attention_weights(&empty, &[1.0, 0.0]).unwrap_err(),
            DadiError::EmptyMemory
        ));
    }

    #[test]
    fn five_normalized_attention_rounds_for_any_size() {
        let enc = encoder(10, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for n in 1..=10 {
            let bank = enc.read_block(&random_tokens(10, n, &mut rng)).unwrap();
            let trace = enc.attention_trace(&bank);
            assert_eq!(trace.len(), PROCESSING_STEPS);
            for round in trace {
                assert_eq!(round.len(), n);
                assert!((round.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                assert!(round.iter().all(|&a| a >= 0.0));
            }
        }
    }

    #[test]
    fn five_feature_permutation_invariance() {
        let enc = encoder(10, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let tokens = random_tokens(10, 5, &mut rng);
        let mut shuffled = tokens.clone();
        shuffled.shuffle(&mut rng);
        let a = enc.encode_tokens(&tokens).unwrap();
        let b = enc.encode_tokens(&shuffled).unwrap();
        let dev = (&a.vector - &b.vector).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(dev < 1e-5);
    }

    #[test]
    fn batched_forward_matches_single_sets() {
        let enc = encoder(7, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let sets: Vec<Vec<FeatureToken>> = [0, 3, 1, 7, 2]
            .iter()
            .map(|&n| random_tokens(7, n, &mut rng))
            .collect();
        let mut batch = SetBatch::new();
        for s in &sets {
            batch.push_set(s.iter().map(|t| (t.value, t.coordinate)));
        }
        let out = enc.forward(&batch);
        let (cached, _) = enc.forward_cached(&batch);
        for (i, s) in sets.iter().enumerate() {
            let single = enc.encode_tokens(s).unwrap();
            for (a, b) in out.row(i).iter().zip(single.vector.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert_eq!(out, cached);
    }

    #[test]
    fn encoder_gradient_matches_finite_differences() {
        let d = 5;
        let enc = encoder(d, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut batch = SetBatch::new();
        for n in [3, 0, 1, 4] {
            batch.push_set(random_tokens(d, n, &mut rng).iter().map(|t| (t.value, t.coordinate)));
        }
        let proj = Array2::from_shape_fn((4, MEMORY_WIDTH), |_| rng.random_range(-1.0..1.0));
        let loss = |e: &SetEncoder| (&e.forward(&batch) * &proj).sum();
        let (_, cache) = enc.forward_cached(&batch);
        let mut grad = zeros_like(&enc);
        enc.backward(&cache, &proj, &mut grad);
        let mut analytic = Vec::new();
        grad.visit("", &mut |_, _, g| analytic.extend_from_slice(g));
        let h = 1e-5;
        let mut worst = 0.0f64;
        for (idx, &a) in analytic.iter().enumerate() {
            let mut p = enc.clone();
            let mut m = enc.clone();
            nudge(&mut p, idx, h);
            nudge(&mut m, idx, -h);
            let numeric = (loss(&p) - loss(&m)) / (2.0 * h);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
            worst = worst.max(err);
        }
        assert!(worst < 1e-3, "worst relative error {worst}");
    }
}

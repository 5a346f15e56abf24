use serde::{Deserialize, Serialize};

use crate::nn::params::{Parameters, Tensor, TensorMap};
use crate::error::{DadiError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moment estimates for one parameter set. Moments are allocated on the
/// first step.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P) {
        let mut g = Vec::new();
        grads.visit("", &mut |_, _, d| g.push(d.to_vec()));
        if self.m.is_empty() {
            self.m = g.iter().map(|t| vec![0.0; t.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let mut k = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        params.visit_mut("", &mut |_, _, data| {
            let (m, v, gk) = (&mut ms[k], &mut vs[k], &g[k]);
            for j in 0..data.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * gk[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * gk[j] * gk[j];
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                data[j] -= learning_rate * mh / (vh.sqrt() + epsilon);
            }
            k += 1;
        });
    }

    /// Moments keyed by the parameter names of `params` under `prefix`.
    pub fn export(&self, params: &dyn Parameters, prefix: &str, out: &mut TensorMap) {
        out.insert(
            format!("{prefix}.step"),
            Tensor {
                shape: vec![1],
                data: vec![self.step as f64],
            },
        );
        if self.m.is_empty() {
            return;
        }
        let mut k = 0;
        params.visit("", &mut |name, shape, _| {
            for (tag, store) in [("m", &self.m), ("v", &self.v)] {
                out.insert(
                    format!("{prefix}.{tag}.{name}"),
                    Tensor {
                        shape: shape.to_vec(),
                        data: store[k].clone(),
                    },
                );
            }
            k += 1;
        });
    }

    pub fn import(&mut self, params: &dyn Parameters, prefix: &str, map: &TensorMap) -> Result<()> {
        let step = map
            .get(&format!("{prefix}.step"))
            .and_then(|t| t.data.first().copied())
            .ok_or_else(|| DadiError::Format(format!("missing {prefix}.step")))?;
        if !(step >= 0.0 && step.fract() == 0.0) {
            return Err(DadiError::Format(format!("bad optimizer step {step}")));
        }
        self.step = step as u64;
        self.m.clear();
        self.v.clear();
        if self.step == 0 {
            return Ok(());
        }
        let mut err = None;
        let (ms, vs) = (&mut self.m, &mut self.v);
        params.visit("", &mut |name, shape, data| {
            for (tag, store) in [("m", &mut *ms), ("v", &mut *vs)] {
                match map.get(&format!("{prefix}.{tag}.{name}")) {
                    Some(t) if t.shape == shape && t.data.len() == data.len() => {
                        store.push(t.data.clone())
                    }
                    _ => {
                        err.get_or_insert_with(|| {
                            DadiError::Format(format!("bad optimizer moment {prefix}.{tag}.{name}"))
                        });
                    }
                }
            }
        });
        err.map_or(Ok(()), Err)
    }
}

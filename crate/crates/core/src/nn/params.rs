use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{DadiError, Result};

/// Uniform access to the named parameter tensors of a network.
///
/// Both visitors must walk tensors in the same stable order; optimizers and
/// checkpoints rely on it.
pub trait Parameters {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64]));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub fn param_count<P: Parameters + ?Sized>(p: &P) -> usize {
    let mut n = 0;
    p.visit("", &mut |_, _, data| n += data.len());
    n
}

pub fn flatten<P: Parameters + ?Sized>(p: &P) -> Vec<f64> {
    let mut out = Vec::new();
    p.visit("", &mut |_, _, data| out.extend_from_slice(data));
    out
}

pub fn zeros_like<P: Parameters + Clone>(p: &P) -> P {
    let mut z = p.clone();
    z.visit_mut("", &mut |_, _, data| data.fill(0.0));
    z
}

/// `dst += scale * src`, tensor by tensor.
pub fn add_scaled<P: Parameters>(dst: &mut P, src: &P, scale: f64) {
    let mut tensors = Vec::new();
    src.visit("", &mut |_, _, data| tensors.push(data.to_vec()));
    let mut it = tensors.into_iter();
    dst.visit_mut("", &mut |_, _, data| {
        let s = it.next().expect("parameter layouts differ");
        for (d, v) in data.iter_mut().zip(s) {
            *d += scale * v;
        }
    });
}

/// One serialized tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub type TensorMap = BTreeMap<String, Tensor>;

pub fn export_tensors<P: Parameters + ?Sized>(p: &P, prefix: &str, out: &mut TensorMap) {
    p.visit(prefix, &mut |name, shape, data| {
        out.insert(
            name.to_string(),
            Tensor {
                shape: shape.to_vec(),
                data: data.to_vec(),
            },
        );
    });
}

/// Copies tensors named `<prefix>.*` from `map` into `p`, checking shapes.
pub fn import_tensors<P: Parameters + ?Sized>(p: &mut P, prefix: &str, map: &TensorMap) -> Result<()> {
    let mut err = None;
    p.visit_mut(prefix, &mut |name, shape, data| {
        if err.is_some() {
            return;
        }
        match map.get(name) {
            None => err = Some(DadiError::Format(format!("checkpoint lacks tensor {name}"))),
            Some(t) if t.shape != shape || t.data.len() != data.len() => {
                err = Some(DadiError::Format(format!(
                    "tensor {name}: expected shape {shape:?}, found {:?}",
                    t.shape
                )))
            }
            Some(t) => data.copy_from_slice(&t.data),
        }
    });
    err.map_or(Ok(()), Err)
}

/// Adds `delta` to the `index`-th scalar in visiting order.
pub fn nudge<P: Parameters + ?Sized>(p: &mut P, index: usize, delta: f64) {
    let mut offset = 0;
    p.visit_mut("", &mut |_, _, data| {
        if index >= offset && index < offset + data.len() {
            data[index - offset] += delta;
        }
        offset += data.len();
    });
}

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::nn::params::{join, Parameters};

/// Fully connected layer `y = x W^T + b` over a batch of row vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out x in`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and bias.
    pub fn new<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let w = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..bound));
        let b = Array1::from_shape_fn(fan_out, |_| rng.random_range(-bound..bound));
        Linear { w, b }
    }

    pub fn in_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.w.t());
        y += &self.b;
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.w += &dy.t().dot(x);
        grad.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w)
    }
}

impl Parameters for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&join(prefix, "w"), self.w.shape(), self.w.as_slice().unwrap());
        f(&join(prefix, "b"), self.b.shape(), self.b.as_slice().unwrap());
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        let shape = self.w.shape().to_vec();
        f(&join(prefix, "w"), &shape, self.w.as_slice_mut().unwrap());
        let shape = self.b.shape().to_vec();
        f(&join(prefix, "b"), &shape, self.b.as_slice_mut().unwrap());
    }
}

pub(crate) fn relu_inplace(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// Multi-layer perceptron with ReLU between layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Array2<f64>>,
}

impl Mlp {
    /// `sizes = [in, hidden.., out]`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an mlp needs at least input and output sizes");
        let layers = sizes.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect();
        Mlp { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut h = self.layers[0].forward(x);
        for layer in &self.layers[1..] {
            relu_inplace(&mut h);
            h = layer.forward(&h);
        }
        h
    }

    pub fn forward_cached(&self, x: Array2<f64>) -> (Array2<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = self.layers[0].forward(&x);
        inputs.push(x);
        for layer in &self.layers[1..] {
            relu_inplace(&mut h);
            let next = layer.forward(&h);
            inputs.push(h);
            h = next;
        }
        (h, MlpCache { inputs })
    }

    pub fn backward(&self, cache: &MlpCache, dy: Array2<f64>, grad: &mut Mlp) -> Array2<f64> {
        let mut d = dy;
        for i in (0..self.layers.len()).rev() {
            let x = &cache.inputs[i];
            d = self.layers[i].backward(x, &d, &mut grad.layers[i]);
            if i > 0 {
                // x is the ReLU output, so x > 0 exactly where the unit was active.
                d.zip_mut_with(x, |g, &a| {
                    if a <= 0.0 {
                        *g = 0.0
                    }
                });
            }
        }
        d
    }
}

impl Parameters for Mlp {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("layer{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("layer{i}")), f);
        }
    }
}

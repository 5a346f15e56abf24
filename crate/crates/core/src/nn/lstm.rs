use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;

use crate::nn::params::{join, Parameters};

/// LSTM cell with gate order `[input, forget, cell, output]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    /// `4H x I`.
    pub w_input: Array2<f64>,
    /// `4H x H`.
    pub w_hidden: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Per-call values needed to backpropagate one cell application.
#[derive(Debug, Clone)]
pub struct LstmStep {
    x: Array2<f64>,
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
    i: Array2<f64>,
    f: Array2<f64>,
    g: Array2<f64>,
    o: Array2<f64>,
    tanh_c: Array2<f64>,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl LstmCell {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        LstmCell {
            w_input: Array2::from_shape_fn((4 * hidden, input), |_| rng.random_range(-bound..bound)),
            w_hidden: Array2::from_shape_fn((4 * hidden, hidden), |_| rng.random_range(-bound..bound)),
            bias: Array1::from_shape_fn(4 * hidden, |_| rng.random_range(-bound..bound)),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hidden.ncols()
    }

    pub fn input(&self) -> usize {
        self.w_input.ncols()
    }

    /// One step over a batch. Returns `(h, c, cache)`.
    pub fn forward(
        &self,
        x: Array2<f64>,
        h_prev: Array2<f64>,
        c_prev: Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>, LstmStep) {
        let hd = self.hidden();
        let mut z = x.dot(&self.w_input.t());
        z += &h_prev.dot(&self.w_hidden.t());
        z += &self.bias;
        let i = z.slice(s![.., 0..hd]).mapv(sigmoid);
        let f = z.slice(s![.., hd..2 * hd]).mapv(sigmoid);
        let g = z.slice(s![.., 2 * hd..3 * hd]).mapv(f64::tanh);
        let o = z.slice(s![.., 3 * hd..4 * hd]).mapv(sigmoid);
        let c = &f * &c_prev + &i * &g;
        let tanh_c = c.mapv(f64::tanh);
        let h = &o * &tanh_c;
        let step = LstmStep {
            x,
            h_prev,
            c_prev,
            i,
            f,
            g,
            o,
            tanh_c,
        };
        (h, c, step)
    }

    /// Backpropagates `(dh, dc)` through one step. Returns `(dx, dh_prev, dc_prev)`.
    pub fn backward(
        &self,
        step: &LstmStep,
        dh: &Array2<f64>,
        dc: &Array2<f64>,
        grad: &mut LstmCell,
    ) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let hd = self.hidden();
        let d_o = dh * &step.tanh_c;
        let dc_total = dc + &(dh * &step.o * &step.tanh_c.mapv(|t| 1.0 - t * t));
        let di = &dc_total * &step.g;
        let dg = &dc_total * &step.i;
        let df = &dc_total * &step.c_prev;
        let dc_prev = &dc_total * &step.f;

        let batch = dh.nrows();
        let mut dz = Array2::<f64>::zeros((batch, 4 * hd));
        dz.slice_mut(s![.., 0..hd])
            .assign(&(&di * &step.i.mapv(|v| v * (1.0 - v))));
        dz.slice_mut(s![.., hd..2 * hd])
            .assign(&(&df * &step.f.mapv(|v| v * (1.0 - v))));
        dz.slice_mut(s![.., 2 * hd..3 * hd])
            .assign(&(&dg * &step.g.mapv(|v| 1.0 - v * v)));
        dz.slice_mut(s![.., 3 * hd..4 * hd])
            .assign(&(&d_o * &step.o.mapv(|v| v * (1.0 - v))));

        grad.w_input += &dz.t().dot(&step.x);
        grad.w_hidden += &dz.t().dot(&step.h_prev);
        grad.bias += &dz.sum_axis(Axis(0));
        let dx = dz.dot(&self.w_input);
        let dh_prev = dz.dot(&self.w_hidden);
        (dx, dh_prev, dc_prev)
    }
}

impl Parameters for LstmCell {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&join(prefix, "w_input"), self.w_input.shape(), self.w_input.as_slice().unwrap());
        f(&join(prefix, "w_hidden"), self.w_hidden.shape(), self.w_hidden.as_slice().unwrap());
        f(&join(prefix, "bias"), self.bias.shape(), self.bias.as_slice().unwrap());
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        let shape = self.w_input.shape().to_vec();
        f(&join(prefix, "w_input"), &shape, self.w_input.as_slice_mut().unwrap());
        let shape = self.w_hidden.shape().to_vec();
        f(&join(prefix, "w_hidden"), &shape, self.w_hidden.as_slice_mut().unwrap());
        let shape = self.bias.shape().to_vec();
        f(&join(prefix, "bias"), &shape, self.bias.as_slice_mut().unwrap());
    }
}

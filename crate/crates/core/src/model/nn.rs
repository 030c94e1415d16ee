//! Dense layers with hand-derived backward passes.
//!
//! Activations are batch-major: a batch of `B` inputs of width `n` is a
//! `B x n` matrix and a linear layer computes `X W + b` with `W` stored
//! `in x out`.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;

use crate::rng::Rng;

/// Visitor over trainable tensors in a fixed order.
pub trait Parameters {
    /// `(name, shape, values)` for every trainable tensor.
    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, Vec<usize>, &'a [f64])>);

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>);

    fn num_parameters(&self) -> usize {
        let mut v = Vec::new();
        self.tensors("", &mut v);
        v.iter().map(|(_, _, d)| d.len()).sum()
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    /// Uniform fan-in initialization `U(-1/sqrt(in), 1/sqrt(in))`, zero bias.
    pub fn new(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-bound..bound));
        Self {
            weight,
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.fan_in(), self.fan_out())
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: &ArrayView2<'_, f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight);
        y += &self.bias;
        y
    }

    /// Accumulate parameter gradients into `grad` and return `dL/dx`.
    pub fn backward(&self, x: &ArrayView2<'_, f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        self.accumulate(x, dy, grad);
        dy.dot(&self.weight.t())
    }

    /// Like [`backward`](Self::backward) for layers whose input needs no gradient.
    pub fn accumulate(&self, x: &ArrayView2<'_, f64>, dy: &Array2<f64>, grad: &mut Linear) {
        grad.weight += &x.t().dot(dy);
        grad.bias += &dy.sum_axis(Axis(0));
    }
}

impl Parameters for Linear {
    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, Vec<usize>, &'a [f64])>) {
        out.push((join(prefix, "weight"), self.weight.shape().to_vec(), self.weight.as_slice().expect("standard layout")));
        out.push((join(prefix, "bias"), vec![self.bias.len()], self.bias.as_slice().expect("standard layout")));
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(self.weight.as_slice_mut().expect("standard layout"));
        out.push(self.bias.as_slice_mut().expect("standard layout"));
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// `dy * 1[pre > 0]`
pub fn relu_backward(pre: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(pre).for_each(|d, &p| {
        if p <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Stack of linear layers with ReLU between them and optionally after the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub relu_out: bool,
}

/// Per-layer inputs and pre-activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl Mlp {
    /// `widths = [in, h1, ..., out]`
    pub fn new(widths: &[usize], relu_out: bool, rng: &mut Rng) -> Self {
        let layers = widths.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect();
        Self { layers, relu_out }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Linear::zeros_like).collect(),
            relu_out: self.relu_out,
        }
    }

    pub fn in_width(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn out_width(&self) -> usize {
        self.layers.last().expect("non-empty mlp").fan_out()
    }

    fn activated(&self, i: usize) -> bool {
        i + 1 < self.layers.len() || self.relu_out
    }

    pub fn forward(&self, x: &ArrayView2<'_, f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h.view());
            if self.activated(i) {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        h
    }

    pub fn forward_cached(&self, x: &ArrayView2<'_, f64>) -> (Array2<f64>, MlpCache) {
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = layer.forward(&h.view());
            let next = if self.activated(i) { relu(&pre) } else { pre.clone() };
            cache.inputs.push(h);
            cache.pre.push(pre);
            h = next;
        }
        (h, cache)
    }

    /// Accumulate gradients into `grad`; returns `dL/dx` when `need_input`.
    pub fn backward(&self, cache: &MlpCache, dy: Array2<f64>, grad: &mut Mlp, need_input: bool) -> Option<Array2<f64>> {
        let mut d = dy;
        for i in (0..self.layers.len()).rev() {
            if self.activated(i) {
                d = relu_backward(&cache.pre[i], &d);
            }
            let x = cache.inputs[i].view();
            if i == 0 && !need_input {
                self.layers[i].accumulate(&x, &d, &mut grad.layers[i]);
                return None;
            }
            d = self.layers[i].backward(&x, &d, &mut grad.layers[i]);
        }
        Some(d)
    }
}

impl Parameters for Mlp {
    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, Vec<usize>, &'a [f64])>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.tensors(&join(prefix, &i.to_string()), out);
        }
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        for l in &mut self.layers {
            l.tensors_mut(out);
        }
    }
}

pub const BN_EPS: f64 = 1e-5;

/// Batch normalization over the batch axis with running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

/// Batch statistics from a train-mode pass: mean and unbiased variance.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Array1<f64>,
    pub var_unbiased: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    normalized: Array2<f64>,
    inv_std: Array1<f64>,
}

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        Self {
            scale: Array1::ones(width),
            shift: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let w = self.scale.len();
        Self {
            scale: Array1::zeros(w),
            shift: Array1::zeros(w),
            running_mean: Array1::zeros(w),
            running_var: Array1::zeros(w),
        }
    }

    pub fn forward_infer(&self, x: &Array2<f64>) -> Array2<f64> {
        let inv_std = self.running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let mut y = x - &self.running_mean;
        y *= &(&inv_std * &self.scale);
        y += &self.shift;
        y
    }

    pub fn forward_train(&self, x: &Array2<f64>) -> (Array2<f64>, BatchNormCache, BatchStats) {
        let b = x.nrows() as f64;
        let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
        let centered = x - &mean;
        let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / b;
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let normalized = &centered * &inv_std;
        let y = &normalized * &self.scale + &self.shift;
        let var_unbiased = if b > 1.0 { &var * (b / (b - 1.0)) } else { var.clone() };
        (
            y,
            BatchNormCache { normalized, inv_std },
            BatchStats { mean, var_unbiased },
        )
    }

    pub fn backward(&self, cache: &BatchNormCache, dy: &Array2<f64>, grad: &mut BatchNorm) -> Array2<f64> {
        let b = dy.nrows() as f64;
        let dy_xhat = dy * &cache.normalized;
        let sum_dy = dy.sum_axis(Axis(0));
        let sum_dy_xhat = dy_xhat.sum_axis(Axis(0));
        grad.scale += &sum_dy_xhat;
        grad.shift += &sum_dy;
        // dx = scale * inv_std / B * (B dy - sum(dy) - xhat * sum(dy xhat))
        let mut dx = dy * b;
        dx -= &sum_dy;
        dx -= &(&cache.normalized * &sum_dy_xhat);
        dx *= &(&self.scale * &cache.inv_std / b);
        dx
    }

    pub fn update_running(&mut self, stats: &BatchStats, momentum: f64) {
        self.running_mean = &self.running_mean * (1.0 - momentum) + &stats.mean * momentum;
        self.running_var = &self.running_var * (1.0 - momentum) + &stats.var_unbiased * momentum;
    }
}

impl Parameters for BatchNorm {
    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, Vec<usize>, &'a [f64])>) {
        out.push((join(prefix, "scale"), vec![self.scale.len()], self.scale.as_slice().expect("standard layout")));
        out.push((join(prefix, "shift"), vec![self.shift.len()], self.shift.as_slice().expect("standard layout")));
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(self.scale.as_slice_mut().expect("standard layout"));
        out.push(self.shift.as_slice_mut().expect("standard layout"));
    }
}

pub fn hconcat(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[a.view(), b.view()]).expect("equal row counts")
}

pub fn split_cols(x: &Array2<f64>, at: usize) -> (Array2<f64>, Array2<f64>) {
    (x.slice(s![.., ..at]).to_owned(), x.slice(s![.., at..]).to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn numeric_grad(f: &dyn Fn(&Array2<f64>) -> f64, x: &Array2<f64>) -> Array2<f64> {
        let h = 1e-6;
        let mut g = Array2::zeros(x.raw_dim());
        for idx in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[idx] += h;
            xm.as_slice_mut().unwrap()[idx] -= h;
            g.as_slice_mut().unwrap()[idx] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    #[test]
    fn mlp_input_gradient_matches_finite_differences() {
        let mut r = rng::stream(11, 0);
        let mlp = Mlp::new(&[3, 5, 4], true, &mut r);
        let x = Array2::from_shape_fn((4, 3), |(i, j)| (i as f64 - 1.3) * 0.4 + j as f64 * 0.21);
        let w = Array2::from_shape_fn((4, 4), |(i, j)| 0.3 + 0.1 * i as f64 - 0.05 * j as f64);
        let loss = |x: &Array2<f64>| (mlp.forward(&x.view()) * &w).sum();
        let (_, cache) = mlp.forward_cached(&x.view());
        let mut grad = mlp.zeros_like();
        let dx = mlp.backward(&cache, w.clone(), &mut grad, true).unwrap();
        let num = numeric_grad(&loss, &x);
        for (a, b) in dx.iter().zip(num.iter()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn batchnorm_input_gradient_matches_finite_differences() {
        let mut bn = BatchNorm::new(3);
        bn.scale = Array1::from(vec![1.5, -0.7, 0.9]);
        bn.shift = Array1::from(vec![0.1, 0.2, -0.3]);
        let x = Array2::from_shape_fn((5, 3), |(i, j)| ((i * 3 + j) as f64 * 0.77).sin());
        let w = Array2::from_shape_fn((5, 3), |(i, j)| ((i + 2 * j) as f64 * 0.31).cos());
        let loss = |x: &Array2<f64>| (bn.forward_train(x).0 * &w).sum();
        let (_, cache, _) = bn.forward_train(&x);
        let mut grad = bn.zeros_like();
        let dx = bn.backward(&cache, &w, &mut grad);
        let num = numeric_grad(&loss, &x);
        for (a, b) in dx.iter().zip(num.iter()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn batchnorm_infer_uses_running_stats() {
        let bn = BatchNorm::new(2);
        let x = Array2::from_shape_vec((1, 2), vec![2.0, -1.0]).unwrap();
        let y = bn.forward_infer(&x);
        let s = 1.0 / (1.0 + BN_EPS).sqrt();
        assert_eq!(y[[0, 0]], 2.0 * s);
        assert_eq!(y[[0, 1]], -s);
    }

    #[test]
    fn running_variance_stays_positive() {
        let mut bn = BatchNorm::new(2);
        let x = Array2::from_shape_vec((3, 2), vec![1.0, 5.0, 1.0, 5.0, 1.0, 5.0]).unwrap();
        for _ in 0..50 {
            let (_, _, stats) = bn.forward_train(&x);
            bn.update_running(&stats, 0.1);
        }
        assert!(bn.running_var.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn relu_truncates() {
        let x = Array2::from_shape_vec((1, 3), vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).into_raw_vec_and_offset().0, vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }
}

//! Dense numeric core: matrices, the gate nonlinearities, softmax and
//! cross-entropy, dropout, initialisation, Adam and finite-difference
//! gradient checking.
//!
//! Every layer elsewhere in the crate ships a hand-written forward and
//! backward pass built from these pieces; there is no autodiff graph.

mod adam;
mod gradcheck;
mod mat;
mod rng;

use alloc::string::String;
use alloc::vec::Vec;

pub use adam::{AdamConfig, OptimizerState};
pub use gradcheck::{grad_check, grad_check_params, GRAD_CHECK_STEP};
pub use mat::{add, axpy, concat, cosine, dot, hadamard, norm, Mat};
pub use rng::Rng;

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Elementwise logistic function, computed without overflow for large `|x|`.
pub fn sigmoid(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| sigmoid_scalar(v)).collect()
}

pub fn tanh_v(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| libm::tanh(v)).collect()
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + libm::log(x.iter().map(|&v| libm::exp(v - max)).sum::<f64>())
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| libm::exp(v - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate().skip(1) {
        if v > x[best] {
            best = i;
        }
    }
    best
}

/// Softmax cross-entropy for one example.
///
/// Returns the loss `-ln p[target]` and `d loss / d logits = p - onehot`,
/// scaled by `weight`.
pub fn softmax_cross_entropy(logits: &[f64], target: usize, weight: f64) -> (f64, Vec<f64>) {
    let mut probs = softmax(logits);
    let loss = -(log_sum_exp_shifted(logits, target)) * weight;
    probs[target] -= 1.0;
    probs.iter_mut().for_each(|p| *p *= weight);
    (loss, probs)
}

fn log_sum_exp_shifted(logits: &[f64], target: usize) -> f64 {
    logits[target] - log_sum_exp(logits)
}

/// Inverted-dropout keep mask: entries are `0` with probability `rate`,
/// `1 / (1 - rate)` otherwise. In inference the mask is all ones.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut Rng, training: bool) -> Vec<f64> {
    debug_assert!((0.0..1.0).contains(&rate));
    if !training || rate == 0.0 {
        return alloc::vec![1.0; len];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.bernoulli(rate) { 0.0 } else { keep })
        .collect()
}

pub fn dropout_apply(x: &[f64], rate: f64, rng: &mut Rng, training: bool) -> Vec<f64> {
    if !training || rate == 0.0 {
        return x.to_vec();
    }
    hadamard(x, &dropout_mask(x.len(), rate, rng, training))
}

/// A bundle of trainable tensors.
///
/// `named_params` and `params_mut` must enumerate tensors in the same order;
/// Adam state and checkpoints rely on it.
pub trait Parameterized {
    fn named_params(&self) -> Vec<(String, &Mat)>;
    fn params_mut(&mut self) -> Vec<&mut Mat>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.fill(0.0);
        }
    }

    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, m)| m.len()).sum()
    }

    /// Element-wise `self += other`; both must share a layout.
    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let src: Vec<&Mat> = other.named_params().into_iter().map(|(_, m)| m).collect();
        for (dst, s) in self.params_mut().into_iter().zip(src) {
            dst.add_assign(s);
        }
    }

    fn scale_all(&mut self, factor: f64) {
        for p in self.params_mut() {
            p.scale(factor);
        }
    }
}

/// A zero-filled copy with the same layout, used as a gradient buffer.
pub fn zeros_like<P: Parameterized + Clone>(params: &P) -> P {
    let mut g = params.clone();
    g.zero_grad();
    g
}

pub(crate) fn prefixed(prefix: &str, name: &str) -> String {
    let mut s = String::with_capacity(prefix.len() + name.len() + 1);
    if !prefix.is_empty() {
        s.push_str(prefix);
        s.push('.');
    }
    s.push_str(name);
    s
}

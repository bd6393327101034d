use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::numerics::{dot, prefixed, Mat, Parameterized, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => libm::tanh(x),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// A bank of 1-D convolution filters of one width, followed by an
/// activation and max-pooling over time. `weight` is
/// `maps x (width * input_dim)`, acting on the flattened window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvBank {
    pub width: usize,
    pub activation: Activation,
    pub weight: Mat,
    pub bias: Mat,
}

#[derive(Clone, Debug)]
pub struct ConvCache {
    /// Window start that won the max-pool, per map.
    argmax: Vec<usize>,
    pre: Vec<f64>,
    post: Vec<f64>,
}

impl ConvBank {
    pub fn new(width: usize, input_dim: usize, maps: usize, activation: Activation, rng: &mut Rng) -> Self {
        ConvBank {
            width,
            activation,
            weight: Mat::xavier(maps, width * input_dim, rng),
            bias: Mat::zeros(maps, 1),
        }
    }

    pub fn maps(&self) -> usize {
        self.weight.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols() / self.width
    }

    /// `seq` must already be padded to at least `width` positions.
    pub fn forward(&self, seq: &[Vec<f64>]) -> (Vec<f64>, ConvCache) {
        debug_assert!(seq.len() >= self.width, "conv input shorter than filter width");
        let maps = self.maps();
        let dim = self.input_dim();
        let positions = seq.len() + 1 - self.width;
        let mut best = vec![f64::NEG_INFINITY; maps];
        let mut cache = ConvCache {
            argmax: vec![0; maps],
            pre: vec![0.0; maps],
            post: vec![0.0; maps],
        };
        for p in 0..positions {
            for m in 0..maps {
                let row = self.weight.row(m);
                let mut pre = self.bias.data()[m];
                for k in 0..self.width {
                    pre += dot(&row[k * dim..(k + 1) * dim], &seq[p + k]);
                }
                let post = self.activation.apply(pre);
                if post > best[m] {
                    best[m] = post;
                    cache.argmax[m] = p;
                    cache.pre[m] = pre;
                    cache.post[m] = post;
                }
            }
        }
        (best, cache)
    }

    /// Accumulates parameter gradients into `grads` and input gradients into `dseq`.
    pub fn backward(&self, seq: &[Vec<f64>], cache: &ConvCache, dpooled: &[f64], grads: &mut ConvBank, dseq: &mut [Vec<f64>]) {
        let dim = self.input_dim();
        for m in 0..self.maps() {
            let dpre = dpooled[m] * self.activation.derivative(cache.pre[m], cache.post[m]);
            if dpre == 0.0 {
                continue;
            }
            let p = cache.argmax[m];
            grads.bias.data_mut()[m] += dpre;
            let row = self.weight.row(m);
            let grow = grads.weight.row_mut(m);
            for k in 0..self.width {
                for d in 0..dim {
                    grow[k * dim + d] += dpre * seq[p + k][d];
                    dseq[p + k][d] += dpre * row[k * dim + d];
                }
            }
        }
    }
}

/// Pads `seq` at the end with zero vectors up to `min_len` positions.
pub fn pad_to(seq: &[Vec<f64>], min_len: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut out = seq.to_vec();
    while out.len() < min_len {
        out.push(vec![0.0; dim]);
    }
    out
}

pub(crate) fn banks_named<'a>(banks: &'a [ConvBank], prefix: &str) -> Vec<(String, &'a Mat)> {
    let mut out = Vec::new();
    for (i, b) in banks.iter().enumerate() {
        let p = prefixed(prefix, &format!("conv{i}"));
        out.push((prefixed(&p, "weight"), &b.weight));
        out.push((prefixed(&p, "bias"), &b.bias));
    }
    out
}

pub(crate) fn banks_mut(banks: &mut [ConvBank]) -> Vec<&mut Mat> {
    let mut out = Vec::new();
    for b in banks.iter_mut() {
        out.push(&mut b.weight);
        out.push(&mut b.bias);
    }
    out
}

impl Parameterized for ConvBank {
    fn named_params(&self) -> Vec<(String, &Mat)> {
        vec![(String::from("weight"), &self.weight), (String::from("bias"), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<&mut Mat> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check_params, zeros_like};

    #[test]
    fn conv_gradients() {
        let mut rng = Rng::new(3);
        for act in [Activation::Identity, Activation::Tanh, Activation::Relu] {
            let mut bank = ConvBank::new(3, 4, 5, act, &mut rng);
            bank.bias = Mat::uniform(5, 1, 0.1, 0.5, &mut rng);
            let seq: Vec<Vec<f64>> = (0..7).map(|_| (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
            let w: Vec<f64> = (0..5).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let (_, cache) = bank.forward(&seq);
            let mut grads = zeros_like(&bank);
            let mut dseq = vec![vec![0.0; 4]; 7];
            bank.backward(&seq, &cache, &w, &mut grads, &mut dseq);
            let err = grad_check_params(&bank, &grads, |b| dot(&b.forward(&seq).0, &w), 200, &mut rng).unwrap();
            assert!(err < 1e-4, "{act:?}: {err}");
        }
    }
}

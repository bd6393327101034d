use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::numerics::{axpy, concat, prefixed, sigmoid_scalar, Mat, Parameterized, Rng};
use crate::{Error, Result};

/// Gate weights of one LSTM direction. Each `W_*` is `hidden x (hidden + input)`
/// and multiplies the concatenation `[h_{t-1}, x_t]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub w_i: Mat,
    pub w_f: Mat,
    pub w_o: Mat,
    pub w_g: Mat,
    pub b_i: Mat,
    pub b_f: Mat,
    pub b_o: Mat,
    pub b_g: Mat,
}

impl LstmParams {
    /// Glorot weights, zero biases, forget-gate bias 1.
    pub fn new(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let cols = hidden + input;
        LstmParams {
            w_i: Mat::xavier(hidden, cols, rng),
            w_f: Mat::xavier(hidden, cols, rng),
            w_o: Mat::xavier(hidden, cols, rng),
            w_g: Mat::xavier(hidden, cols, rng),
            b_i: Mat::zeros(hidden, 1),
            b_f: Mat::filled(hidden, 1, 1.0),
            b_o: Mat::zeros(hidden, 1),
            b_g: Mat::zeros(hidden, 1),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        let cols = hidden + input;
        LstmParams {
            w_i: Mat::zeros(hidden, cols),
            w_f: Mat::zeros(hidden, cols),
            w_o: Mat::zeros(hidden, cols),
            w_g: Mat::zeros(hidden, cols),
            b_i: Mat::zeros(hidden, 1),
            b_f: Mat::zeros(hidden, 1),
            b_o: Mat::zeros(hidden, 1),
            b_g: Mat::zeros(hidden, 1),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_i.rows()
    }

    pub fn input(&self) -> usize {
        self.w_i.cols() - self.w_i.rows()
    }

    fn check(&self, x: &[f64], h: &[f64], c: &[f64]) -> Result<()> {
        let hidden = self.hidden();
        if x.len() != self.input() || h.len() != hidden || c.len() != hidden {
            return Err(Error::Dimension(format!(
                "lstm expects input {} / hidden {hidden}, got x={} h={} c={}",
                self.input(),
                x.len(),
                h.len(),
                c.len()
            )));
        }
        Ok(())
    }
}

impl Parameterized for LstmParams {
    fn named_params(&self) -> Vec<(String, &Mat)> {
        vec![
            (String::from("w_i"), &self.w_i),
            (String::from("w_f"), &self.w_f),
            (String::from("w_o"), &self.w_o),
            (String::from("w_g"), &self.w_g),
            (String::from("b_i"), &self.b_i),
            (String::from("b_f"), &self.b_f),
            (String::from("b_o"), &self.b_o),
            (String::from("b_g"), &self.b_g),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Mat> {
        vec![
            &mut self.w_i,
            &mut self.w_f,
            &mut self.w_o,
            &mut self.w_g,
            &mut self.b_i,
            &mut self.b_f,
            &mut self.b_o,
            &mut self.b_g,
        ]
    }
}

/// Activations of one step, kept for backpropagation through time.
#[derive(Clone, Debug)]
pub struct LstmStepCache {
    z: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    tanh_c: Vec<f64>,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

fn gate(w: &Mat, b: &Mat, z: &[f64]) -> Vec<f64> {
    let mut pre = w.matvec(z);
    axpy(&mut pre, 1.0, b.data());
    pre
}

#[cfg(not(feature = "strict-eq3"))]
fn output_gate_pre(p: &LstmParams, z: &[f64], _h_prev: &[f64]) -> Vec<f64> {
    gate(&p.w_o, &p.b_o, z)
}

// o_t = sigma(W_o [h_{t-1} + b_o]): only the recurrent block of W_o is used.
#[cfg(feature = "strict-eq3")]
fn output_gate_pre(p: &LstmParams, _z: &[f64], h_prev: &[f64]) -> Vec<f64> {
    let shifted: Vec<f64> = h_prev.iter().zip(p.b_o.data()).map(|(h, b)| h + b).collect();
    p.w_o.matvec_cols(0, &shifted)
}

pub(crate) fn step_cached(x: &[f64], h_prev: &[f64], c_prev: &[f64], p: &LstmParams) -> LstmStepCache {
    let z = concat(&[h_prev, x]);
    let i: Vec<f64> = gate(&p.w_i, &p.b_i, &z).into_iter().map(sigmoid_scalar).collect();
    let f: Vec<f64> = gate(&p.w_f, &p.b_f, &z).into_iter().map(sigmoid_scalar).collect();
    let o: Vec<f64> = output_gate_pre(p, &z, h_prev).into_iter().map(sigmoid_scalar).collect();
    let g: Vec<f64> = gate(&p.w_g, &p.b_g, &z).into_iter().map(libm::tanh).collect();
    let c: Vec<f64> = (0..g.len()).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|&v| libm::tanh(v)).collect();
    let h: Vec<f64> = o.iter().zip(&tanh_c).map(|(o, t)| o * t).collect();
    LstmStepCache {
        z,
        c_prev: c_prev.to_vec(),
        i,
        f,
        o,
        g,
        tanh_c,
        h,
        c,
    }
}

/// One LSTM step: returns `(h_t, c_t)`.
pub fn lstm_cell_step(x: &[f64], h_prev: &[f64], c_prev: &[f64], params: &LstmParams) -> Result<(Vec<f64>, Vec<f64>)> {
    params.check(x, h_prev, c_prev)?;
    let cache = step_cached(x, h_prev, c_prev, params);
    Ok((cache.h, cache.c))
}

/// Runs the cell over `xs` from zero initial state.
pub fn lstm_forward(xs: &[Vec<f64>], params: &LstmParams) -> Result<Vec<LstmStepCache>> {
    let hidden = params.hidden();
    let mut h = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    let mut caches = Vec::with_capacity(xs.len());
    for x in xs {
        params.check(x, &h, &c)?;
        let step = step_cached(x, &h, &c, params);
        h.clone_from(&step.h);
        c.clone_from(&step.c);
        caches.push(step);
    }
    Ok(caches)
}

/// Backpropagation through time.
///
/// `dhs[t]` is the loss gradient w.r.t. `h_t`. Parameter gradients are
/// accumulated into `grads`; the returned vectors are gradients w.r.t. each
/// input `x_t`.
pub fn lstm_backward(params: &LstmParams, caches: &[LstmStepCache], dhs: &[Vec<f64>], grads: &mut LstmParams) -> Vec<Vec<f64>> {
    let hidden = params.hidden();
    let mut dh_next = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];
    let mut dxs = vec![Vec::new(); caches.len()];
    for t in (0..caches.len()).rev() {
        let s = &caches[t];
        let mut d_pre_i = vec![0.0; hidden];
        let mut d_pre_f = vec![0.0; hidden];
        let mut d_pre_o = vec![0.0; hidden];
        let mut d_pre_g = vec![0.0; hidden];
        for k in 0..hidden {
            let dh = dhs[t][k] + dh_next[k];
            let dc = dc_next[k] + dh * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
            d_pre_o[k] = dh * s.tanh_c[k] * s.o[k] * (1.0 - s.o[k]);
            d_pre_i[k] = dc * s.g[k] * s.i[k] * (1.0 - s.i[k]);
            d_pre_g[k] = dc * s.i[k] * (1.0 - s.g[k] * s.g[k]);
            d_pre_f[k] = dc * s.c_prev[k] * s.f[k] * (1.0 - s.f[k]);
            dc_next[k] = dc * s.f[k];
        }
        grads.w_i.add_outer(&d_pre_i, &s.z);
        grads.w_f.add_outer(&d_pre_f, &s.z);
        grads.w_g.add_outer(&d_pre_g, &s.z);
        grads.b_i.add_to_column(&d_pre_i);
        grads.b_f.add_to_column(&d_pre_f);
        grads.b_g.add_to_column(&d_pre_g);

        let mut dz = params.w_i.matvec_t(&d_pre_i);
        axpy(&mut dz, 1.0, &params.w_f.matvec_t(&d_pre_f));
        axpy(&mut dz, 1.0, &params.w_g.matvec_t(&d_pre_g));
        backward_output_gate(params, s, &d_pre_o, grads, &mut dz);

        dh_next.copy_from_slice(&dz[..hidden]);
        dxs[t] = dz[hidden..].to_vec();
    }
    dxs
}

#[cfg(not(feature = "strict-eq3"))]
fn backward_output_gate(params: &LstmParams, s: &LstmStepCache, d_pre_o: &[f64], grads: &mut LstmParams, dz: &mut [f64]) {
    grads.w_o.add_outer(d_pre_o, &s.z);
    grads.b_o.add_to_column(d_pre_o);
    axpy(dz, 1.0, &params.w_o.matvec_t(d_pre_o));
}

#[cfg(feature = "strict-eq3")]
fn backward_output_gate(params: &LstmParams, s: &LstmStepCache, d_pre_o: &[f64], grads: &mut LstmParams, dz: &mut [f64]) {
    let hidden = params.hidden();
    let shifted: Vec<f64> = s.z[..hidden].iter().zip(params.b_o.data()).map(|(h, b)| h + b).collect();
    grads.w_o.add_outer_at(d_pre_o, 0, &shifted);
    let upstream: Vec<f64> = (0..hidden)
        .map(|c| (0..hidden).map(|r| params.w_o.get(r, c) * d_pre_o[r]).sum())
        .collect();
    grads.b_o.add_to_column(&upstream);
    axpy(&mut dz[..hidden], 1.0, &upstream);
}

/// Forward and backward LSTMs over the same sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiLstmParams {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

impl BiLstmParams {
    pub fn new(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        BiLstmParams {
            fwd: LstmParams::new(input, hidden, &mut rng.split("fwd")),
            bwd: LstmParams::new(input, hidden, &mut rng.split("bwd")),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        BiLstmParams {
            fwd: LstmParams::zeros(input, hidden),
            bwd: LstmParams::zeros(input, hidden),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.fwd.hidden() + self.bwd.hidden()
    }

    pub fn forward(&self, seq: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, BiLstmCache)> {
        if seq.is_empty() {
            return Err(Error::Empty("bilstm input sequence"));
        }
        let fwd = lstm_forward(seq, &self.fwd)?;
        let reversed: Vec<Vec<f64>> = seq.iter().rev().cloned().collect();
        let bwd = lstm_forward(&reversed, &self.bwd)?;
        let n = seq.len();
        let out = (0..n).map(|t| concat(&[&fwd[t].h, &bwd[n - 1 - t].h])).collect();
        Ok((out, BiLstmCache { fwd, bwd }))
    }

    /// Accumulates parameter gradients and returns input gradients.
    pub fn backward(&self, cache: &BiLstmCache, douts: &[Vec<f64>], grads: &mut BiLstmParams) -> Vec<Vec<f64>> {
        let hf = self.fwd.hidden();
        let n = douts.len();
        let dh_f: Vec<Vec<f64>> = douts.iter().map(|d| d[..hf].to_vec()).collect();
        let dh_b: Vec<Vec<f64>> = douts.iter().rev().map(|d| d[hf..].to_vec()).collect();
        let mut dx = lstm_backward(&self.fwd, &cache.fwd, &dh_f, &mut grads.fwd);
        let dx_b = lstm_backward(&self.bwd, &cache.bwd, &dh_b, &mut grads.bwd);
        for t in 0..n {
            axpy(&mut dx[t], 1.0, &dx_b[n - 1 - t]);
        }
        dx
    }

    /// Final forward state ∥ final backward state (the backward LSTM ends at position 0).
    pub fn final_states(cache: &BiLstmCache) -> Vec<f64> {
        let f = &cache.fwd.last().expect("non-empty").h;
        let b = &cache.bwd.last().expect("non-empty").h;
        concat(&[f, b])
    }

    /// Backward of [`Self::final_states`].
    pub fn backward_final(&self, cache: &BiLstmCache, d_final: &[f64], grads: &mut BiLstmParams) -> Vec<Vec<f64>> {
        let hf = self.fwd.hidden();
        let n = cache.fwd.len();
        let mut douts = vec![vec![0.0; self.output_dim()]; n];
        douts[n - 1][..hf].copy_from_slice(&d_final[..hf]);
        douts[0][hf..].copy_from_slice(&d_final[hf..]);
        self.backward(cache, &douts, grads)
    }
}

impl Parameterized for BiLstmParams {
    fn named_params(&self) -> Vec<(String, &Mat)> {
        let mut out: Vec<(String, &Mat)> = self
            .fwd
            .named_params()
            .into_iter()
            .map(|(n, m)| (prefixed("fwd", &n), m))
            .collect();
        out.extend(self.bwd.named_params().into_iter().map(|(n, m)| (prefixed("bwd", &n), m)));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = self.fwd.params_mut();
        out.extend(self.bwd.params_mut());
        out
    }
}

#[derive(Clone, Debug)]
pub struct BiLstmCache {
    fwd: Vec<LstmStepCache>,
    bwd: Vec<LstmStepCache>,
}

/// `output[t] = forward h_t ∥ backward h_t`.
pub fn bilstm_encode(sequence: &[Vec<f64>], fwd: &LstmParams, bwd: &LstmParams) -> Result<Vec<Vec<f64>>> {
    let params = BiLstmParams {
        fwd: fwd.clone(),
        bwd: bwd.clone(),
    };
    Ok(params.forward(sequence)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check_params, zeros_like};

    fn random_seq(rng: &mut Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect()
    }

    #[test]
    fn zero_params_zero_state() {
        let p = LstmParams::zeros(3, 2);
        let (h, c) = lstm_cell_step(&[1.0, -2.0, 0.5], &[0.0; 2], &[0.0; 2], &p).unwrap();
        assert_eq!(h, vec![0.0; 2]);
        assert_eq!(c, vec![0.0; 2]);
    }

    #[test]
    fn closed_form_hidden_one() {
        let p = LstmParams::zeros(1, 1);
        let (h, c) = lstm_cell_step(&[0.7], &[0.0], &[1.0], &p).unwrap();
        assert!((c[0] - 0.5).abs() < 1e-12);
        assert!((h[0] - 0.2310585786).abs() < 1e-9, "{}", h[0]);
    }

    #[test]
    fn dimension_mismatch() {
        let p = LstmParams::zeros(3, 2);
        assert!(lstm_cell_step(&[1.0], &[0.0; 2], &[0.0; 2], &p).is_err());
    }

    #[test]
    fn hidden_state_bounded() {
        let mut rng = Rng::new(5);
        let p = LstmParams::new(4, 6, &mut rng);
        let caches = lstm_forward(&random_seq(&mut rng, 12, 4), &p).unwrap();
        for s in &caches {
            assert!(s.h.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn saturated_gates_conserve_cell() {
        let mut rng = Rng::new(9);
        let mut p = LstmParams::new(3, 4, &mut rng);
        p.w_i.fill(0.0);
        p.w_f.fill(0.0);
        p.b_i.fill(-50.0);
        p.b_f.fill(50.0);
        let c0 = vec![0.3, -0.8, 1.2, 0.0];
        let mut h = vec![0.0; 4];
        let mut c = c0.clone();
        for x in random_seq(&mut rng, 10, 3) {
            let (h2, c2) = lstm_cell_step(&x, &h, &c, &p).unwrap();
            h = h2;
            c = c2;
        }
        for (a, b) in c.iter().zip(&c0) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn bilstm_length_and_reversal_symmetry() {
        let mut rng = Rng::new(11);
        let bi = BiLstmParams::new(3, 4, &mut rng);
        let seq = random_seq(&mut rng, 5, 3);
        let out = bilstm_encode(&seq, &bi.fwd, &bi.bwd).unwrap();
        assert_eq!(out.len(), 5);
        let rev: Vec<Vec<f64>> = seq.iter().rev().cloned().collect();
        let out_rev = bilstm_encode(&rev, &bi.bwd, &bi.fwd).unwrap();
        for t in 0..5 {
            let a = &out[t];
            let b = &out_rev[4 - t];
            for k in 0..4 {
                assert!((a[k] - b[4 + k]).abs() < 1e-12);
                assert!((a[4 + k] - b[k]).abs() < 1e-12);
            }
        }
        assert!(bilstm_encode(&[], &bi.fwd, &bi.bwd).is_err());
    }

    #[test]
    fn bilstm_zero_params_zero_output() {
        let bi = BiLstmParams::zeros(2, 3);
        let out = bilstm_encode(&[vec![1.0, 2.0]], &bi.fwd, &bi.bwd).unwrap();
        assert_eq!(out, vec![vec![0.0; 6]]);
    }

    // sum_t w_t · h_t for a fixed random projection.
    fn projected_loss(bi: &BiLstmParams, seq: &[Vec<f64>], proj: &[Vec<f64>]) -> f64 {
        let (out, _) = bi.forward(seq).unwrap();
        out.iter().zip(proj).map(|(h, w)| crate::numerics::dot(h, w)).sum()
    }

    #[test]
    fn bptt_gradients_match_finite_differences() {
        let mut rng = Rng::new(21);
        let bi = BiLstmParams::new(3, 4, &mut rng);
        let seq = random_seq(&mut rng, 8, 3);
        let proj = random_seq(&mut rng, 8, 8);
        let (_, cache) = bi.forward(&seq).unwrap();
        let mut grads = zeros_like(&bi);
        let dx = bi.backward(&cache, &proj, &mut grads);
        let err = grad_check_params(&bi, &grads, |p| projected_loss(p, &seq, &proj), 200, &mut rng).unwrap();
        assert!(err < 1e-4, "parameter gradient error {err}");

        let flat: Vec<f64> = seq.concat();
        let dflat: Vec<f64> = dx.concat();
        let err = crate::numerics::grad_check(
            |x| {
                let s: Vec<Vec<f64>> = x.chunks(3).map(|c| c.to_vec()).collect();
                projected_loss(&bi, &s, &proj)
            },
            &flat,
            &dflat,
            None,
        )
        .unwrap();
        assert!(err < 1e-4, "input gradient error {err}");
    }
}

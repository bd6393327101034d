//! Linear-chain CRF over a small tag set with virtual START/STOP states.
//!
//! `transitions` is `(K + 2) x (K + 2)` indexed `[from][to]`; row `K` is
//! START and column `K + 1` is STOP. A path `y_1..y_T` scores
//! `trans[START][y_1] + Σ emit[t][y_t] + Σ trans[y_t][y_{t+1}] + trans[y_T][STOP]`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::numerics::{log_sum_exp, Mat, Parameterized, Rng};
use crate::{Error, Result};

/// `T x K` emission scores.
pub type EmissionMatrix = Mat;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrfParams {
    pub transitions: Mat,
    /// Transitions excluded from every path, as `(from, to)` pairs.
    /// Stored separately so that `transitions` stays finite.
    #[serde(default)]
    pub forbidden: Vec<(usize, usize)>,
}

impl CrfParams {
    pub fn zeros(tags: usize) -> Self {
        CrfParams {
            transitions: Mat::zeros(tags + 2, tags + 2),
            forbidden: Vec::new(),
        }
    }

    pub fn random(tags: usize, scale: f64, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(tags);
        p.transitions = Mat::uniform(tags + 2, tags + 2, -scale, scale, rng);
        p
    }

    pub fn tags(&self) -> usize {
        self.transitions.rows() - 2
    }

    pub fn start(&self) -> usize {
        self.tags()
    }

    pub fn stop(&self) -> usize {
        self.tags() + 1
    }

    /// Forbids `O -> I` and `START -> I` under the fixed tag order `B, I, O`.
    pub fn with_hard_bio(mut self) -> Self {
        let (b_i, o) = (1, 2);
        self.forbidden = vec![(o, b_i), (self.start(), b_i)];
        self
    }

    #[inline]
    fn score(&self, from: usize, to: usize) -> f64 {
        if !self.forbidden.is_empty() && self.forbidden.contains(&(from, to)) {
            f64::NEG_INFINITY
        } else {
            self.transitions.get(from, to)
        }
    }

    fn check(&self, emissions: &EmissionMatrix) -> Result<()> {
        if emissions.rows() == 0 {
            return Err(Error::Empty("crf needs at least one position"));
        }
        if emissions.cols() != self.tags() {
            return Err(Error::Dimension(alloc::format!(
                "emissions have {} columns, crf has {} tags",
                emissions.cols(),
                self.tags()
            )));
        }
        Ok(())
    }

    /// Score of one complete tag path.
    pub fn path_score(&self, emissions: &EmissionMatrix, path: &[usize]) -> f64 {
        let mut s = self.score(self.start(), path[0]);
        for (t, &y) in path.iter().enumerate() {
            s += emissions.get(t, y);
            if t + 1 < path.len() {
                s += self.score(y, path[t + 1]);
            }
        }
        s + self.score(path[path.len() - 1], self.stop())
    }
}

impl Parameterized for CrfParams {
    fn named_params(&self) -> Vec<(String, &Mat)> {
        vec![(String::from("transitions"), &self.transitions)]
    }

    fn params_mut(&mut self) -> Vec<&mut Mat> {
        vec![&mut self.transitions]
    }
}

/// Forward log-scores `alpha[t][k]` (including emissions at `t`).
fn forward(emissions: &EmissionMatrix, params: &CrfParams) -> Vec<Vec<f64>> {
    let (t_len, k) = (emissions.rows(), params.tags());
    let mut alpha = vec![vec![0.0; k]; t_len];
    for y in 0..k {
        alpha[0][y] = params.score(params.start(), y) + emissions.get(0, y);
    }
    let mut buf = vec![0.0; k];
    for t in 1..t_len {
        for y in 0..k {
            for (prev, b) in buf.iter_mut().enumerate() {
                *b = alpha[t - 1][prev] + params.score(prev, y);
            }
            alpha[t][y] = log_sum_exp(&buf) + emissions.get(t, y);
        }
    }
    alpha
}

/// Backward log-scores `beta[t][k]` (excluding emissions at `t`).
fn backward(emissions: &EmissionMatrix, params: &CrfParams) -> Vec<Vec<f64>> {
    let (t_len, k) = (emissions.rows(), params.tags());
    let mut beta = vec![vec![0.0; k]; t_len];
    for y in 0..k {
        beta[t_len - 1][y] = params.score(y, params.stop());
    }
    let mut buf = vec![0.0; k];
    for t in (0..t_len - 1).rev() {
        for y in 0..k {
            for (next, b) in buf.iter_mut().enumerate() {
                *b = params.score(y, next) + emissions.get(t + 1, next) + beta[t + 1][next];
            }
            beta[t][y] = log_sum_exp(&buf);
        }
    }
    beta
}

fn final_terms(alpha_last: &[f64], params: &CrfParams) -> Vec<f64> {
    alpha_last
        .iter()
        .enumerate()
        .map(|(y, a)| a + params.score(y, params.stop()))
        .collect()
}

/// `log Σ_paths exp(score)`, by the forward algorithm in log space.
pub fn crf_log_partition(emissions: &EmissionMatrix, params: &CrfParams) -> Result<f64> {
    params.check(emissions)?;
    let alpha = forward(emissions, params);
    Ok(log_sum_exp(&final_terms(&alpha[alpha.len() - 1], params)))
}

/// Highest-scoring path. Ties go to the lowest tag index, both for the final
/// tag and for every back-pointer.
pub fn viterbi_decode(emissions: &EmissionMatrix, params: &CrfParams) -> Result<(Vec<usize>, f64)> {
    params.check(emissions)?;
    let (t_len, k) = (emissions.rows(), params.tags());
    let mut delta = vec![vec![0.0; k]; t_len];
    let mut back = vec![vec![0usize; k]; t_len];
    for y in 0..k {
        delta[0][y] = params.score(params.start(), y) + emissions.get(0, y);
    }
    for t in 1..t_len {
        for y in 0..k {
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for prev in 0..k {
                let s = delta[t - 1][prev] + params.score(prev, y);
                if s > best_score {
                    best_score = s;
                    best = prev;
                }
            }
            delta[t][y] = best_score + emissions.get(t, y);
            back[t][y] = best;
        }
    }
    let finals = final_terms(&delta[t_len - 1], params);
    let mut last = 0;
    for y in 1..k {
        if finals[y] > finals[last] {
            last = y;
        }
    }
    let score = finals[last];
    let mut path = vec![0; t_len];
    path[t_len - 1] = last;
    for t in (1..t_len).rev() {
        path[t - 1] = back[t][path[t]];
    }
    Ok((path, score))
}

/// Per-position tag marginals `P(y_t = k)`.
pub fn crf_marginals(emissions: &EmissionMatrix, params: &CrfParams) -> Result<Vec<Vec<f64>>> {
    params.check(emissions)?;
    let alpha = forward(emissions, params);
    let beta = backward(emissions, params);
    let log_z = log_sum_exp(&final_terms(&alpha[alpha.len() - 1], params));
    Ok(alpha
        .iter()
        .zip(&beta)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| libm::exp(x + y - log_z)).collect())
        .collect())
}

/// Result of [`crf_nll_and_grad`].
#[derive(Clone, Debug)]
pub struct CrfLoss {
    pub nll: f64,
    pub d_emissions: Mat,
    pub d_transitions: Mat,
}

/// Negative log-likelihood of `gold` and its gradients: expected feature
/// counts under the model minus the gold path's counts.
pub fn crf_nll_and_grad(emissions: &EmissionMatrix, gold: &[usize], params: &CrfParams) -> Result<CrfLoss> {
    params.check(emissions)?;
    let (t_len, k) = (emissions.rows(), params.tags());
    if gold.len() != t_len {
        return Err(Error::Dimension(alloc::format!(
            "{} gold tags for {t_len} positions",
            gold.len()
        )));
    }
    if let Some(&bad) = gold.iter().find(|&&y| y >= k) {
        return Err(Error::TagOutOfRange { tag: bad, count: k });
    }
    let alpha = forward(emissions, params);
    let beta = backward(emissions, params);
    let log_z = log_sum_exp(&final_terms(&alpha[t_len - 1], params));
    let nll = log_z - params.path_score(emissions, gold);

    let mut d_em = Mat::zeros(t_len, k);
    let mut d_tr = Mat::zeros(k + 2, k + 2);
    for t in 0..t_len {
        for y in 0..k {
            d_em.set(t, y, libm::exp(alpha[t][y] + beta[t][y] - log_z));
        }
    }
    for y in 0..k {
        d_tr.add_at(params.start(), y, d_em.get(0, y));
        d_tr.add_at(y, params.stop(), d_em.get(t_len - 1, y));
    }
    for t in 0..t_len - 1 {
        for a in 0..k {
            for b in 0..k {
                let s = params.score(a, b);
                if s == f64::NEG_INFINITY {
                    continue;
                }
                let p = libm::exp(alpha[t][a] + s + emissions.get(t + 1, b) + beta[t + 1][b] - log_z);
                d_tr.add_at(a, b, p);
            }
        }
    }
    // Subtract gold counts.
    d_tr.add_at(params.start(), gold[0], -1.0);
    d_tr.add_at(gold[t_len - 1], params.stop(), -1.0);
    for t in 0..t_len {
        d_em.add_at(t, gold[t], -1.0);
        if t + 1 < t_len {
            d_tr.add_at(gold[t], gold[t + 1], -1.0);
        }
    }
    Ok(CrfLoss {
        nll,
        d_emissions: d_em,
        d_transitions: d_tr,
    })
}

/// Exhaustive enumeration of all `K^T` paths: `(log partition, best path)`.
///
/// The best path is the first maximum in lexicographic order, which matches
/// the Viterbi tie-break. Refuses instances with more than `10^6` paths.
pub fn brute_force_oracle(emissions: &EmissionMatrix, params: &CrfParams) -> Result<(f64, Vec<usize>)> {
    params.check(emissions)?;
    let (t_len, k) = (emissions.rows(), params.tags());
    let paths = (k as u128).checked_pow(t_len as u32).unwrap_or(u128::MAX);
    if paths > 1_000_000 {
        return Err(Error::TooLarge { paths });
    }
    let mut path = vec![0usize; t_len];
    let mut scores = Vec::with_capacity(paths as usize);
    let mut best = (f64::NEG_INFINITY, path.clone());
    loop {
        let s = params.path_score(emissions, &path);
        scores.push(s);
        if s > best.0 {
            best = (s, path.clone());
        }
        // Odometer increment, last position fastest.
        let mut pos = t_len;
        loop {
            if pos == 0 {
                return Ok((log_sum_exp(&scores), best.1));
            }
            pos -= 1;
            path[pos] += 1;
            if path[pos] < k {
                break;
            }
            path[pos] = 0;
        }
    }
}

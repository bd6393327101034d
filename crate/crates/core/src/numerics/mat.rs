use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::Rng;
use crate::{Error, Result};

/// Dense row-major matrix of 64-bit floats.
///
/// Bias vectors are stored as `n x 1` matrices so that every trainable
/// tensor shares one type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    /// A column vector (`n x 1`).
    pub fn column(data: Vec<f64>) -> Self {
        Mat {
            rows: data.len(),
            cols: 1,
            data,
        }
    }

    /// Glorot-uniform initialisation in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn xavier(rows: usize, cols: usize, rng: &mut Rng) -> Self {
        let limit = libm::sqrt(6.0 / (rows + cols).max(1) as f64);
        Self::uniform(rows, cols, -limit, limit, rng)
    }

    pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut Rng) -> Self {
        let data = (0..rows * cols).map(|_| rng.uniform(lo, hi)).collect();
        Mat { rows, cols, data }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Mat {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    #[inline]
    pub fn add_at(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] += value;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self * x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols, "matvec input length");
        self.data
            .chunks_exact(self.cols.max(1))
            .take(self.rows)
            .map(|row| dot(row, x))
            .collect()
    }

    /// `self * x` restricted to the column range `[offset, offset + x.len())`.
    pub fn matvec_cols(&self, offset: usize, x: &[f64]) -> Vec<f64> {
        debug_assert!(offset + x.len() <= self.cols);
        (0..self.rows)
            .map(|r| dot(&self.row(r)[offset..offset + x.len()], x))
            .collect()
    }

    /// `selfᵀ * y`.
    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows, "matvec_t input length");
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            if yr != 0.0 {
                axpy(&mut out, yr, self.row(r));
            }
        }
        out
    }

    /// `self += a bᵀ` where `b` is written into columns `[offset, offset + b.len())`.
    pub fn add_outer_at(&mut self, a: &[f64], offset: usize, b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert!(offset + b.len() <= self.cols);
        for (r, &ar) in a.iter().enumerate() {
            if ar != 0.0 {
                let row = self.row_mut(r);
                axpy(&mut row[offset..offset + b.len()], ar, b);
            }
        }
    }

    /// `self += a bᵀ`.
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        self.add_outer_at(a, 0, b);
    }

    pub fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!(self.shape(), other.shape());
        axpy(&mut self.data, 1.0, &other.data);
    }

    pub fn add_to_column(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.data.len());
        axpy(&mut self.data, 1.0, values);
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`.
#[inline]
pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn hadamard(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

pub fn concat(parts: &[&[f64]]) -> Vec<f64> {
    let mut out = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for p in parts {
        out.extend_from_slice(p);
    }
    out
}

pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let denom = norm(a) * norm(b);
    if denom == 0.0 {
        0.0
    } else {
        dot(a, b) / denom
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_and_transpose_agree() {
        let m = Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(m.matvec(&[1.0, 0.0, -1.0]), vec![-2.0, -2.0]);
        assert_eq!(m.matvec_t(&[1.0, 1.0]), vec![5.0, 7.0, 9.0]);
        assert_eq!(m.matvec_cols(1, &[1.0, 1.0]), vec![5.0, 11.0]);
    }

    #[test]
    fn outer_product_accumulates() {
        let mut m = Mat::zeros(2, 3);
        m.add_outer_at(&[1.0, 2.0], 1, &[3.0, 4.0]);
        assert_eq!(m.data(), &[0.0, 3.0, 4.0, 0.0, 6.0, 8.0]);
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Mat::from_vec(2, 2, vec![1.0]).is_err());
    }
}

//! Small dense linear algebra for the LSTM and the Gaussian process.
//!
//! The shapes involved are tiny (gate matrices are at most 16x24, GP kernels
//! at most 25x25), so everything is a row-major `Vec<f64>` with plain loops.

use crate::rng::Rng;
use crate::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Matrix from row-major data. The data length must equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Matrix with entries drawn independently and uniformly from `[lo, hi)`,
    /// filled in row-major draw order.
    pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut Rng) -> Self {
        let data = (0..rows * cols).map(|_| rng.next_range(lo, hi)).collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    /// Borrow row `r` as a slice.
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Mutably borrow row `r`.
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Flat row-major view of all entries.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Flat mutable row-major view of all entries.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self += scale * other`, entry-wise. Shapes must match.
    pub fn add_scaled(&mut self, other: &Matrix, scale: f64) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape(format!(
                "cannot add {}x{} into {}x{}",
                other.rows, other.cols, self.rows, self.cols
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }
}

/// Dot product of two equal-length slices.
///
/// # Panics
/// Panics in debug builds on length mismatch; callers validate shapes.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Affine map `w x + b`. `w` is `m x n`, `x` has length `n`, `b` length `m`.
pub fn affine(w: &Matrix, x: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if w.cols() != x.len() || w.rows() != b.len() {
        return Err(Error::Shape(format!(
            "affine: weight is {}x{}, input has length {}, bias has length {}",
            w.rows(),
            w.cols(),
            x.len(),
            b.len()
        )));
    }
    Ok((0..w.rows()).map(|r| dot(w.row(r), x) + b[r]).collect())
}

/// Logistic sigmoid `1 / (1 + e^-x)`.
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Element-wise sigmoid.
pub fn sigmoid_vec(xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|&x| sigmoid(x)).collect()
}

/// Element-wise hyperbolic tangent.
pub fn tanh_vec(xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|&x| x.tanh()).collect()
}

/// Inverted-dropout mask: each entry is `0` with probability `rate` and
/// `1 / (1 - rate)` otherwise, so that the masked vector keeps its
/// expectation and inference needs no rescaling. `rate` must be in `[0, 1)`.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    let keep = 1.0 / (1.0 - rate);
    Ok((0..len)
        .map(|_| if rng.next_uniform() < rate { 0.0 } else { keep })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_matches_hand_arithmetic() {
        // [[1, 2], [3, 4]] * [5, 6] + [0.5, -0.5] = [17.5, 38.5]
        let w = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = affine(&w, &[5.0, 6.0], &[0.5, -0.5]).unwrap();
        assert_eq!(y, vec![17.5, 38.5]);
    }

    #[test]
    fn affine_rejects_mismatched_shapes() {
        let w = Matrix::zeros(2, 3);
        assert!(affine(&w, &[1.0, 2.0], &[0.0, 0.0]).is_err());
        assert!(affine(&w, &[1.0, 2.0, 3.0], &[0.0]).is_err());
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn sigmoid_fixed_points() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(2.0) - 0.880_797_077_977_882_3).abs() < 1e-15);
        assert!(sigmoid(40.0) > 1.0 - 1e-15);
        assert!(sigmoid(-40.0) < 1e-15);
    }

    #[test]
    fn sigmoid_symmetry() {
        for i in -20..=20 {
            let x = i as f64 * 0.37;
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn tanh_vec_matches_std() {
        let xs = [-2.0, -0.5, 0.0, 0.5, 2.0];
        let ys = tanh_vec(&xs);
        for (x, y) in xs.iter().zip(&ys) {
            assert_eq!(*y, x.tanh());
        }
    }

    #[test]
    fn uniform_matrix_is_deterministic_and_in_range() {
        let mut a = Rng::new(13);
        let mut b = Rng::new(13);
        let m1 = Matrix::uniform(4, 5, -0.08, 0.08, &mut a);
        let m2 = Matrix::uniform(4, 5, -0.08, 0.08, &mut b);
        assert_eq!(m1, m2);
        assert!(m1.data().iter().all(|&v| (-0.08..0.08).contains(&v)));
    }

    #[test]
    fn dropout_mask_zero_rate_is_identity() {
        let mut rng = Rng::new(1);
        let mask = dropout_mask(8, 0.0, &mut rng).unwrap();
        assert_eq!(mask, vec![1.0; 8]);
    }

    #[test]
    fn dropout_mask_values_and_rate() {
        let mut rng = Rng::new(2);
        let mask = dropout_mask(100_000, 0.4, &mut rng).unwrap();
        let keep = 1.0 / 0.6;
        assert!(mask.iter().all(|&m| m == 0.0 || m == keep));
        let zero_frac = mask.iter().filter(|&&m| m == 0.0).count() as f64 / mask.len() as f64;
        assert!(
            (zero_frac - 0.4).abs() < 0.01,
            "observed drop rate {zero_frac}"
        );
    }

    #[test]
    fn dropout_mask_rejects_bad_rate() {
        let mut rng = Rng::new(3);
        assert!(dropout_mask(4, 1.0, &mut rng).is_err());
        assert!(dropout_mask(4, -0.1, &mut rng).is_err());
    }

    #[test]
    fn add_scaled_accumulates() {
        let mut a = Matrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let b = Matrix::from_vec(1, 3, vec![10.0, 20.0, 30.0]).unwrap();
        a.add_scaled(&b, 0.5).unwrap();
        assert_eq!(a.data(), &[6.0, 12.0, 18.0]);
        assert!(a.add_scaled(&Matrix::zeros(2, 2), 1.0).is_err());
    }
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major tensor of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                len,
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], scale: f64, rng: &mut R) -> Self {
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.gen_range(-scale..=scale)).collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Number of rows when viewed as a matrix (the first dimension).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Number of columns when viewed as a matrix (product of trailing dimensions).
    pub fn cols(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        axpy(1.0, &other.data, &mut self.data);
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    pub fn sum_squares(&self) -> f64 {
        dot(&self.data, &self.data)
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks_a = a.chunks_exact(4);
    let chunks_b = b.chunks_exact(4);
    let tail: f64 = chunks_a
        .remainder()
        .iter()
        .zip(chunks_b.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Index of the largest value; ties go to the lower index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = W x` for a row-major matrix `W` of shape `(out.len(), x.len())`.
pub fn matvec(w: &Tensor, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.cols(), x.len());
    debug_assert_eq!(w.rows(), out.len());
    let c = x.len();
    for (o, row) in out.iter_mut().zip(w.data.chunks_exact(c)) {
        *o = dot(row, x);
    }
}

/// `out = W[rows] x`, restricted to a contiguous block of rows.
pub fn matvec_rows(w: &Tensor, rows: std::ops::Range<usize>, x: &[f64], out: &mut [f64]) {
    let c = w.cols();
    debug_assert_eq!(c, x.len());
    debug_assert_eq!(rows.len(), out.len());
    let block = &w.data[rows.start * c..rows.end * c];
    for (o, row) in out.iter_mut().zip(block.chunks_exact(c)) {
        *o = dot(row, x);
    }
}

/// `out += W^T g`
pub fn matvec_t_acc(w: &Tensor, g: &[f64], out: &mut [f64]) {
    let c = w.cols();
    debug_assert_eq!(c, out.len());
    debug_assert_eq!(w.rows(), g.len());
    for (gi, row) in g.iter().zip(w.data.chunks_exact(c)) {
        if *gi != 0.0 {
            axpy(*gi, row, out);
        }
    }
}

/// `out += W[rows]^T g`
pub fn matvec_rows_t_acc(w: &Tensor, rows: std::ops::Range<usize>, g: &[f64], out: &mut [f64]) {
    let c = w.cols();
    debug_assert_eq!(rows.len(), g.len());
    let block = &w.data[rows.start * c..rows.end * c];
    for (gi, row) in g.iter().zip(block.chunks_exact(c)) {
        if *gi != 0.0 {
            axpy(*gi, row, out);
        }
    }
}

/// `dW[rows] += g x^T`
pub fn outer_acc_rows(dw: &mut Tensor, rows: std::ops::Range<usize>, g: &[f64], x: &[f64]) {
    let c = dw.cols();
    debug_assert_eq!(c, x.len());
    debug_assert_eq!(rows.len(), g.len());
    let block = &mut dw.data[rows.start * c..rows.end * c];
    for (gi, row) in g.iter().zip(block.chunks_exact_mut(c)) {
        if *gi != 0.0 {
            axpy(*gi, x, row);
        }
    }
}

/// `dW += g x^T`
pub fn outer_acc(dw: &mut Tensor, g: &[f64], x: &[f64]) {
    let rows = dw.rows();
    outer_acc_rows(dw, 0..rows, g, x);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::from_vec(&[2, 3], (0..6).map(f64::from).collect()).unwrap();
        assert_eq!(t.row(1), &[3.0, 4.0, 5.0]);
        assert_eq!(t.cols(), 3);
    }

    #[test]
    fn dot_matches_naive_for_odd_lengths() {
        for n in 0..11 {
            let a: Vec<f64> = (0..n).map(|i| i as f64 * 0.5 - 1.0).collect();
            let b: Vec<f64> = (0..n).map(|i| (i * i) as f64 * 0.25).collect();
            let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            assert!((dot(&a, &b) - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn matvec_and_transpose_agree() {
        let w = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut y = vec![0.0; 2];
        matvec(&w, &[1.0, 0.0, -1.0], &mut y);
        assert_eq!(y, vec![-2.0, -2.0]);
        let mut x = vec![0.0; 3];
        matvec_t_acc(&w, &[1.0, 1.0], &mut x);
        assert_eq!(x, vec![5.0, 7.0, 9.0]);
        let mut dw = Tensor::zeros(&[2, 3]);
        outer_acc(&mut dw, &[1.0, 2.0], &[1.0, 0.0, 3.0]);
        assert_eq!(dw.data(), &[1.0, 0.0, 3.0, 2.0, 0.0, 6.0]);
    }
}

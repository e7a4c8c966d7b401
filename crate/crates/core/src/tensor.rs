//! Dense row-major f64 tensor, the sole value type of the math core.
//!
//! Supported ranks are 0 (scalar), 1 (vector) and 2 (matrix); batches of
//! views are carried as `Vec<Tensor>` rather than rank-3 arrays so every
//! kernel stays two-dimensional and auditable.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor from shape and row-major data. `product(shape)` must
    /// equal `data.len()`; in checked builds every element must be finite.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite element in tensor construction"
        );
        Ok(Tensor { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        debug_assert!(v.is_finite(), "non-finite scalar");
        Tensor { shape: vec![], data: vec![v] }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel] }
    }

    pub fn ones(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![1.0; numel] }
    }

    pub fn filled(shape: Vec<usize>, v: f64) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![v; numel] }
    }

    pub fn eye(d: usize) -> Self {
        let mut t = Tensor::zeros(vec![d, d]);
        for i in 0..d {
            t.data[i * d + i] = 1.0;
        }
        t
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::from_vec(vec![rows, cols], data)
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on non-scalar tensor {:?}", self.shape);
        self.data[0]
    }

    /// Rows of a matrix; a vector counts as a single row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            1 => 1,
            _ => panic!("rows() on rank-{} tensor", self.shape.len()),
        }
    }

    /// Columns of a matrix, or the length of a vector.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => panic!("cols() on rank-{} tensor", self.shape.len()),
        }
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert!(
            self.same_shape(other),
            "zip_map shape mismatch {:?} vs {:?}",
            self.shape,
            other.shape
        );
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        assert!(
            self.same_shape(other),
            "dot shape mismatch {:?} vs {:?}",
            self.shape,
            other.shape
        );
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| a * b)
            .sum()
    }

    pub fn frob_sq(&self) -> f64 {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.frob_sq().sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.numel() as f64
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape.len() != 2 || other.shape.len() != 2 {
            return Err(Error::shape(format!(
                "matmul needs matrices, got {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, p) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner dims differ: {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![0.0; m * p];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let out_row = &mut out[i * p..(i + 1) * p];
            for (l, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[l * p..(l + 1) * p];
                for (o, &b) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor { shape: vec![m, p], data: out })
    }

    pub fn transpose(&self) -> Tensor {
        assert_eq!(self.shape.len(), 2, "transpose needs a matrix");
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor { shape: vec![n, m], data: out }
    }

    /// Column means of a matrix: `[n, d] -> [d]`.
    pub fn mean_axis0(&self) -> Tensor {
        assert_eq!(self.shape.len(), 2, "mean_axis0 needs a matrix");
        let (n, d) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                out[j] += self.data[i * d + j];
            }
        }
        for v in &mut out {
            *v /= n as f64;
        }
        Tensor { shape: vec![d], data: out }
    }

    /// Each row divided by `max(row_norm, eps)`.
    pub fn l2_normalize_rows(&self, eps: f64) -> Tensor {
        let mut out = self.clone();
        let cols = out.cols();
        for r in 0..out.rows() {
            let start = r * cols;
            let row = &mut out.data[start..start + cols];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let denom = norm.max(eps);
            for v in row.iter_mut() {
                *v /= denom;
            }
        }
        out
    }

    /// Unbiased empirical covariance of the rows: `[n, d] -> [d, d]`.
    pub fn covariance(&self) -> Result<Tensor> {
        if self.shape.len() != 2 {
            return Err(Error::shape("covariance needs a matrix"));
        }
        let (n, d) = (self.shape[0], self.shape[1]);
        if n < 2 {
            return Err(Error::invalid("covariance undefined for n < 2"));
        }
        let mean = self.mean_axis0();
        let mut out = vec![0.0; d * d];
        for i in 0..n {
            let row = self.row(i);
            for a in 0..d {
                let da = row[a] - mean.data[a];
                for b in 0..d {
                    out[a * d + b] += da * (row[b] - mean.data[b]);
                }
            }
        }
        let denom = (n - 1) as f64;
        for v in &mut out {
            *v /= denom;
        }
        Tensor::from_vec(vec![d, d], out)
    }

    /// Stack row slices of equal width into a matrix.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Tensor> {
        if rows.is_empty() {
            return Err(Error::invalid("from_rows with no rows"));
        }
        let d = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::shape("from_rows with ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Tensor::from_vec(vec![rows.len(), d], data)
    }

    /// Validate that every element is finite.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid(format!("non-finite values in {what}")))
        }
    }
}

//! Row-major dense tensors used for full-tensor evaluation and oracles.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Default entry cap for materialising full tensors.
pub const DEFAULT_FULL_CAP: usize = 1 << 24;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
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
            return Err(Error::DimensionMismatch {
                op: "DenseTensor::from_vec",
                detail: format!("shape {shape:?} needs {len} entries, got {}", data.len()),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        Self {
            shape: vec![m.nrows(), m.ncols()],
            data,
        }
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

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        idx.iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    #[inline]
    pub fn at3(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn axpy(&mut self, alpha: f64, other: &DenseTensor) {
        assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scaled(&self, alpha: f64) -> DenseTensor {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| alpha * x).collect(),
        }
    }

    pub fn sub(&self, other: &DenseTensor) -> DenseTensor {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// `‖self − other‖_F / ‖other‖_F` (absolute when `other` is zero).
    pub fn rel_diff(&self, other: &DenseTensor) -> f64 {
        let d = self.sub(other).norm();
        let n = other.norm();
        if n > 0.0 {
            d / n
        } else {
            d
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// Mode product with the row-contracting convention:
/// `(X ×_n Y)[.., j, ..] = Σ_{i_n} X[.., i_n, ..] Y[i_n, j]`. `mode` is 1-based.
pub fn mode_product(x: &DenseTensor, mode: usize, y: &DMatrix<f64>) -> Result<DenseTensor> {
    let d = x.shape.len();
    if mode == 0 || mode > d {
        return Err(Error::DimensionMismatch {
            op: "mode_product",
            detail: format!("mode {mode} out of range for order {d}"),
        });
    }
    let n = mode - 1;
    if x.shape[n] != y.nrows() {
        return Err(Error::DimensionMismatch {
            op: "mode_product",
            detail: format!(
                "mode {mode} has size {} but Y has {} rows",
                x.shape[n],
                y.nrows()
            ),
        });
    }
    let outer: usize = x.shape[..n].iter().product();
    let inner: usize = x.shape[n + 1..].iter().product();
    let (ni, nj) = (x.shape[n], y.ncols());
    let mut shape = x.shape.clone();
    shape[n] = nj;
    let mut out = vec![0.0; outer * nj * inner];
    for o in 0..outer {
        for i in 0..ni {
            let src = &x.data[(o * ni + i) * inner..(o * ni + i + 1) * inner];
            for j in 0..nj {
                let w = y[(i, j)];
                if w == 0.0 {
                    continue;
                }
                let dst = &mut out[(o * nj + j) * inner..(o * nj + j + 1) * inner];
                for (a, b) in dst.iter_mut().zip(src) {
                    *a += w * b;
                }
            }
        }
    }
    Ok(DenseTensor { shape, data: out })
}

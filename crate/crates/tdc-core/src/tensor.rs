//! Dense rank-4 tensors and row-major matrices: storage, mode-n matricization
//! and its inverse fold, and Frobenius-norm utilities.
//!
//! The canonical kernel index order is `(C, N, R, S)`: input channels, output
//! channels, filter rows, filter columns. All data is row-major with the last
//! index fastest.

use crate::error::{Error, Result};

/// Dense rank-4 tensor of `f64`, row-major (last index fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    /// Build a tensor from dims and row-major data. Rejects length mismatches
    /// and non-finite values.
    pub fn from_vec(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "tensor dims must be positive, got {dims:?}"
            )));
        }
        if data.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "data length {} does not match dims {:?} (need {})",
                data.len(),
                dims,
                len
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor contains {v}")));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        let len = dims.iter().product();
        Self {
            dims,
            data: vec![0.0; len],
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn offset(&self, i0: usize, i1: usize, i2: usize, i3: usize) -> usize {
        debug_assert!(i0 < self.dims[0] && i1 < self.dims[1] && i2 < self.dims[2] && i3 < self.dims[3]);
        ((i0 * self.dims[1] + i1) * self.dims[2] + i2) * self.dims[3] + i3
    }

    #[inline]
    pub fn get(&self, i0: usize, i1: usize, i2: usize, i3: usize) -> f64 {
        self.data[self.offset(i0, i1, i2, i3)]
    }

    #[inline]
    pub fn set(&mut self, i0: usize, i1: usize, i2: usize, i3: usize, v: f64) {
        let off = self.offset(i0, i1, i2, i3);
        self.data[off] = v;
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Elementwise `self + other`.
    pub fn add(&self, other: &Tensor4) -> Result<Tensor4> {
        self.zip_with(other, |a, b| a + b)
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &Tensor4) -> Result<Tensor4> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, factor: f64) -> Tensor4 {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    fn zip_with(&self, other: &Tensor4, f: impl Fn(f64, f64) -> f64) -> Result<Tensor4> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch(format!(
                "tensor dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor4 {
            dims: self.dims,
            data,
        })
    }
}

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "matrix dims must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Max absolute deviation of `self^T * self` from the identity; zero for a
    /// matrix with orthonormal columns.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst = 0.0_f64;
        for a in 0..self.cols {
            for b in a..self.cols {
                let mut dot = 0.0;
                for r in 0..self.rows {
                    dot += self.get(r, a) * self.get(r, b);
                }
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }
}

/// Unfold `t` along `mode` (0-3): rows index the chosen mode, columns flatten the
/// remaining modes in ascending order with the last one fastest. Round-trips
/// exactly with [`fold`].
pub fn mode_n_matricize(t: &Tensor4, mode: usize) -> Result<Matrix> {
    if mode > 3 {
        return Err(Error::InvalidArgument(format!(
            "matricization mode must be in 0..=3, got {mode}"
        )));
    }
    let dims = t.dims();
    let rest: Vec<usize> = (0..4).filter(|&m| m != mode).collect();
    let rows = dims[mode];
    let cols: usize = rest.iter().map(|&m| dims[m]).product();
    let mut out = Matrix::zeros(rows, cols);
    let mut idx = [0usize; 4];
    for i0 in 0..dims[0] {
        idx[0] = i0;
        for i1 in 0..dims[1] {
            idx[1] = i1;
            for i2 in 0..dims[2] {
                idx[2] = i2;
                for i3 in 0..dims[3] {
                    idx[3] = i3;
                    let col = (idx[rest[0]] * dims[rest[1]] + idx[rest[1]]) * dims[rest[2]]
                        + idx[rest[2]];
                    out.set(idx[mode], col, t.get(i0, i1, i2, i3));
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`mode_n_matricize`]: rebuild a tensor with `dims` from its mode-n
/// unfolding.
pub fn fold(m: &Matrix, mode: usize, dims: [usize; 4]) -> Result<Tensor4> {
    if mode > 3 {
        return Err(Error::InvalidArgument(format!(
            "fold mode must be in 0..=3, got {mode}"
        )));
    }
    let rest: Vec<usize> = (0..4).filter(|&mm| mm != mode).collect();
    let cols: usize = rest.iter().map(|&mm| dims[mm]).product();
    if m.rows() != dims[mode] || m.cols() != cols {
        return Err(Error::ShapeMismatch(format!(
            "matrix {}x{} cannot fold into dims {:?} along mode {mode}",
            m.rows(),
            m.cols(),
            dims
        )));
    }
    let mut t = Tensor4::zeros(dims);
    let mut idx = [0usize; 4];
    for i0 in 0..dims[0] {
        idx[0] = i0;
        for i1 in 0..dims[1] {
            idx[1] = i1;
            for i2 in 0..dims[2] {
                idx[2] = i2;
                for i3 in 0..dims[3] {
                    idx[3] = i3;
                    let col = (idx[rest[0]] * dims[rest[1]] + idx[rest[1]]) * dims[rest[2]]
                        + idx[rest[2]];
                    t.set(i0, i1, i2, i3, m.get(idx[mode], col));
                }
            }
        }
    }
    Ok(t)
}

/// Relative Frobenius error `|a - b|_F / |a|_F`. Errors when `a` has zero norm.
pub fn relative_error(a: &Tensor4, b: &Tensor4) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!(
            "tensor dims {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let ref_norm = a.frobenius_norm();
    if ref_norm == 0.0 {
        return Err(Error::ZeroNormReference);
    }
    let diff: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    Ok(diff.sqrt() / ref_norm)
}

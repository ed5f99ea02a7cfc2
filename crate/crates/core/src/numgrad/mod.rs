//! Minimal dense numerics: row-major f64 matrices, elementwise activations
//! with exact derivative rules, and the finite-difference gradient checker
//! that arbitrates every analytic gradient in this crate.
//!
//! All learning math is 64-bit. Any NaN/Inf in a public result is reported
//! as an error, never propagated.

mod gradcheck;
mod store;

pub use gradcheck::grad_check;
pub use store::ParamStore;

use crate::error::{Error, Result};

/// Dense row-major matrix of f64. Vectors are n x 1 matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from row-major data; the length must be rows * cols
    /// and every entry finite.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        let m = Matrix { rows, cols, data };
        m.check_finite("from_vec")?;
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Input("matrix needs at least one row".into()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Matrix::from_vec(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Matrix::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

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
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        if let Some(idx) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "{}: non-finite value at entry {} of {}x{} matrix",
                context, idx, self.rows, self.cols
            )));
        }
        Ok(())
    }

    /// Standard matrix product.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "matmul: {}x{} incompatible with {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let a_row = self.row(r);
            let out_row = out.row_mut(r);
            for (k, &a) in a_row.iter().enumerate() {
                axpy(a, other.row(k), out_row);
            }
        }
        out.check_finite("matmul")?;
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Result<Matrix> {
        let data: Vec<f64> = self.data.iter().map(|v| v * s).collect();
        Matrix::from_vec(self.rows, self.cols, data)
    }

    fn zip_with(&self, other: &Matrix, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "{}: {}x{} vs {}x{}",
                op, self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        let out = Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        };
        out.check_finite(op)?;
        Ok(out)
    }
}

/// Elementwise nonlinearities used by the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Exp,
}

/// Applies an activation elementwise. Rejects non-finite inputs and outputs.
pub fn activation(kind: Activation, x: &Matrix) -> Result<Matrix> {
    x.check_finite("activation input")?;
    let f = match kind {
        Activation::Sigmoid => sigmoid,
        Activation::Tanh => f64::tanh,
        Activation::Exp => f64::exp,
    };
    let data: Vec<f64> = x.as_slice().iter().map(|&v| f(v)).collect();
    let out = Matrix {
        rows: x.rows,
        cols: x.cols,
        data,
    };
    out.check_finite("activation output")?;
    Ok(out)
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// d sigmoid / dv given the *output* s = sigmoid(v).
#[inline]
pub(crate) fn dsigmoid_from_output(s: f64) -> f64 {
    s * (1.0 - s)
}

/// d tanh / dv given the *output* t = tanh(v).
#[inline]
pub(crate) fn dtanh_from_output(t: f64) -> f64 {
    1.0 - t * t
}

// ---------------------------------------------------------------------------
// Hot-path kernels. All operate on contiguous slices so LLVM can vectorize;
// callers guarantee the shapes (debug-asserted only).
// ---------------------------------------------------------------------------

/// out += a * x
#[inline]
pub(crate) fn axpy(a: f64, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), out.len());
    for (o, &v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

/// out += W x
#[inline]
pub(crate) fn matvec_add_into(w: &Matrix, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.cols, x.len());
    debug_assert_eq!(w.rows, out.len());
    for (r, o) in out.iter_mut().enumerate() {
        *o += dot(w.row(r), x);
    }
}

/// out += W^T y, accumulated row-wise so every access stays contiguous.
#[inline]
pub(crate) fn matvec_t_add_into(w: &Matrix, y: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.rows, y.len());
    debug_assert_eq!(w.cols, out.len());
    for (r, &a) in y.iter().enumerate() {
        axpy(a, w.row(r), out);
    }
}

/// dW += y x^T  (y: rows, x: cols)
#[inline]
pub(crate) fn rank1_add(dw: &mut Matrix, y: &[f64], x: &[f64]) {
    debug_assert_eq!(dw.rows, y.len());
    debug_assert_eq!(dw.cols, x.len());
    for (r, &a) in y.iter().enumerate() {
        axpy(a, x, dw.row_mut(r));
    }
}

/// Four independent accumulators; the fixed association order keeps results
/// deterministic while breaking the serial FP dependency chain.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let chunks = a.len() / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..chunks {
        let i = 4 * k;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for i in 4 * chunks..a.len() {
        s0 += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3)
}

//! Dense column-major matrices and the handful of kernels the rest of the
//! crate is built on.
//!
//! Every matrix stores its entries in column-major order, so `vec` is a
//! plain copy of the storage and `mat` is its inverse. Under this convention
//! `(L ⊗ R) vec(X) = vec(R X Lᵀ)` for `X` of shape `n₂ × n₁`.
//!
//! Multiplications take an explicit [`Flops`] tally. One multiply plus one
//! add counts as two flops; elementwise additions and Hadamard products count
//! one flop per entry. Activation function evaluations are not counted.

mod svd;

use std::fmt;

use crate::error::{Error, Result};

pub use svd::{svd, SvdResult, SVD_MAX_SWEEPS, SVD_TOL};

/// Floating-point operation tally, threaded explicitly through kernels.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct Flops(pub u64);

impl Flops {
    pub fn new() -> Self {
        Self(0)
    }

    #[inline]
    pub fn add(&mut self, n: usize) {
        self.0 += n as u64;
    }

    pub fn get(&self) -> u64 {
        self.0
    }
}

/// Dense `rows × cols` matrix of `f64`, stored column-major.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                write!(f, "{:>12.6} ", self.get(i, j))?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i + i * n] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i + i * n] = d;
        }
        m
    }

    /// Builds a matrix from column-major storage, rejecting non-finite entries.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("from_col_major", (rows, cols), (data.len(), 1)));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix construction".into()));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from row-major storage, rejecting non-finite entries.
    pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("from_row_major", (rows, cols), (data.len(), 1)));
        }
        let m = Self::from_fn(rows, cols, |i, j| data[i * cols + j]);
        if !m.is_finite() {
            return Err(Error::NonFinite("matrix construction".into()));
        }
        Ok(m)
    }

    /// Convenience constructor from nested rows; panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.as_ref().len());
        assert!(rows.iter().all(|row| row.as_ref().len() == c), "ragged rows");
        Self::from_fn(r, c, |i, j| rows[i].as_ref()[j])
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i + j * self.rows]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i + j * self.rows] = v;
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Reinterprets the storage with a new shape of the same element count.
    pub fn reshape(mut self, rows: usize, cols: usize) -> Result<Matrix> {
        if rows * cols != self.data.len() {
            return Err(Error::shape("reshape", self.shape(), (rows, cols)));
        }
        self.rows = rows;
        self.cols = cols;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn scale_in_place(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// `self += alpha * other`; panics on shape mismatch.
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "axpy shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    /// Shape-checked elementwise sum.
    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    /// Shape-checked elementwise difference.
    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// Shape-checked Hadamard product.
    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    fn zip_with(&self, other: &Matrix, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, self.shape(), other.shape()));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn frob_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Largest absolute entrywise difference; panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }
}

/// Frobenius norm.
pub fn frob(m: &Matrix) -> f64 {
    m.frob_sq().sqrt()
}

/// Column-major vectorization.
pub fn vec(x: &Matrix) -> Vec<f64> {
    x.data.clone()
}

/// Inverse of [`vec`]: fills a `rows × cols` matrix column by column.
pub fn mat(x: &[f64], rows: usize, cols: usize) -> Result<Matrix> {
    if x.len() != rows * cols {
        return Err(Error::shape("mat", (x.len(), 1), (rows, cols)));
    }
    Ok(Matrix {
        rows,
        cols,
        data: x.to_vec(),
    })
}

/// Kronecker product: block `(i, j)` of the result is `l[i, j] · r`.
pub fn kron(l: &Matrix, r: &Matrix) -> Matrix {
    let (m1, n1) = l.shape();
    let (m2, n2) = r.shape();
    let mut out = Matrix::zeros(m1 * m2, n1 * n2);
    for j1 in 0..n1 {
        for j2 in 0..n2 {
            let col = out.col_mut(j1 * n2 + j2);
            for i1 in 0..m1 {
                let lij = l.get(i1, j1);
                let rcol = r.col(j2);
                for (i2, &rv) in rcol.iter().enumerate() {
                    col[i1 * m2 + i2] = lij * rv;
                }
            }
        }
    }
    out
}

/// `A · B`. Adds `2·rows(A)·cols(A)·cols(B)` to the tally.
pub fn matmul(a: &Matrix, b: &Matrix, flops: &mut Flops) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let mut c = Matrix::zeros(a.rows, b.cols);
    gemm_nn_acc(a, b, &mut c, flops);
    Ok(c)
}

/// `Aᵀ · B`.
pub fn matmul_tn(a: &Matrix, b: &Matrix, flops: &mut Flops) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::shape("matmul_tn", a.shape(), b.shape()));
    }
    let mut c = Matrix::zeros(a.cols, b.cols);
    gemm_tn_acc(a, b, &mut c, flops);
    Ok(c)
}

/// `A · Bᵀ`.
pub fn matmul_nt(a: &Matrix, b: &Matrix, flops: &mut Flops) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::shape("matmul_nt", a.shape(), b.shape()));
    }
    let mut c = Matrix::zeros(a.rows, b.rows);
    gemm_nt_acc(a, b, &mut c, flops);
    Ok(c)
}

// Unchecked accumulating kernels (`C += op(A)·op(B)`); callers validate shapes.

pub(crate) fn gemm_nn_acc(a: &Matrix, b: &Matrix, c: &mut Matrix, flops: &mut Flops) {
    debug_assert_eq!(a.cols, b.rows);
    debug_assert_eq!((c.rows, c.cols), (a.rows, b.cols));
    let m = a.rows;
    for j in 0..b.cols {
        let ccol = &mut c.data[j * m..(j + 1) * m];
        for l in 0..a.cols {
            let blj = b.data[l + j * b.rows];
            if blj == 0.0 {
                continue;
            }
            let acol = &a.data[l * m..(l + 1) * m];
            for (cv, &av) in ccol.iter_mut().zip(acol) {
                *cv += av * blj;
            }
        }
    }
    flops.add(2 * a.rows * a.cols * b.cols);
}

pub(crate) fn gemm_tn_acc(a: &Matrix, b: &Matrix, c: &mut Matrix, flops: &mut Flops) {
    debug_assert_eq!(a.rows, b.rows);
    debug_assert_eq!((c.rows, c.cols), (a.cols, b.cols));
    let k = a.rows;
    for j in 0..b.cols {
        let bcol = &b.data[j * k..(j + 1) * k];
        for i in 0..a.cols {
            let acol = &a.data[i * k..(i + 1) * k];
            c.data[i + j * c.rows] += dot(acol, bcol);
        }
    }
    flops.add(2 * a.rows * a.cols * b.cols);
}

pub(crate) fn gemm_nt_acc(a: &Matrix, b: &Matrix, c: &mut Matrix, flops: &mut Flops) {
    debug_assert_eq!(a.cols, b.cols);
    debug_assert_eq!((c.rows, c.cols), (a.rows, b.rows));
    let m = a.rows;
    for j in 0..b.rows {
        let ccol = &mut c.data[j * m..(j + 1) * m];
        for l in 0..a.cols {
            let bjl = b.data[j + l * b.rows];
            if bjl == 0.0 {
                continue;
            }
            let acol = &a.data[l * m..(l + 1) * m];
            for (cv, &av) in ccol.iter_mut().zip(acol) {
                *cv += av * bjl;
            }
        }
    }
    flops.add(2 * a.rows * a.cols * b.rows);
}

/// `dst += src` with one flop per entry.
pub(crate) fn add_assign(dst: &mut Matrix, src: &Matrix, flops: &mut Flops) {
    debug_assert_eq!(dst.shape(), src.shape());
    for (d, &s) in dst.data.iter_mut().zip(&src.data) {
        *d += s;
    }
    flops.add(dst.len());
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators let the loop vectorize.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

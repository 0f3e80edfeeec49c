//! Dense row-major `f64` matrices and the pointwise kernels used by the model.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mat({}x{})", self.rows, self.cols)?;
        if self.data.len() <= 64 {
            f.debug_list().entries(self.data.chunks(self.cols.max(1))).finish()?;
        }
        Ok(())
    }
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 1.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!("buffer of length {} cannot hold a {rows}x{cols} matrix", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows. An empty slice gives a 0x0 matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape(format!("row {i} has {} columns, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn column(values: &[f64]) -> Self {
        Self { rows: values.len(), cols: 1, data: values.to_vec() }
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
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks(0) panics, so a zero-width matrix yields empty rows explicitly.
        let cols = self.cols;
        (0..self.rows).map(move |r| &self.data[r * cols..(r + 1) * cols])
    }

    /// Copies rows `start..end` into a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Mat {
        assert!(start <= end && end <= self.rows, "row range {start}..{end} out of bounds");
        Mat { rows: end - start, cols: self.cols, data: self.data[start * self.cols..end * self.cols].to_vec() }
    }

    /// Stacks matrices vertically. All parts must share a column count.
    pub fn vstack(parts: &[Mat]) -> Result<Mat> {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(Error::Shape(format!("vstack: {} columns vs {cols}", p.cols)));
            }
            rows += p.rows;
            data.extend_from_slice(&p.data);
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Column sums as a `1 x cols` vector.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.row_iter() {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.row_iter().map(|r| r.iter().sum()).collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn map_inplace(&mut self, f: impl Fn(f64) -> f64) {
        for v in &mut self.data {
            *v = f(*v);
        }
    }

    fn zip_with(&self, other: &Mat, what: &str, f: impl Fn(f64, f64) -> f64) -> Mat {
        assert_eq!(self.shape(), other.shape(), "{what}: shape mismatch");
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add(&self, other: &Mat) -> Mat {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// Element-wise (Hadamard) product.
    pub fn hadamard(&self, other: &Mat) -> Mat {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, k: f64) -> Mat {
        self.map(|v| v * k)
    }

    pub fn add_assign(&mut self, other: &Mat) {
        assert_eq!(self.shape(), other.shape(), "add_assign: shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Adds `bias` (length `cols`) to every row.
    pub fn add_row_vector(&mut self, bias: &[f64]) {
        assert_eq!(bias.len(), self.cols, "bias length mismatch");
        for r in 0..self.rows {
            for (v, b) in self.row_mut(r).iter_mut().zip(bias) {
                *v += b;
            }
        }
    }

    /// `self · other`. Panics on an inner-dimension mismatch.
    pub fn dot(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "dot: {:?} x {:?}", self.shape(), other.shape());
        gemm(self, false, other, false)
    }

    /// `selfᵀ · other`.
    pub fn t_dot(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows, "t_dot: {:?} x {:?}", self.shape(), other.shape());
        gemm(self, true, other, false)
    }

    /// `self · otherᵀ`.
    pub fn dot_t(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.cols, "dot_t: {:?} x {:?}", self.shape(), other.shape());
        gemm(self, false, other, true)
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

fn gemm(a: &Mat, ta: bool, b: &Mat, tb: bool) -> Mat {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let n = if tb { b.rows } else { b.cols };
    let mut out = Mat::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    // Row-major strides; a transpose is the same buffer with strides swapped.
    let (rsa, csa) = if ta { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if tb { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    // SAFETY: the pointers cover buffers of exactly the stated dimensions and
    // strides, and `out` does not alias either input.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            0.0,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

/// Matrix product with a checked inner dimension.
pub fn matmul(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "matmul: inner dimensions differ ({}x{} times {}x{})",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    Ok(a.dot(b))
}

#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Logistic function, evaluated on the branch that cannot overflow.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu_mat(x: &Mat) -> Mat {
    x.map(relu)
}

pub fn sigmoid_mat(x: &Mat) -> Mat {
    x.map(sigmoid)
}

/// Softmax down each column: every column of the result sums to one.
pub fn softmax_over_temporal(x: &Mat) -> Mat {
    let (rows, cols) = x.shape();
    let mut out = Mat::zeros(rows, cols);
    if rows == 0 {
        return out;
    }
    let mut max = x.row(0).to_vec();
    for row in x.row_iter().skip(1) {
        for (m, &v) in max.iter_mut().zip(row) {
            if v > *m {
                *m = v;
            }
        }
    }
    let mut sums = vec![0.0; cols];
    for r in 0..rows {
        let src = x.row(r);
        let dst = out.row_mut(r);
        for c in 0..cols {
            let e = (src[c] - max[c]).exp();
            dst[c] = e;
            sums[c] += e;
        }
    }
    for r in 0..rows {
        for (v, s) in out.row_mut(r).iter_mut().zip(&sums) {
            *v /= s;
        }
    }
    out
}

/// Softmax along each row: every row of the result sums to one.
pub fn softmax_over_spatial(x: &Mat) -> Mat {
    let mut out = x.clone();
    for r in 0..out.rows() {
        softmax_inplace(out.row_mut(r));
    }
    out
}

/// Softmax of a slice in place.
pub fn softmax_inplace(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Vector-Jacobian product of [`softmax_over_temporal`] given its output `p`.
pub fn softmax_over_temporal_backward(p: &Mat, dp: &Mat) -> Mat {
    assert_eq!(p.shape(), dp.shape());
    let inner = p.hadamard(dp).col_sums();
    let mut ds = Mat::zeros(p.rows(), p.cols());
    for r in 0..p.rows() {
        let (pr, dr) = (p.row(r), dp.row(r));
        for (c, out) in ds.row_mut(r).iter_mut().enumerate() {
            *out = pr[c] * (dr[c] - inner[c]);
        }
    }
    ds
}

/// Vector-Jacobian product of [`softmax_over_spatial`] given its output `p`.
pub fn softmax_over_spatial_backward(p: &Mat, dp: &Mat) -> Mat {
    assert_eq!(p.shape(), dp.shape());
    let mut ds = Mat::zeros(p.rows(), p.cols());
    for r in 0..p.rows() {
        let (pr, dr) = (p.row(r), dp.row(r));
        let inner: f64 = pr.iter().zip(dr).map(|(a, b)| a * b).sum();
        for (c, out) in ds.row_mut(r).iter_mut().enumerate() {
            *out = pr[c] * (dr[c] - inner);
        }
    }
    ds
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Scales `v` to unit Euclidean length; a zero vector stays zero.
pub fn unit_normalize(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    if n > 0.0 {
        v.iter().map(|x| x / n).collect()
    } else {
        vec![0.0; v.len()]
    }
}

/// Row-wise [`unit_normalize`]; also returns the original row norms.
pub fn unit_normalize_rows(x: &Mat) -> (Mat, Vec<f64>) {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        let n = norm(row);
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
        norms.push(n);
    }
    (out, norms)
}

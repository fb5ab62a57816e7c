//! Dense row-major matrices and the numeric kernels shared by the inference
//! and training paths.
//!
//! Everything is generic over [`Real`] so the same code runs in `f32`
//! (production) and `f64` (gradient verification).

use num_traits::{Float, FromPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

/// Element type for model math. Implemented by `f32` and `f64`.
pub trait Real:
    Float + FromPrimitive + AddAssign + SubAssign + MulAssign + Sum + Debug + Display + 'static
{
}

impl<T> Real for T where
    T: Float + FromPrimitive + AddAssign + SubAssign + MulAssign + Sum + Debug + Display + 'static
{
}

/// Shorthand for lifting an `f64` constant into the element type.
pub(crate) fn cst<F: Real>(x: f64) -> F {
    F::from_f64(x).expect("constant representable in element type")
}

/// Epsilon inside the layer-norm variance term.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Floor applied to row norms before dividing, so normalization stays total.
pub const NORM_FLOOR: f64 = 1e-12;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Real> Mat<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: F) -> Self {
        Mat {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Mat { rows, cols, data }
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

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: F) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Mat<F> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// `self += other * scale`, elementwise.
    pub fn add_scaled(&mut self, other: &Mat<F>, scale: F) {
        assert_eq!(self.shape(), other.shape(), "add_scaled shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b * scale;
        }
    }

    pub fn add_assign_mat(&mut self, other: &Mat<F>) {
        assert_eq!(self.shape(), other.shape(), "add shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<T: Real>(&self) -> Mat<T> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| cst(x.to_f64().unwrap())).collect(),
        }
    }
}

/// `A (m×k) · B (k×n)`.
pub fn matmul<F: Real>(a: &Mat<F>, b: &Mat<F>) -> Mat<F> {
    assert_eq!(a.cols, b.rows, "matmul inner dimension mismatch");
    let mut c = Mat::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let a_row = a.row(i);
        let c_row = c.row_mut(i);
        for (k, &aik) in a_row.iter().enumerate() {
            let b_row = b.row(k);
            for (cj, &bkj) in c_row.iter_mut().zip(b_row.iter()) {
                *cj += aik * bkj;
            }
        }
    }
    c
}

/// `A (m×k) · Bᵀ (k×n)` where `B` is stored as `n×k`.
pub fn matmul_nt<F: Real>(a: &Mat<F>, b: &Mat<F>) -> Mat<F> {
    assert_eq!(a.cols, b.cols, "matmul_nt inner dimension mismatch");
    let mut c = Mat::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let a_row = a.row(i);
        let c_row = c.row_mut(i);
        for (j, cj) in c_row.iter_mut().enumerate() {
            let b_row = b.row(j);
            let mut acc = F::zero();
            for (&x, &y) in a_row.iter().zip(b_row.iter()) {
                acc += x * y;
            }
            *cj = acc;
        }
    }
    c
}

/// `Aᵀ (k×m) · B (m×n)` where `A` is stored as `m×k`.
pub fn matmul_tn<F: Real>(a: &Mat<F>, b: &Mat<F>) -> Mat<F> {
    assert_eq!(a.rows, b.rows, "matmul_tn inner dimension mismatch");
    let mut c = Mat::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let a_row = a.row(k);
        let b_row = b.row(k);
        for (i, &aki) in a_row.iter().enumerate() {
            let c_row = c.row_mut(i);
            for (cj, &bkj) in c_row.iter_mut().zip(b_row.iter()) {
                *cj += aki * bkj;
            }
        }
    }
    c
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<F: Real>(x: &Mat<F>) -> Mat<F> {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let mut max = row[0];
        for &v in row.iter() {
            if v > max {
                max = v;
            }
        }
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

/// GELU in the tanh approximation, which has a closed-form derivative.
pub fn gelu_value<F: Real>(x: F) -> F {
    let c: F = cst((2.0 / std::f64::consts::PI).sqrt());
    let k: F = cst(0.044715);
    let half: F = cst(0.5);
    let inner = c * (x + k * x * x * x);
    half * x * (F::one() + inner.tanh())
}

pub fn gelu_deriv<F: Real>(x: F) -> F {
    let c: F = cst((2.0 / std::f64::consts::PI).sqrt());
    let k: F = cst(0.044715);
    let half: F = cst(0.5);
    let three: F = cst(3.0);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let sech2 = F::one() - t * t;
    half * (F::one() + t) + half * x * sech2 * c * (F::one() + three * k * x * x)
}

/// Per-row layer normalization: `y = (x - mean) * rstd * gamma + beta`.
///
/// Returns the output plus the per-row mean and reciprocal standard
/// deviation needed by the backward pass.
pub fn layer_norm_rows<F: Real>(
    x: &Mat<F>,
    gamma: &Mat<F>,
    beta: &Mat<F>,
) -> (Mat<F>, Vec<F>, Vec<F>) {
    let d = x.cols();
    assert_eq!(gamma.shape(), (1, d), "gamma shape");
    assert_eq!(beta.shape(), (1, d), "beta shape");
    let eps: F = cst(LAYER_NORM_EPS);
    let inv_d = F::one() / cst::<F>(d as f64);
    let mut out = Mat::zeros(x.rows(), d);
    let mut means = Vec::with_capacity(x.rows());
    let mut rstds = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mut mean = F::zero();
        for &v in row {
            mean += v;
        }
        mean = mean * inv_d;
        let mut var = F::zero();
        for &v in row {
            let d0 = v - mean;
            var += d0 * d0;
        }
        var = var * inv_d;
        let rstd = F::one() / (var + eps).sqrt();
        let out_row = out.row_mut(r);
        for (c, &v) in row.iter().enumerate() {
            out_row[c] = (v - mean) * rstd * gamma.get(0, c) + beta.get(0, c);
        }
        means.push(mean);
        rstds.push(rstd);
    }
    (out, means, rstds)
}

/// Normalize each row to unit Euclidean norm; returns the pre-division norms.
pub fn l2_normalize_rows<F: Real>(x: &Mat<F>) -> (Mat<F>, Vec<F>) {
    let floor: F = cst(NORM_FLOOR);
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.rows());
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let mut sq = F::zero();
        for &v in row.iter() {
            sq += v * v;
        }
        let norm = sq.sqrt().max(floor);
        for v in row.iter_mut() {
            *v = *v / norm;
        }
        norms.push(norm);
    }
    (out, norms)
}

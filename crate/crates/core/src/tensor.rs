//! Dense row-major matrices and the handful of kernels the model needs.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;
use core::iter::Sum;

use num_traits::Float;

/// Floating-point element type. Training runs in `f32`; gradient checks use `f64`.
pub trait Scalar: Float + Default + Debug + Sum + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    /// Width tag used by the checkpoint container (4 or 8 bytes).
    const BYTES: usize;
    // Always the libm versions, whichever math backend `Float` resolves to.
    fn exp_portable(self) -> Self;
    fn ln_portable(self) -> Self;
    fn tanh_portable(self) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    const BYTES: usize = 4;
    #[inline]
    fn exp_portable(self) -> Self {
        libm::expf(self)
    }
    #[inline]
    fn ln_portable(self) -> Self {
        libm::logf(self)
    }
    #[inline]
    fn tanh_portable(self) -> Self {
        libm::tanhf(self)
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    const BYTES: usize = 8;
    #[inline]
    fn exp_portable(self) -> Self {
        libm::exp(self)
    }
    #[inline]
    fn ln_portable(self) -> Self {
        libm::log(self)
    }
    #[inline]
    fn tanh_portable(self) -> Self {
        libm::tanh(self)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data does not match shape");
        Matrix { rows, cols, data }
    }

    pub fn row_vector(data: Vec<T>) -> Self {
        let cols = data.len();
        Matrix::from_vec(1, cols, data)
    }

    pub fn scalar(x: T) -> Self {
        Matrix::from_vec(1, 1, vec![x])
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
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    /// First entry of a 1x1 matrix.
    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn add_assign(&mut self, other: &Matrix<T>) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
    }

    pub fn add_scaled(&mut self, other: &Matrix<T>, s: T) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b * s;
        }
    }

    pub fn scale(&mut self, s: T) {
        for a in self.data.iter_mut() {
            *a = *a * s;
        }
    }

    pub fn sum_squares(&self) -> T {
        self.data.iter().map(|x| *x * *x).sum()
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| f(*x)).collect(),
        }
    }

    /// `self · other`
    pub fn matmul(&self, other: &Matrix<T>) -> Matrix<T> {
        let mut out = Matrix::zeros(self.rows, other.cols);
        matmul_acc(self, other, &mut out);
        out
    }

    /// `self · otherᵀ`
    pub fn matmul_bt(&self, other: &Matrix<T>) -> Matrix<T> {
        let mut out = Matrix::zeros(self.rows, other.rows);
        matmul_bt_acc(self, other, &mut out);
        out
    }

    /// `selfᵀ · other`
    pub fn matmul_at(&self, other: &Matrix<T>) -> Matrix<T> {
        let mut out = Matrix::zeros(self.cols, other.cols);
        matmul_at_acc(self, other, &mut out);
        out
    }
}

/// `out += a · b`
pub fn matmul_acc<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, out: &mut Matrix<T>) {
    assert_eq!(a.cols, b.rows, "matmul inner dimension");
    assert_eq!(out.shape(), (a.rows, b.cols), "matmul output shape");
    let m = b.cols;
    for i in 0..a.rows {
        let out_row = &mut out.data[i * m..(i + 1) * m];
        for (p, &av) in a.row(i).iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let b_row = &b.data[p * m..(p + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    }
}

/// `out += a · bᵀ`
pub fn matmul_bt_acc<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, out: &mut Matrix<T>) {
    assert_eq!(a.cols, b.cols, "matmul_bt inner dimension");
    assert_eq!(out.shape(), (a.rows, b.rows), "matmul_bt output shape");
    for i in 0..a.rows {
        let a_row = a.row(i);
        for j in 0..b.rows {
            let v = dot(a_row, b.row(j));
            let o = &mut out.data[i * b.rows + j];
            *o = *o + v;
        }
    }
}

/// `out += aᵀ · b`
pub fn matmul_at_acc<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, out: &mut Matrix<T>) {
    assert_eq!(a.rows, b.rows, "matmul_at inner dimension");
    assert_eq!(out.shape(), (a.cols, b.cols), "matmul_at output shape");
    let m = b.cols;
    for i in 0..a.rows {
        let b_row = b.row(i);
        for (p, &av) in a.row(i).iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let out_row = &mut out.data[p * m..(p + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = c * 4;
        acc[0] = acc[0] + a[k] * b[k];
        acc[1] = acc[1] + a[k + 1] * b[k + 1];
        acc[2] = acc[2] + a[k + 2] * b[k + 2];
        acc[3] = acc[3] + a[k + 3] * b[k + 3];
    }
    let mut tail = T::zero();
    for k in chunks * 4..a.len() {
        tail = tail + a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Sinusoidal position table, `len x d_model`.
pub fn sinusoidal_positions<T: Scalar>(len: usize, d_model: usize) -> Matrix<T> {
    let mut out = Matrix::zeros(len, d_model);
    for pos in 0..len {
        let row = out.row_mut(pos);
        for i in 0..d_model {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / Float::powf(10_000.0_f64, 2.0 * pair / d_model as f64);
            row[i] = T::from_f64(if i % 2 == 0 {
                Float::sin(angle)
            } else {
                Float::cos(angle)
            });
        }
    }
    out
}

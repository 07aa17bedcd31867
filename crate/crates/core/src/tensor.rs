//! Dense 2-D tensors and the scalar trait shared by f32/f64 code paths.
//!
//! Everything in the model is a matrix; column vectors are `(n, 1)` and
//! scalars `(1, 1)`. Training defaults to f32, gradient checking runs at f64
//! (central differences are unstable at 32-bit).

use ndarray::{Array2, LinalgScalar, ScalarOperand};
use num_traits::{Float, NumAssignOps};

use crate::error::{Error, Result};

/// Scalar type usable by the tape: f32 or f64.
pub trait Real:
    Float
    + NumAssignOps
    + LinalgScalar
    + ScalarOperand
    + std::fmt::Display
    + std::fmt::Debug
    + Send
    + Sync
    + 'static
{
    const DTYPE: &'static str;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn to_le_bytes_vec(self) -> Vec<u8>;
    fn from_le_slice(bytes: &[u8]) -> Self;
    /// Byte width of one value in checkpoint files.
    const BYTE_WIDTH: usize;
}

impl Real for f32 {
    const DTYPE: &'static str = "f32";
    const BYTE_WIDTH: usize = 4;

    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
    fn from_le_slice(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte f32"))
    }
}

impl Real for f64 {
    const DTYPE: &'static str = "f64";
    const BYTE_WIDTH: usize = 8;

    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
    fn from_le_slice(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte f64"))
    }
}

/// Row-major dense matrix. Vectors are `(n, 1)`, scalars `(1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Real> {
    data: Array2<T>,
}

impl<T: Real> Tensor<T> {
    pub fn from_array(data: Array2<T>) -> Self {
        Tensor { data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            data: Array2::zeros((rows, cols)),
        }
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Tensor {
            data: Array2::from_elem((rows, cols), T::one()),
        }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape {
                op: "from_vec",
                detail: format!(
                    "{} values do not fill a {}x{} tensor",
                    values.len(),
                    rows,
                    cols
                ),
            });
        }
        Ok(Tensor {
            data: Array2::from_shape_vec((rows, cols), values).expect("checked length"),
        })
    }

    /// Column vector from a slice.
    pub fn col(values: &[T]) -> Self {
        Tensor {
            data: Array2::from_shape_vec((values.len(), 1), values.to_vec()).expect("column"),
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            data: Array2::from_elem((1, 1), value),
        }
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn array(&self) -> &Array2<T> {
        &self.data
    }

    pub fn array_mut(&mut self) -> &mut Array2<T> {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[(r, c)]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[(r, c)] = v;
    }

    /// Value of a `(1, 1)` tensor.
    pub fn scalar_value(&self) -> T {
        debug_assert_eq!(self.shape(), (1, 1));
        self.data[(0, 0)]
    }

    /// Row-major copy of all values.
    pub fn to_vec(&self) -> Vec<T> {
        self.data.iter().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.data.iter()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            data: self.data.mapv(f),
        }
    }

    /// Maximum absolute difference against another tensor of the same shape.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        debug_assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(other.data.iter())
            .fold(T::zero(), |acc, (a, b)| acc.max((*a - *b).abs()))
    }

    /// Cast every value through f64 into another precision.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            data: self.data.mapv(|v| U::from_f64(v.to_f64())),
        }
    }
}

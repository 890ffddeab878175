//! Dense row-major matrices and the logistic activation.
//!
//! Every numeric module stores examples one per row in a [`DataMatrix`]. The
//! products themselves are delegated to `ndarray`, which keeps the storage in
//! standard (C) layout so that a range of rows is one contiguous slice.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ShapeError {
    #[error("cannot multiply a {}x{} matrix by a {}x{} matrix", left.0, left.1, right.0, right.1)]
    Product {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{context}: expected shape {}x{}, got {}x{}", expected.0, expected.1, actual.0, actual.1)]
    Mismatch {
        context: &'static str,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("{context}: expected length {expected}, got {actual}")]
    Length {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("a matrix needs at least one column")]
    NoColumns,
}

/// Examples × features table of `f64` values.
///
/// Rows may be zero (an empty split), columns may not.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix(Array2<f64>);

impl DataMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DataMatrix(Array2::zeros((rows, cols)))
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        DataMatrix(Array2::from_elem((rows, cols), value))
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, ShapeError> {
        if cols == 0 {
            return Err(ShapeError::NoColumns);
        }
        if values.len() != rows * cols {
            return Err(ShapeError::Length {
                context: "matrix values",
                expected: rows * cols,
                actual: values.len(),
            });
        }
        Ok(DataMatrix(
            Array2::from_shape_vec((rows, cols), values).expect("length checked"),
        ))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, ShapeError> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(ShapeError::Length {
                    context: "matrix row",
                    expected: cols,
                    actual: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Self::from_vec(rows.len(), cols, values)
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }

    /// All values in row-major order.
    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice().expect("DataMatrix is always in standard layout")
    }

    pub fn row(&self, index: usize) -> &[f64] {
        let cols = self.cols();
        &self.as_slice()[index * cols..(index + 1) * cols]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[[row, col]]
    }

    /// Copies the given rows, in the given order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> DataMatrix {
        DataMatrix(self.0.select(Axis(0), indices))
    }

    /// First `n` rows (or all of them when there are fewer).
    pub fn head(&self, n: usize) -> DataMatrix {
        let n = n.min(self.rows());
        DataMatrix(self.0.slice(ndarray::s![..n, ..]).to_owned())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn all_in_unit_interval(&self) -> bool {
        self.0.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

impl From<Array2<f64>> for DataMatrix {
    fn from(array: Array2<f64>) -> Self {
        if array.is_standard_layout() {
            DataMatrix(array)
        } else {
            DataMatrix(array.as_standard_layout().into_owned())
        }
    }
}

impl<'a> From<&'a DataMatrix> for ArrayView2<'a, f64> {
    fn from(m: &'a DataMatrix) -> Self {
        m.view()
    }
}

/// Matrix product `a · b`.
pub fn matmul(a: &DataMatrix, b: &DataMatrix) -> Result<DataMatrix, ShapeError> {
    if a.cols() != b.rows() {
        return Err(ShapeError::Product {
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(DataMatrix::from(a.0.dot(&b.0)))
}

/// Logistic function, evaluated without overflow for any finite input.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Derivative of the logistic function expressed through its output `a = σ(x)`.
#[inline]
pub fn sigmoid_grad_from_output(a: f64) -> f64 {
    a * (1.0 - a)
}

pub fn sigmoid_matrix(m: &DataMatrix) -> DataMatrix {
    DataMatrix(m.0.mapv(sigmoid))
}

pub(crate) fn sigmoid_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(sigmoid);
}

/// `σ(input · weightsᵀ + bias)` for a batch of row vectors, with `weights`
/// stored as (outputs × inputs).
pub(crate) fn affine_sigmoid(
    input: ArrayView2<'_, f64>,
    weights: &Array2<f64>,
    bias: &Array1<f64>,
) -> Array2<f64> {
    let mut out = input.dot(&weights.t());
    Zip::from(out.rows_mut()).for_each(|mut row| {
        row += bias;
    });
    sigmoid_inplace(&mut out);
    out
}

pub(crate) fn check_cols(
    context: &'static str,
    data: ArrayView2<'_, f64>,
    expected: usize,
) -> Result<(), ShapeError> {
    if data.ncols() != expected {
        return Err(ShapeError::Mismatch {
            context,
            expected: (data.nrows(), expected),
            actual: data.dim(),
        });
    }
    Ok(())
}

/// Mean over rows of the per-row sum of squared differences.
pub(crate) fn mean_row_sq_error(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    Zip::from(&a).and(&b).for_each(|x, y| {
        let d = x - y;
        total += d * d;
    });
    total / a.nrows() as f64
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major `f64` tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeError(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Activations laid out channel-major as `[channels][batch][time]`, so a
/// convolution over the whole batch is a single matrix product and batch
/// norm statistics are contiguous per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Act {
    pub channels: usize,
    pub batch: usize,
    pub len: usize,
    pub data: Vec<f64>,
}

impl Act {
    pub fn zeros(channels: usize, batch: usize, len: usize) -> Self {
        Self {
            channels,
            batch,
            len,
            data: vec![0.0; channels * batch * len],
        }
    }

    /// Single-channel activations from per-sample rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let len = rows.first().map_or(0, |r| r.len());
        if let Some(r) = rows.iter().find(|r| r.len() != len) {
            return Err(Error::LengthMismatch {
                left: len,
                right: r.len(),
            });
        }
        Ok(Self {
            channels: 1,
            batch: rows.len(),
            len,
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        })
    }

    /// Elements per channel.
    pub fn plane(&self) -> usize {
        self.batch * self.len
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn same_shape(&self, other: &Act) -> bool {
        self.channels == other.channels && self.batch == other.batch && self.len == other.len
    }
}

/// `C = alpha * A·B + beta * C` with explicit row/column strides, backed by
/// `matrixmultiply`'s single-threaded kernel (fixed reduction order).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    c: &mut [f64],
    beta: f64,
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let span = |rows: usize, cols: usize, (rs, cs): (isize, isize)| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows as isize - 1) * rs + (cols as isize - 1) * cs + 1
        }
    };
    assert!(a.len() as isize >= span(m, k, a_strides));
    assert!(b.len() as isize >= span(k, n, b_strides));
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is written through a unique borrow.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

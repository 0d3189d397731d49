use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
///
/// All numeric state in the crate (images, activations, parameters) uses
/// `f64` so that runs are bit-reproducible across the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) && !values.is_empty() {
            return Err(Error::input(format!(
                "shape {shape:?} has a zero dimension"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::input(format!(
                "shape {shape:?} needs {expected} values, got {}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!(
                "non-finite value at flat index {pos}"
            )));
        }
        Ok(Tensor { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Size of the leading dimension.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Slice of the `i`-th entry along the leading dimension.
    pub fn row(&self, i: usize) -> &[f64] {
        let width = self.row_len();
        &self.values[i * width..(i + 1) * width]
    }

    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    /// Stacks equally sized samples into a tensor with a new leading batch axis.
    pub fn stack<'a, I>(sample_shape: &[usize], samples: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let width: usize = sample_shape.iter().product();
        let mut values = Vec::new();
        let mut count = 0;
        for s in samples {
            if s.len() != width {
                return Err(Error::input(format!(
                    "sample {count} has {} values, expected {width}",
                    s.len()
                )));
            }
            values.extend_from_slice(s);
            count += 1;
        }
        let mut shape = Vec::with_capacity(sample_shape.len() + 1);
        shape.push(count);
        shape.extend_from_slice(sample_shape);
        Ok(Tensor { shape, values })
    }
}

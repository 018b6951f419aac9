//! Dense row-major array.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::shape(shape, &[data.len()]));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(shape, &[data.len()]));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Length of the trailing (row) axis for a 2-D tensor.
    pub fn row_len(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[T] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let w = self.row_len();
        &mut self.data[i * w..(i + 1) * w]
    }

    /// Copy of rows `range` of a 2-D tensor.
    pub fn slice_rows(&self, range: Range<usize>) -> Self {
        let w = self.row_len();
        Self {
            shape: vec![range.len(), w],
            data: self.data[range.start * w..range.end * w].to_vec(),
        }
    }

    /// Overwrite rows starting at `start` with the rows of `block`.
    pub fn write_rows(&mut self, start: usize, block: &Tensor<T>) {
        let w = self.row_len();
        debug_assert_eq!(w, block.row_len());
        self.data[start * w..start * w + block.len()].copy_from_slice(&block.data);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }

    pub fn scale(&self, k: T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| v * k).collect(),
        }
    }

    pub(crate) fn expect_shape(&self, expected: &[usize]) -> Result<()> {
        if self.shape != expected {
            return Err(Error::shape(expected, &self.shape));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn element_count_matches_shape() {
        assert!(Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::from_vec(&[0, 3], vec![]).is_err());
    }

    #[test]
    fn row_views_and_block_writes() {
        let t = Tensor::<f64>::from_fn(&[4, 2], |i| i as f64);
        assert_eq!(t.row(2), &[4.0, 5.0]);
        let block = t.slice_rows(1..3);
        assert_eq!(block.shape(), &[2, 2]);
        let mut z = Tensor::<f64>::zeros(&[4, 2]);
        z.write_rows(1, &block);
        assert_eq!(z.data(), &[0.0, 0.0, 2.0, 3.0, 4.0, 5.0, 0.0, 0.0]);
    }
}

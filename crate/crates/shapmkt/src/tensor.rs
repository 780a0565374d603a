//! Minimal dense row-major tensor used on both the float side (model
//! weights, gradients) and the ring side (share pieces).

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E> {
    shape: Vec<usize>,
    data: Vec<E>,
}

impl<E> Tensor<E> {
    pub fn new(shape: Vec<usize>, data: Vec<E>) -> Result<Self> {
        let want: usize = shape.iter().product();
        if want != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} wants {want} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(v: E) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<E>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
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

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    /// Reinterpret the same buffer under a new shape of equal volume.
    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let want: usize = shape.iter().product();
        if want != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} ({} elems) to {shape:?}",
                self.shape,
                self.data.len()
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map<F, T>(&self, f: F) -> Tensor<T>
    where
        F: FnMut(&E) -> T,
    {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_shape(&self, other: &Tensor<E>) -> bool {
        self.shape == other.shape
    }
}

impl<E: Clone + Default> Tensor<E> {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![E::default(); n],
        }
    }
}

impl Tensor<f64> {
    /// `self` is `[rows, cols]`; returns `self * v`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        let (rows, cols) = self.as_matrix_dims()?;
        if v.len() != cols {
            return Err(Error::ShapeMismatch(format!(
                "matvec: matrix is {rows}x{cols}, vector has {}",
                v.len()
            )));
        }
        let mut out = vec![0.0; rows];
        for r in 0..rows {
            let row = &self.data[r * cols..(r + 1) * cols];
            out[r] = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
        Ok(out)
    }

    pub fn as_matrix_dims(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::ShapeMismatch(format!(
                "expected a matrix, got shape {other:?}"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_checks() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::new(vec![2, 3], vec![1.0; 6]).unwrap();
        assert!(t.clone().reshape(vec![3, 2]).is_ok());
        assert!(t.reshape(vec![4, 2]).is_err());
    }

    #[test]
    fn matvec_matches_hand_computation() {
        let m = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let out = m.matvec(&[1.0, 0.0, -1.0]).unwrap();
        assert_eq!(out, vec![-2.0, -2.0]);
        assert!(m.matvec(&[1.0, 2.0]).is_err());
    }
}

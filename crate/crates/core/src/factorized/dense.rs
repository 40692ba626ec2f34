use super::TensorizedShape;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Uncompressed `M × N` weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseWeights {
    shape: TensorizedShape,
    matrix: Matrix,
}

impl DenseWeights {
    pub fn zeros(shape: TensorizedShape) -> Self {
        let matrix = Matrix::zeros(shape.rows(), shape.cols());
        DenseWeights { shape, matrix }
    }

    pub fn from_matrix(shape: TensorizedShape, matrix: Matrix) -> Result<Self> {
        if matrix.rows() != shape.rows() || matrix.cols() != shape.cols() {
            return Err(Error::shape(format!(
                "{}x{} matrix for shape {shape}",
                matrix.rows(),
                matrix.cols()
            )));
        }
        Ok(DenseWeights { shape, matrix })
    }

    pub fn shape(&self) -> &TensorizedShape {
        &self.shape
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub(super) fn slices(&self) -> Vec<&[f64]> {
        vec![self.matrix.as_slice()]
    }

    pub(super) fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.matrix.as_mut_slice()]
    }

    pub(super) fn materialize(&self) -> Matrix {
        self.matrix.clone()
    }

    pub(super) fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.matvec(x).expect("input length checked by caller")
    }

    pub(super) fn accumulate_vjp(&self, x: &[f64], upstream: &[f64], grad: &mut DenseWeights) -> Vec<f64> {
        grad.matrix.add_outer(1.0, upstream, x);
        self.matrix
            .matvec_transposed(upstream)
            .expect("upstream length checked by caller")
    }
}

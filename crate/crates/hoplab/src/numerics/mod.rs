//! Dense f64 tensors with reverse-mode gradient computation.
//!
//! This is the only module that touches raw numeric arrays. Everything is
//! 64-bit, row-major, and single-threaded per tape; identical inputs give
//! bit-identical outputs and gradients. Transcendentals go through `libm`
//! so results do not depend on the platform's libm.

mod tape;

pub use tape::{Tape, ValueId};

use thiserror::Error;

/// Errors from tensor construction and tape operations.
#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("tensor data length {len} does not match shape {shape:?}")]
    ShapeDataMismatch { shape: Vec<usize>, len: usize },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("value id {id} is not on this tape")]
    NotOnTape { id: usize },
    #[error("grad: loss must be a single-element tensor, got shape {shape:?}")]
    LossNotScalar { shape: Vec<usize> },
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// Dense row-major tensor of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor, checking that the data length matches the shape.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.contains(&0) || numel != data.len() {
            return Err(NumericsError::ShapeDataMismatch {
                shape,
                len: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
        }
    }

    /// 1x1 tensor holding a single value.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    /// 2-D matrix from a flat row-major slice.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Row count of a 2-D tensor (1 for vectors).
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Column count of a 2-D tensor (length for vectors).
    pub fn cols(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[1]
        } else {
            self.shape[0]
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// The single value of a 1-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }
}

/// Central-difference gradient estimate, one scalar parameter at a time:
/// `(loss(x + eps) - loss(x - eps)) / 2 eps`.
///
/// This is the test oracle against which the tape's analytic gradients are
/// checked; it must stay independent of the tape.
pub fn finite_diff_grad<E>(
    mut loss_fn: impl FnMut(&[Tensor]) -> std::result::Result<f64, E>,
    params: &[Tensor],
    epsilon: f64,
) -> std::result::Result<Vec<Tensor>, E> {
    assert!(epsilon > 0.0, "epsilon must be positive");
    let mut work: Vec<Tensor> = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for p_idx in 0..params.len() {
        let mut grad = Tensor::zeros(params[p_idx].shape().to_vec());
        for k in 0..params[p_idx].numel() {
            let orig = work[p_idx].data()[k];
            work[p_idx].data_mut()[k] = orig + epsilon;
            let plus = loss_fn(&work)?;
            work[p_idx].data_mut()[k] = orig - epsilon;
            let minus = loss_fn(&work)?;
            work[p_idx].data_mut()[k] = orig;
            grad.data_mut()[k] = (plus - minus) / (2.0 * epsilon);
        }
        grads.push(grad);
    }
    Ok(grads)
}

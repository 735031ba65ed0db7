//! Dense float tensors and a tape-based reverse-mode autodiff engine.
//!
//! Attacks re-differentiate every iteration, so the tape is built per
//! forward call and dropped after `backward`. A tape and its variables
//! are confined to one thread; independent tapes may run concurrently.

mod grad;
mod ops;
mod tape;

pub mod finite_diff;

pub use ops::{dct8_apply, dct8_matrix};
pub use tape::{Gradients, NodeId, Tape, Var};

use crate::error::{CoreError, Result};

/// Dense row-major float tensor. Values are finite by construction;
/// every tape primitive re-checks finiteness on its output.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    data: Vec<f64>,
    shape: Vec<usize>,
}

impl Tensor {
    pub fn new(data: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(CoreError::BadShape {
                op: "tensor",
                expected: format!("{} elements", data.len()),
                got: shape,
            });
        }
        Ok(Tensor { data, shape })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            data: vec![0.0; numel],
            shape: shape.to_vec(),
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            data: vec![value; numel],
            shape: shape.to_vec(),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            data: vec![value],
            shape: vec![],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Snap every value to the nearest f32, in place. Keeps the 32-bit
    /// on-disk checkpoint format a lossless round trip.
    pub fn snap_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(CoreError::BadShape {
                op: "reshape",
                expected: format!("{} elements", self.data.len()),
                got: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Max absolute difference against another tensor of the same shape.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn mse(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        let n = self.numel().max(1) as f64;
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n
    }
}

/// Batch of images in [0,1], shape (count, channels, height, width).
pub type ImageBatch = Tensor;

/// Dimensions of a (B,C,H,W) tensor, checked.
pub fn bchw(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize, usize)> {
    match t.shape() {
        [b, c, h, w] => Ok((*b, *c, *h, *w)),
        other => Err(CoreError::BadShape {
            op,
            expected: "(batch, channels, height, width)".into(),
            got: other.to_vec(),
        }),
    }
}

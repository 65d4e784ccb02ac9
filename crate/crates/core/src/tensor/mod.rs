//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! Tensors are immutable, row-major, and at most rank 2 in practice
//! (vectors and matrices; rank 0 is a scalar). A [`Tape`] records every
//! primitive applied to tape-attached tensors (define-by-run); tapes are
//! rebuilt on every training step. [`backward`] replays the records in
//! reverse to accumulate adjoints.

mod grad_check;
mod ops;
mod tape;

pub use grad_check::{grad_check, GradCheckEntry, GradCheckReport};
pub use ops::{AxisSpec, Primitive};
pub use tape::{backward, Bindings, Gradients, Tape};

use std::sync::Arc;

use crate::error::{Error, Result};

pub type NodeId = usize;

#[derive(Clone)]
pub(crate) struct BoundNode {
    pub tape: Tape,
    pub id: NodeId,
}

/// Immutable dense array of 64-bit reals, optionally attached to a tape.
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Arc<[f64]>,
    pub(crate) node: Option<BoundNode>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("values", &&self.values[..self.values.len().min(8)])
            .field("attached", &self.node.is_some())
            .finish()
    }
}

impl Tensor {
    /// Build a detached tensor. Panics if the shape does not match the
    /// number of values; construction sites control both.
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "tensor shape {:?} does not match {} values",
            shape,
            values.len()
        );
        Tensor { shape, values: values.into(), node: None }
    }

    pub fn scalar_value(v: f64) -> Tensor {
        Tensor::new(vec![], vec![v])
    }

    pub fn vector(values: Vec<f64>) -> Tensor {
        let n = values.len();
        Tensor::new(vec![n], values)
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Tensor {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::new(shape.to_vec(), vec![0.0; shape.iter().product()])
    }

    pub fn full(shape: &[usize], v: f64) -> Tensor {
        Tensor::new(shape.to_vec(), vec![v; shape.iter().product()])
    }

    pub fn identity(n: usize) -> Tensor {
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            v[i * n + i] = 1.0;
        }
        Tensor::matrix(n, n, v)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_attached(&self) -> bool {
        self.node.is_some()
    }

    /// The single value of a scalar (or any one-element) tensor.
    pub fn scalar(&self) -> f64 {
        assert_eq!(self.len(), 1, "scalar() on tensor of shape {:?}", self.shape);
        self.values[0]
    }

    /// Copy of this tensor with no tape attachment.
    pub fn detached(&self) -> Tensor {
        Tensor { shape: self.shape.clone(), values: self.values.clone(), node: None }
    }

    /// Reinterpret a detached tensor's values under a new shape.
    /// Attached tensors cannot be reshaped (there is no reshape record).
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Tensor> {
        if self.node.is_some() {
            return Err(Error::shape("reshape", "cannot reshape a tape-attached tensor"));
        }
        if shape.iter().product::<usize>() != self.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {:?}", self.shape, shape),
            ));
        }
        Ok(Tensor { shape, values: self.values.clone(), node: None })
    }

    /// One row of a rank-2 tensor as a detached vector.
    pub fn row(&self, i: usize) -> Tensor {
        assert_eq!(self.shape.len(), 2);
        let d = self.shape[1];
        Tensor::vector(self.values[i * d..(i + 1) * d].to_vec())
    }

    pub(crate) fn values_arc(&self) -> Arc<[f64]> {
        self.values.clone()
    }

    pub(crate) fn from_parts(shape: Vec<usize>, values: Arc<[f64]>, node: Option<BoundNode>) -> Tensor {
        Tensor { shape, values, node }
    }

    // Primitive wrappers. All recording goes through `ops::apply`.

    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        ops::apply(Primitive::Matmul, &[self, rhs])
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        ops::apply(Primitive::Add, &[self, rhs])
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        ops::apply(Primitive::Sub, &[self, rhs])
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        ops::apply(Primitive::Mul, &[self, rhs])
    }

    pub fn negate(&self) -> Result<Tensor> {
        ops::apply(Primitive::Negate, &[self])
    }

    pub fn exp(&self) -> Result<Tensor> {
        ops::apply(Primitive::Exp, &[self])
    }

    pub fn log(&self) -> Result<Tensor> {
        ops::apply(Primitive::Log, &[self])
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        ops::apply(Primitive::Sigmoid, &[self])
    }

    pub fn softplus(&self) -> Result<Tensor> {
        ops::apply(Primitive::Softplus, &[self])
    }

    pub fn tanh(&self) -> Result<Tensor> {
        ops::apply(Primitive::Tanh, &[self])
    }

    pub fn relu(&self) -> Result<Tensor> {
        ops::apply(Primitive::Relu, &[self])
    }

    pub fn square(&self) -> Result<Tensor> {
        ops::apply(Primitive::Square, &[self])
    }

    pub fn sum_all(&self) -> Result<Tensor> {
        ops::apply(Primitive::Sum { axes: AxisSpec::All }, &[self])
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        ops::apply(Primitive::Sum { axes: AxisSpec::Axis(axis) }, &[self])
    }

    pub fn mean_all(&self) -> Result<Tensor> {
        ops::apply(Primitive::Mean { axes: AxisSpec::All }, &[self])
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        ops::apply(Primitive::Mean { axes: AxisSpec::Axis(axis) }, &[self])
    }

    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        ops::apply(Primitive::Slice { axis, start, len }, &[self])
    }

    /// Elementwise multiplication by a constant (a `mul` against a filled
    /// tensor, not a separate primitive).
    pub fn scale(&self, c: f64) -> Result<Tensor> {
        self.mul(&Tensor::full(&self.shape, c))
    }

    /// Elementwise addition of a constant.
    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        self.add(&Tensor::full(&self.shape, c))
    }

    /// Clamp to `[lo, hi]` composed from relu: `lo + relu(x-lo) - relu(x-hi)`.
    /// Gradient is 1 inside the interval and 0 outside (relu'(0) = 0).
    pub fn clamp_via_relu(&self, lo: f64, hi: f64) -> Result<Tensor> {
        let a = self.add_scalar(-lo)?.relu()?;
        let b = self.add_scalar(-hi)?.relu()?;
        a.sub(&b)?.add_scalar(lo)
    }
}

/// Concatenate along `axis`. All inputs must agree on the other axis.
pub fn concat(inputs: &[&Tensor], axis: usize) -> Result<Tensor> {
    ops::apply(Primitive::Concat { axis }, inputs)
}

/// Apply a named primitive to a list of inputs, recording on a tape if any
/// input is attached.
pub fn apply_primitive(prim: Primitive, inputs: &[&Tensor]) -> Result<Tensor> {
    ops::apply(prim, inputs)
}

/// A named, optionally trainable tensor.
#[derive(Clone)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Parameter {
        Parameter { name: name.into(), tensor: tensor.detached(), trainable: true }
    }
}

#[cfg(test)]
mod tests;

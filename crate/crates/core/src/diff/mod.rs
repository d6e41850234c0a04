//! Dense f64 arrays with tape-based reverse-mode differentiation.
//!
//! Values are immutable once created (shared via `Arc`), so no primitive can
//! mutate its inputs and read-only sharing across threads is safe. A [`Tape`]
//! is rebuilt for every forward pass (define-by-run); applying a primitive
//! records it on the tape only when at least one input is tracked, so the same
//! forward code serves both training and evaluation.

mod check;
mod kernels;
mod tape;

pub use check::finite_difference_check;
pub use tape::{GradMap, NodeId, Tape};

use std::sync::Arc;

use crate::error::{Error, Result};

/// A primitive operation together with its attributes.
#[derive(Debug, Clone)]
pub enum Primitive {
    /// 2-D matrix product: [m,k] x [k,n] -> [m,n].
    MatMul,
    /// Elementwise sum; the second operand may be a suffix-shaped broadcast
    /// (e.g. adding a [d] bias to every row of a [r,d] matrix).
    Add,
    /// Multiply every element by a constant.
    Scale { factor: f64 },
    /// Row-wise softmax over the last axis of a 2-D array.
    SoftmaxRows,
    /// Row-wise layer normalization with affine parameters:
    /// inputs (x [r,c], gain [c], bias [c]).
    LayerNorm { epsilon: f64 },
    /// GELU activation, tanh approximation.
    Gelu,
    /// Elementwise tanh.
    Tanh,
    /// Gather rows of a [n, d] table by index: output [len(indices), d].
    EmbeddingGather { indices: Arc<[usize]> },
    /// 2-D matrix transpose.
    Transpose,
    /// Reinterpret the value buffer under a new shape (same element count).
    Reshape { shape: Vec<usize> },
    /// inputs (x, mask); output takes `fill` wherever mask > 0.5, x elsewhere.
    MaskedFill { fill: f64 },
    /// inputs (logits [p, vocab]); mean over positions of
    /// -log softmax(logits_row)[target]. Output is a scalar.
    CrossEntropyAtPositions { targets: Arc<[usize]> },
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Scale { .. } => "scale",
            Primitive::SoftmaxRows => "softmax-rows",
            Primitive::LayerNorm { .. } => "layer-norm",
            Primitive::Gelu => "gelu",
            Primitive::Tanh => "tanh",
            Primitive::EmbeddingGather { .. } => "embedding-gather",
            Primitive::Transpose => "transpose",
            Primitive::Reshape { .. } => "reshape",
            Primitive::MaskedFill { .. } => "masked-fill",
            Primitive::CrossEntropyAtPositions { .. } => "cross-entropy-at-positions",
        }
    }
}

/// Dense row-major f64 array, optionally tracked on a tape.
#[derive(Debug, Clone)]
pub struct DiffArray {
    shape: Vec<usize>,
    values: Arc<[f64]>,
    node: Option<NodeId>,
}

impl DiffArray {
    pub fn from_vec(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != values.len() {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                detail: format!("shape {:?} needs {} values, got {}", shape, expect, values.len()),
            });
        }
        Ok(DiffArray {
            shape,
            values: values.into(),
            node: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        DiffArray {
            shape: shape.to_vec(),
            values: vec![0.0; n].into(),
            node: None,
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n: usize = shape.iter().product();
        DiffArray {
            shape: shape.to_vec(),
            values: vec![value; n].into(),
            node: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        DiffArray {
            shape: vec![1],
            values: vec![value].into(),
            node: None,
        }
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

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// The single value of a scalar array.
    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() on non-scalar of shape {:?}", self.shape);
        self.values[0]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Untracked copy sharing the same value buffer.
    pub fn detached(&self) -> Self {
        DiffArray {
            shape: self.shape.clone(),
            values: Arc::clone(&self.values),
            node: None,
        }
    }

    pub(crate) fn with_node(&self, node: NodeId) -> Self {
        DiffArray {
            shape: self.shape.clone(),
            values: Arc::clone(&self.values),
            node: Some(node),
        }
    }

    pub(crate) fn share_values(&self) -> Arc<[f64]> {
        Arc::clone(&self.values)
    }

    pub(crate) fn from_shared(shape: Vec<usize>, values: Arc<[f64]>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        DiffArray {
            shape,
            values,
            node: None,
        }
    }
}

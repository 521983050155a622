//! Dense `f64` matrices, a recording tape for reverse-mode gradients, and the
//! optimizer used by both training and mask search.

mod edges;
mod matrix;
mod optim;
mod tape;

pub use edges::EdgeIndex;
pub use matrix::{argmax, sigmoid, Matrix};
pub use optim::Adam;
pub use tape::{Gradients, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {}x{} and {}x{}", left.0, left.1, right.0, right.1)]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op}: expected a square matrix, got {}x{}", shape.0, shape.1)]
    NotSquare {
        op: &'static str,
        shape: (usize, usize),
    },
    #[error("{len} values cannot fill a {rows}x{cols} matrix")]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("row {row} has {found} values, expected {expected}")]
    RaggedRows {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("{0}")]
    Usage(String),
}

impl TensorError {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        TensorError::Shape { op, left, right }
    }
}

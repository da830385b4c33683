use thiserror::Error;

use crate::linalg::Shape;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Two stacks that must agree in shape do not.
    #[error("{op}: shape mismatch: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    /// A mixing or output vector does not match the depth it is applied to.
    #[error("{op}: depth mismatch: vector of dim {dim} vs depth {depth}")]
    DepthMismatch {
        op: &'static str,
        dim: usize,
        depth: usize,
    },

    /// A cropping/embedding window falls outside the matrix it indexes into.
    /// All indices are 1-based.
    #[error("{op}: window (j={j}, k={k}, p={p}, q={q}) out of bounds for {rows}x{cols} input")]
    WindowOutOfBounds {
        op: &'static str,
        j: usize,
        k: usize,
        p: usize,
        q: usize,
        rows: usize,
        cols: usize,
    },

    /// Inconsistent convolution/pooling geometry.
    #[error("geometry: {0}")]
    Geometry(String),

    /// Invalid run configuration (parse errors carry 1-based line numbers).
    #[error("config: {0}")]
    Config(String),

    /// Malformed dataset or tangent file (parse errors carry 1-based line numbers).
    #[error("data: {0}")]
    Data(String),

    /// A call that violates an argument-level precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

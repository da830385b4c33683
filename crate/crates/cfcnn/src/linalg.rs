//! Dense storage and inner-product arithmetic for stacks of feature maps.
//!
//! A [`FeatureStack`] is an element of the tensor-product space of real
//! `rows x cols` matrices with a depth-`m` vector: an ordered stack of `m`
//! matrix slices sharing one shape. All bases are the standard orthonormal
//! ones, so a stack is fully determined by its scalar array. Public indices
//! are 1-based throughout; storage is slice-major (slice outermost, row-major
//! within a slice).

use std::fmt;

use crate::error::{Error, Result};

/// Shape of a [`FeatureStack`]: `rows x cols` matrices stacked `depth` deep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
    pub depth: usize,
}

impl Shape {
    pub fn new(rows: usize, cols: usize, depth: usize) -> Self {
        Shape { rows, cols, depth }
    }

    /// Total number of scalars.
    pub fn len(&self) -> usize {
        self.rows * self.cols * self.depth
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.rows, self.cols, self.depth)
    }
}

/// A stack of `depth` real matrices of common shape `rows x cols`.
///
/// Storage is slice-major: scalar `(a, j, k)` (slice `a`, row `j`, column
/// `k`, all 1-based) lives at flat index `(a-1)*rows*cols + (j-1)*cols +
/// (k-1)`. Values are plain `f64`; operations never mutate their inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    shape: Shape,
    data: Vec<f64>,
}

impl FeatureStack {
    /// All-zero stack of the given shape. Dimensions must be positive.
    pub fn zeros(rows: usize, cols: usize, depth: usize) -> Self {
        assert!(
            rows > 0 && cols > 0 && depth > 0,
            "FeatureStack dimensions must be positive, got {rows}x{cols}x{depth}"
        );
        FeatureStack {
            shape: Shape::new(rows, cols, depth),
            data: vec![0.0; rows * cols * depth],
        }
    }

    pub fn zeros_like(other: &FeatureStack) -> Self {
        FeatureStack {
            shape: other.shape,
            data: vec![0.0; other.data.len()],
        }
    }

    /// Stack filled with a constant.
    pub fn filled(rows: usize, cols: usize, depth: usize, value: f64) -> Self {
        let mut s = Self::zeros(rows, cols, depth);
        s.data.iter_mut().for_each(|x| *x = value);
        s
    }

    /// Builds a stack from a flat slice-major scalar array.
    pub fn from_vec(rows: usize, cols: usize, depth: usize, data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(rows, cols, depth);
        if data.len() != shape.len() {
            return Err(Error::InvalidArgument(format!(
                "FeatureStack::from_vec: expected {} scalars for shape {}, got {}",
                shape.len(),
                shape,
                data.len()
            )));
        }
        Ok(FeatureStack { shape, data })
    }

    /// Single-slice stack from a row-major matrix. Convenience for tests and
    /// small fixtures.
    pub fn single(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_vec(rows, cols, 1, data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape.rows
    }

    pub fn cols(&self) -> usize {
        self.shape.cols
    }

    pub fn depth(&self) -> usize {
        self.shape.depth
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Flat slice-major view of the scalars.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    fn index(&self, slice: usize, row: usize, col: usize) -> usize {
        debug_assert!(
            slice >= 1 && slice <= self.shape.depth,
            "slice index {slice} out of range 1..={}",
            self.shape.depth
        );
        debug_assert!(row >= 1 && row <= self.shape.rows);
        debug_assert!(col >= 1 && col <= self.shape.cols);
        (slice - 1) * self.shape.rows * self.shape.cols + (row - 1) * self.shape.cols + (col - 1)
    }

    /// Reads scalar `(slice, row, col)`, 1-based.
    #[inline]
    pub fn get(&self, slice: usize, row: usize, col: usize) -> f64 {
        self.data[self.index(slice, row, col)]
    }

    /// Writes scalar `(slice, row, col)`, 1-based.
    #[inline]
    pub fn set(&mut self, slice: usize, row: usize, col: usize, value: f64) {
        let i = self.index(slice, row, col);
        self.data[i] = value;
    }

    pub fn same_shape(&self, other: &FeatureStack) -> bool {
        self.shape == other.shape
    }

    fn require_same_shape(&self, other: &FeatureStack, op: &'static str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                op,
                left: self.shape,
                right: other.shape,
            })
        }
    }

    /// Inner product: the sum over all positions of elementwise products.
    /// The reduction is sequential in flat index order for reproducibility.
    pub fn inner(&self, other: &FeatureStack) -> Result<f64> {
        self.require_same_shape(other, "inner")?;
        let mut acc = 0.0;
        for (x, y) in self.data.iter().zip(other.data.iter()) {
            acc += x * y;
        }
        Ok(acc)
    }

    /// Elementwise (Hadamard) product, extended slice-wise over the stack.
    pub fn hadamard(&self, other: &FeatureStack) -> Result<FeatureStack> {
        self.require_same_shape(other, "hadamard")?;
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(x, y)| x * y)
            .collect();
        Ok(FeatureStack {
            shape: self.shape,
            data,
        })
    }

    /// Squared norm induced by the inner product; equals `inner(self, self)`.
    pub fn norm_sq(&self) -> f64 {
        let mut acc = 0.0;
        for x in &self.data {
            acc += x * x;
        }
        acc
    }

    /// `self + other`.
    pub fn add(&self, other: &FeatureStack) -> Result<FeatureStack> {
        self.require_same_shape(other, "add")?;
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(x, y)| x + y)
            .collect();
        Ok(FeatureStack {
            shape: self.shape,
            data,
        })
    }

    /// `self - other`.
    pub fn sub(&self, other: &FeatureStack) -> Result<FeatureStack> {
        self.require_same_shape(other, "sub")?;
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(x, y)| x - y)
            .collect();
        Ok(FeatureStack {
            shape: self.shape,
            data,
        })
    }

    /// `alpha * self`.
    pub fn scaled(&self, alpha: f64) -> FeatureStack {
        FeatureStack {
            shape: self.shape,
            data: self.data.iter().map(|x| alpha * x).collect(),
        }
    }

    /// Applies a scalar map to every entry.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> FeatureStack {
        FeatureStack {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}

/// `alpha * x + y`.
pub fn axpy(alpha: f64, x: &FeatureStack, y: &FeatureStack) -> Result<FeatureStack> {
    if !x.same_shape(y) {
        return Err(Error::ShapeMismatch {
            op: "axpy",
            left: x.shape(),
            right: y.shape(),
        });
    }
    let data = x
        .data
        .iter()
        .zip(y.data.iter())
        .map(|(a, b)| alpha * a + b)
        .collect();
    Ok(FeatureStack {
        shape: x.shape,
        data,
    })
}

/// A plain real vector. Houses mixing vectors, network outputs, and tangent
/// targets; a network output of `N` classes is the depth view of a `1x1xN`
/// stack.
#[derive(Debug, Clone, PartialEq)]
pub struct Vec1D {
    data: Vec<f64>,
}

impl Vec1D {
    pub fn from_vec(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "Vec1D must have positive dim");
        Vec1D { data }
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "Vec1D must have positive dim");
        Vec1D {
            data: vec![0.0; dim],
        }
    }

    pub fn ones(dim: usize) -> Self {
        assert!(dim > 0, "Vec1D must have positive dim");
        Vec1D {
            data: vec![1.0; dim],
        }
    }

    /// Standard basis vector `e_i` (1-based).
    pub fn basis(dim: usize, i: usize) -> Self {
        assert!(i >= 1 && i <= dim, "basis index {i} out of range 1..={dim}");
        let mut v = Self::zeros(dim);
        v.data[i - 1] = 1.0;
        v
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Component `i`, 1-based.
    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.data[i - 1]
    }

    pub fn set(&mut self, i: usize, value: f64) {
        self.data[i - 1] = value;
    }

    pub fn inner(&self, other: &Vec1D) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DepthMismatch {
                op: "Vec1D::inner",
                dim: self.dim(),
                depth: other.dim(),
            });
        }
        let mut acc = 0.0;
        for (x, y) in self.data.iter().zip(other.data.iter()) {
            acc += x * y;
        }
        Ok(acc)
    }

    pub fn sub(&self, other: &Vec1D) -> Result<Vec1D> {
        if self.dim() != other.dim() {
            return Err(Error::DepthMismatch {
                op: "Vec1D::sub",
                dim: self.dim(),
                depth: other.dim(),
            });
        }
        Ok(Vec1D {
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(x, y)| x - y)
                .collect(),
        })
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// Views the vector as a `1x1xdim` stack.
    pub fn to_stack(&self) -> FeatureStack {
        FeatureStack {
            shape: Shape::new(1, 1, self.data.len()),
            data: self.data.clone(),
        }
    }

    /// Depth view of a `1x1xN` stack as a vector of dim `N`.
    pub fn from_stack(stack: &FeatureStack) -> Result<Vec1D> {
        if stack.rows() != 1 || stack.cols() != 1 {
            return Err(Error::InvalidArgument(format!(
                "Vec1D::from_stack: expected a 1x1xN stack, got {}",
                stack.shape()
            )));
        }
        Ok(Vec1D {
            data: stack.data().to_vec(),
        })
    }
}

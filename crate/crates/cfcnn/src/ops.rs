//! The structural operators of a convolutional layer — cropping, embedding,
//! mixing, convolution, average pooling — and the elementwise activation
//! maps, each paired with its adjoint.
//!
//! Every linear operator `L` here satisfies the adjoint identity
//! `<y, L x> = <L* y, x>`; the pairs are exercised against dense-matrix
//! transposition in the `verify` module. Convolution is a window inner
//! product (cross-correlation): no kernel flipping, no padding, output
//! dimensions are the maximal grid fitting the stride.

use crate::error::{Error, Result};
use crate::linalg::{FeatureStack, Shape, Vec1D};

/// Static geometry of one convolution: input dims, filter dims `p x q`,
/// stride, and the derived output dims.
///
/// The output grid is maximal for the stride: `out_rows` is the largest
/// count such that the last window `1 + (out_rows-1)*stride .. +p-1` still
/// lies inside the input, and likewise for columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    in_rows: usize,
    in_cols: usize,
    filter_rows: usize,
    filter_cols: usize,
    stride: usize,
    out_rows: usize,
    out_cols: usize,
}

impl ConvGeometry {
    pub fn new(
        in_rows: usize,
        in_cols: usize,
        filter_rows: usize,
        filter_cols: usize,
        stride: usize,
    ) -> Result<Self> {
        if in_rows == 0 || in_cols == 0 || filter_rows == 0 || filter_cols == 0 || stride == 0 {
            return Err(Error::Geometry(format!(
                "all dimensions must be positive: input {in_rows}x{in_cols}, \
                 filter {filter_rows}x{filter_cols}, stride {stride}"
            )));
        }
        if filter_rows > in_rows || filter_cols > in_cols {
            return Err(Error::Geometry(format!(
                "filter {filter_rows}x{filter_cols} does not fit in input {in_rows}x{in_cols}"
            )));
        }
        let out_rows = (in_rows - filter_rows) / stride + 1;
        let out_cols = (in_cols - filter_cols) / stride + 1;
        Ok(ConvGeometry {
            in_rows,
            in_cols,
            filter_rows,
            filter_cols,
            stride,
            out_rows,
            out_cols,
        })
    }

    pub fn in_rows(&self) -> usize {
        self.in_rows
    }

    pub fn in_cols(&self) -> usize {
        self.in_cols
    }

    pub fn filter_rows(&self) -> usize {
        self.filter_rows
    }

    pub fn filter_cols(&self) -> usize {
        self.filter_cols
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn out_rows(&self) -> usize {
        self.out_rows
    }

    pub fn out_cols(&self) -> usize {
        self.out_cols
    }

    /// Top-left corner (1-based) of the window producing output entry
    /// `(j, k)`.
    #[inline]
    pub fn window_origin(&self, j: usize, k: usize) -> (usize, usize) {
        (1 + (j - 1) * self.stride, 1 + (k - 1) * self.stride)
    }

    pub fn in_shape(&self, depth: usize) -> Shape {
        Shape::new(self.in_rows, self.in_cols, depth)
    }

    pub fn out_shape(&self, depth: usize) -> Shape {
        Shape::new(self.out_rows, self.out_cols, depth)
    }
}

/// Filters plus the fixed per-output-slice mixing vectors.
///
/// `filters` is a `p x q x out_depth` stack; `mixing[a]` (dim `in_depth`)
/// weights the input slices feeding output slice `a`. Mixing vectors are
/// structural constants, not trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    filters: FeatureStack,
    mixing: Vec<Vec1D>,
    in_depth: usize,
}

impl FilterBank {
    pub fn new(filters: FeatureStack, mixing: Vec<Vec1D>) -> Result<Self> {
        if mixing.len() != filters.depth() {
            return Err(Error::InvalidArgument(format!(
                "FilterBank: {} mixing vectors for {} filters",
                mixing.len(),
                filters.depth()
            )));
        }
        let in_depth = mixing[0].dim();
        if let Some(bad) = mixing.iter().find(|v| v.dim() != in_depth) {
            return Err(Error::InvalidArgument(format!(
                "FilterBank: mixing vectors must share one dim, found {} and {}",
                in_depth,
                bad.dim()
            )));
        }
        Ok(FilterBank {
            filters,
            mixing,
            in_depth,
        })
    }

    /// Bank with all-ones mixing: every input slice contributes with weight
    /// one to every output slice (full connectivity).
    pub fn full_mixing(filters: FeatureStack, in_depth: usize) -> Self {
        let mixing = vec![Vec1D::ones(in_depth); filters.depth()];
        FilterBank {
            filters,
            mixing,
            in_depth,
        }
    }

    pub fn filters(&self) -> &FeatureStack {
        &self.filters
    }

    pub fn mixing(&self) -> &[Vec1D] {
        &self.mixing
    }

    pub fn in_depth(&self) -> usize {
        self.in_depth
    }

    pub fn out_depth(&self) -> usize {
        self.filters.depth()
    }

    pub fn filter_rows(&self) -> usize {
        self.filters.rows()
    }

    pub fn filter_cols(&self) -> usize {
        self.filters.cols()
    }

    /// Same mixing, different filter values. Filter shape must match.
    pub fn with_filters(&self, filters: FeatureStack) -> Result<Self> {
        if filters.shape() != self.filters.shape() {
            return Err(Error::ShapeMismatch {
                op: "FilterBank::with_filters",
                left: self.filters.shape(),
                right: filters.shape(),
            });
        }
        Ok(FilterBank {
            filters,
            mixing: self.mixing.clone(),
            in_depth: self.in_depth,
        })
    }
}

/// Elementwise activation. Each variant fixes the scalar map together with
/// its exact analytic first and second derivatives.
///
/// `Identity` is a linear hook for isolating operator plumbing in tests; the
/// run-configuration parser does not accept it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nonlinearity {
    Tanh,
    Sigmoid,
    /// Ramp `max(0, x)`. Derivative convention at the kink: first derivative
    /// 0 at 0, second derivative 0 everywhere.
    Relu,
    Identity,
}

impl Nonlinearity {
    /// Scalar activation.
    #[inline]
    pub fn sigma(&self, x: f64) -> f64 {
        match self {
            Nonlinearity::Tanh => x.tanh(),
            Nonlinearity::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Nonlinearity::Relu => x.max(0.0),
            Nonlinearity::Identity => x,
        }
    }

    /// Exact first derivative of [`sigma`](Self::sigma).
    #[inline]
    pub fn sigma_d1(&self, x: f64) -> f64 {
        match self {
            Nonlinearity::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Nonlinearity::Sigmoid => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 - s)
            }
            Nonlinearity::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Nonlinearity::Identity => 1.0,
        }
    }

    /// Exact second derivative of [`sigma`](Self::sigma).
    #[inline]
    pub fn sigma_d2(&self, x: f64) -> f64 {
        match self {
            Nonlinearity::Tanh => {
                let t = x.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Nonlinearity::Sigmoid => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            Nonlinearity::Relu | Nonlinearity::Identity => 0.0,
        }
    }

    /// Applies the activation to every scalar of the stack.
    pub fn apply(&self, z: &FeatureStack) -> FeatureStack {
        z.map(|x| self.sigma(x))
    }

    /// Elementwise first derivative of the activation.
    pub fn apply_d1(&self, z: &FeatureStack) -> FeatureStack {
        z.map(|x| self.sigma_d1(x))
    }

    /// Elementwise second derivative of the activation.
    pub fn apply_d2(&self, z: &FeatureStack) -> FeatureStack {
        z.map(|x| self.sigma_d2(x))
    }

    /// Derivative action at `z` applied to a tangent `v`: elementwise
    /// `sigma'(z) * v`. This operator is self-adjoint.
    pub fn d_apply(&self, z: &FeatureStack, v: &FeatureStack) -> Result<FeatureStack> {
        self.apply_d1(z).hadamard(v)
    }

    /// Second-derivative action at `z` applied to tangents `(v, w)`:
    /// elementwise `sigma''(z) * v * w`. Evaluated as `sigma''(z) * (v * w)`
    /// so the symmetry in `(v, w)` is exact; with one tangent fixed it is
    /// self-adjoint.
    pub fn d2_apply(
        &self,
        z: &FeatureStack,
        v: &FeatureStack,
        w: &FeatureStack,
    ) -> Result<FeatureStack> {
        self.apply_d2(z).hadamard(&v.hadamard(w)?)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Nonlinearity::Tanh => "tanh",
            Nonlinearity::Sigmoid => "sigmoid",
            Nonlinearity::Relu => "relu",
            Nonlinearity::Identity => "identity",
        }
    }

    /// Parses a configuration name. The identity hook is intentionally not
    /// accepted here.
    pub fn from_config_name(name: &str) -> Result<Self> {
        match name {
            "tanh" => Ok(Nonlinearity::Tanh),
            "sigmoid" => Ok(Nonlinearity::Sigmoid),
            "relu" => Ok(Nonlinearity::Relu),
            other => Err(Error::Config(format!(
                "unknown nonlinearity `{other}` (expected tanh, sigmoid, or relu)"
            ))),
        }
    }
}

/// Extracts the `p x q` window with top-left corner `(j, k)` from every
/// slice. Indices are 1-based.
pub fn crop(x: &FeatureStack, j: usize, k: usize, p: usize, q: usize) -> Result<FeatureStack> {
    check_window("crop", x.rows(), x.cols(), j, k, p, q)?;
    let mut out = FeatureStack::zeros(p, q, x.depth());
    for a in 1..=x.depth() {
        for r in 1..=p {
            for s in 1..=q {
                out.set(a, r, s, x.get(a, j + r - 1, k + s - 1));
            }
        }
    }
    Ok(out)
}

/// Places `y` into an otherwise-zero `rows x cols` stack with top-left
/// corner `(j, k)`, slice-wise. This is the adjoint of [`crop`] at the same
/// window.
pub fn embed(
    y: &FeatureStack,
    j: usize,
    k: usize,
    rows: usize,
    cols: usize,
) -> Result<FeatureStack> {
    check_window("embed", rows, cols, j, k, y.rows(), y.cols())?;
    let mut out = FeatureStack::zeros(rows, cols, y.depth());
    for a in 1..=y.depth() {
        for r in 1..=y.rows() {
            for s in 1..=y.cols() {
                out.set(a, j + r - 1, k + s - 1, y.get(a, r, s));
            }
        }
    }
    Ok(out)
}

fn check_window(
    op: &'static str,
    rows: usize,
    cols: usize,
    j: usize,
    k: usize,
    p: usize,
    q: usize,
) -> Result<()> {
    if j < 1 || k < 1 || p < 1 || q < 1 || j + p - 1 > rows || k + q - 1 > cols {
        return Err(Error::WindowOutOfBounds {
            op,
            j,
            k,
            p,
            q,
            rows,
            cols,
        });
    }
    Ok(())
}

/// Mixing: the weighted sum of slices, `sum_i v_i * U_i`, producing a
/// single-slice stack.
pub fn mix(v: &Vec1D, u: &FeatureStack) -> Result<FeatureStack> {
    if v.dim() != u.depth() {
        return Err(Error::DepthMismatch {
            op: "mix",
            dim: v.dim(),
            depth: u.depth(),
        });
    }
    let mut out = FeatureStack::zeros(u.rows(), u.cols(), 1);
    for i in 1..=u.depth() {
        let vi = v.get(i);
        for r in 1..=u.rows() {
            for s in 1..=u.cols() {
                out.set(1, r, s, out.get(1, r, s) + vi * u.get(i, r, s));
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`mix`]: tensors the single-slice `y` with `v`, i.e. slice `i`
/// of the result is `v_i * y`.
pub fn mix_adjoint(v: &Vec1D, y: &FeatureStack) -> Result<FeatureStack> {
    if y.depth() != 1 {
        return Err(Error::InvalidArgument(format!(
            "mix_adjoint: expected a single-slice stack, got {}",
            y.shape()
        )));
    }
    let mut out = FeatureStack::zeros(y.rows(), y.cols(), v.dim());
    for i in 1..=v.dim() {
        let vi = v.get(i);
        for r in 1..=y.rows() {
            for s in 1..=y.cols() {
                out.set(i, r, s, vi * y.get(1, r, s));
            }
        }
    }
    Ok(out)
}

fn check_conv_shapes(
    op: &'static str,
    bank_rows: usize,
    bank_cols: usize,
    bank_in_depth: usize,
    x: &FeatureStack,
    g: &ConvGeometry,
) -> Result<()> {
    if bank_rows != g.filter_rows() || bank_cols != g.filter_cols() {
        return Err(Error::Geometry(format!(
            "{op}: filter {}x{} disagrees with geometry {}x{}",
            bank_rows,
            bank_cols,
            g.filter_rows(),
            g.filter_cols()
        )));
    }
    if x.rows() != g.in_rows() || x.cols() != g.in_cols() {
        return Err(Error::ShapeMismatch {
            op,
            left: x.shape(),
            right: g.in_shape(x.depth()),
        });
    }
    if bank_in_depth != x.depth() {
        return Err(Error::DepthMismatch {
            op,
            dim: bank_in_depth,
            depth: x.depth(),
        });
    }
    Ok(())
}

/// Convolution: output slice `a`, entry `(j, k)` is the inner product of
/// filter `a` with the mixed window of `x` at the strided origin
/// `(1+(j-1)*stride, 1+(k-1)*stride)`. Bilinear in (filters, x).
pub fn convolve(bank: &FilterBank, x: &FeatureStack, g: &ConvGeometry) -> Result<FeatureStack> {
    check_conv_shapes(
        "convolve",
        bank.filter_rows(),
        bank.filter_cols(),
        bank.in_depth(),
        x,
        g,
    )?;
    let (p, q) = (g.filter_rows(), g.filter_cols());
    let mut out = FeatureStack::zeros(g.out_rows(), g.out_cols(), bank.out_depth());
    for a in 1..=bank.out_depth() {
        let mixing = &bank.mixing()[a - 1];
        for j in 1..=g.out_rows() {
            for k in 1..=g.out_cols() {
                let (row0, col0) = g.window_origin(j, k);
                let mut acc = 0.0;
                for i in 1..=x.depth() {
                    let weight = mixing.get(i);
                    if weight == 0.0 {
                        continue;
                    }
                    let mut window = 0.0;
                    for r in 1..=p {
                        for s in 1..=q {
                            window +=
                                bank.filters().get(a, r, s) * x.get(i, row0 + r - 1, col0 + s - 1);
                        }
                    }
                    acc += weight * window;
                }
                out.set(a, j, k, acc);
            }
        }
    }
    Ok(out)
}

/// Adjoint of convolution with the input held fixed: pulls an output
/// cotangent `out_grad` back to filter space. Slice `a` of the result is the
/// sum over output positions of `out_grad[a](j,k)` times the mixed window of
/// `x` at that position.
///
/// Accumulation runs slice `a` outermost, then `(j, k)` row-major, for
/// reproducibility.
pub fn convolve_adjoint_wrt_filters(
    x: &FeatureStack,
    out_grad: &FeatureStack,
    g: &ConvGeometry,
    mixing: &[Vec1D],
) -> Result<FeatureStack> {
    if x.rows() != g.in_rows() || x.cols() != g.in_cols() {
        return Err(Error::ShapeMismatch {
            op: "convolve_adjoint_wrt_filters",
            left: x.shape(),
            right: g.in_shape(x.depth()),
        });
    }
    if out_grad.rows() != g.out_rows()
        || out_grad.cols() != g.out_cols()
        || out_grad.depth() != mixing.len()
    {
        return Err(Error::ShapeMismatch {
            op: "convolve_adjoint_wrt_filters",
            left: out_grad.shape(),
            right: g.out_shape(mixing.len()),
        });
    }
    let (p, q) = (g.filter_rows(), g.filter_cols());
    let mut out = FeatureStack::zeros(p, q, mixing.len());
    for a in 1..=mixing.len() {
        let weights = &mixing[a - 1];
        if weights.dim() != x.depth() {
            return Err(Error::DepthMismatch {
                op: "convolve_adjoint_wrt_filters",
                dim: weights.dim(),
                depth: x.depth(),
            });
        }
        for j in 1..=g.out_rows() {
            for k in 1..=g.out_cols() {
                let coeff = out_grad.get(a, j, k);
                if coeff == 0.0 {
                    continue;
                }
                let (row0, col0) = g.window_origin(j, k);
                for i in 1..=x.depth() {
                    let w = weights.get(i);
                    if w == 0.0 {
                        continue;
                    }
                    for r in 1..=p {
                        for s in 1..=q {
                            out.set(
                                a,
                                r,
                                s,
                                out.get(a, r, s) + coeff * w * x.get(i, row0 + r - 1, col0 + s - 1),
                            );
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of convolution with the filters held fixed: pulls an output
/// cotangent `out_grad` back to input space by scattering each filter,
/// weighted by the mixing vector and the cotangent entry, into its window.
///
/// Accumulation runs slice `a` outermost, then `(j, k)` row-major.
pub fn convolve_adjoint_wrt_input(
    bank: &FilterBank,
    out_grad: &FeatureStack,
    g: &ConvGeometry,
) -> Result<FeatureStack> {
    if out_grad.rows() != g.out_rows()
        || out_grad.cols() != g.out_cols()
        || out_grad.depth() != bank.out_depth()
    {
        return Err(Error::ShapeMismatch {
            op: "convolve_adjoint_wrt_input",
            left: out_grad.shape(),
            right: g.out_shape(bank.out_depth()),
        });
    }
    if bank.filter_rows() != g.filter_rows() || bank.filter_cols() != g.filter_cols() {
        return Err(Error::Geometry(format!(
            "convolve_adjoint_wrt_input: filter {}x{} disagrees with geometry {}x{}",
            bank.filter_rows(),
            bank.filter_cols(),
            g.filter_rows(),
            g.filter_cols()
        )));
    }
    let (p, q) = (g.filter_rows(), g.filter_cols());
    let mut out = FeatureStack::zeros(g.in_rows(), g.in_cols(), bank.in_depth());
    for a in 1..=bank.out_depth() {
        let mixing = &bank.mixing()[a - 1];
        for j in 1..=g.out_rows() {
            for k in 1..=g.out_cols() {
                let coeff = out_grad.get(a, j, k);
                if coeff == 0.0 {
                    continue;
                }
                let (row0, col0) = g.window_origin(j, k);
                for i in 1..=bank.in_depth() {
                    let w = mixing.get(i);
                    if w == 0.0 {
                        continue;
                    }
                    for r in 1..=p {
                        for s in 1..=q {
                            let jj = row0 + r - 1;
                            let kk = col0 + s - 1;
                            out.set(
                                i,
                                jj,
                                kk,
                                out.get(i, jj, kk) + coeff * w * bank.filters().get(a, r, s),
                            );
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Average pooling over disjoint `r x r` blocks, slice-wise. Requires `r`
/// to divide both the row and column counts.
pub fn pool_avg(y: &FeatureStack, r: usize) -> Result<FeatureStack> {
    if r == 0 {
        return Err(Error::Geometry("pool_avg: factor must be positive".into()));
    }
    if !y.rows().is_multiple_of(r) || !y.cols().is_multiple_of(r) {
        return Err(Error::Geometry(format!(
            "pool_avg: factor {r} does not divide input dims {}x{}",
            y.rows(),
            y.cols()
        )));
    }
    let (out_rows, out_cols) = (y.rows() / r, y.cols() / r);
    let inv = 1.0 / (r * r) as f64;
    let mut out = FeatureStack::zeros(out_rows, out_cols, y.depth());
    for a in 1..=y.depth() {
        for j in 1..=out_rows {
            for k in 1..=out_cols {
                let (row0, col0) = (1 + (j - 1) * r, 1 + (k - 1) * r);
                let mut acc = 0.0;
                for dr in 0..r {
                    for dc in 0..r {
                        acc += y.get(a, row0 + dr, col0 + dc);
                    }
                }
                out.set(a, j, k, acc * inv);
            }
        }
    }
    Ok(out)
}

/// Adjoint of average pooling: broadcasts each entry of `z`, divided by
/// `r*r`, over its `r x r` block.
pub fn pool_avg_adjoint(z: &FeatureStack, r: usize) -> FeatureStack {
    assert!(r > 0, "pool_avg_adjoint: factor must be positive");
    let inv = 1.0 / (r * r) as f64;
    let mut out = FeatureStack::zeros(z.rows() * r, z.cols() * r, z.depth());
    for a in 1..=z.depth() {
        for j in 1..=z.rows() {
            for k in 1..=z.cols() {
                let value = z.get(a, j, k) * inv;
                let (row0, col0) = (1 + (j - 1) * r, 1 + (k - 1) * r);
                for dr in 0..r {
                    for dc in 0..r {
                        out.set(a, row0 + dr, col0 + dc, value);
                    }
                }
            }
        }
    }
    out
}

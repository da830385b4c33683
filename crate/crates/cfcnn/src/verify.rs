//! Independent oracles for validating operators, adjoints, and gradients:
//! dense materialization of linear maps, randomized adjoint-identity checks,
//! central-difference gradients, and a standalone dense multilayer
//! perceptron written with plain loops.
//!
//! The oracles deliberately share nothing with the code they test beyond
//! the `FeatureStack` storage type: inner products here are re-derived as
//! flat dot products, the dense transpose check materializes both operators
//! column by column, and the perceptron never touches the operator or layer
//! modules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layer::{self, LayerParams, LayerSpec};
use crate::linalg::{FeatureStack, Shape, Vec1D};
use crate::network::{NetworkSpec, NetworkState};
use crate::ops::{self, ConvGeometry, FilterBank, Nonlinearity};
use crate::train::GradientSet;

/// A linear map on stacks, materialized as a dense matrix over the flat
/// slice-major coordinates.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    out_dim: usize,
    in_dim: usize,
    entries: Vec<f64>,
}

impl DenseOperator {
    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    /// Entry at `(row, col)`, 0-based.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.in_dim + col]
    }

    /// Max-norm of `self - other^T`.
    pub fn transpose_distance(&self, other: &DenseOperator) -> f64 {
        assert_eq!(self.out_dim, other.in_dim);
        assert_eq!(self.in_dim, other.out_dim);
        let mut worst = 0.0f64;
        for r in 0..self.out_dim {
            for c in 0..self.in_dim {
                worst = worst.max((self.get(r, c) - other.get(c, r)).abs());
            }
        }
        worst
    }

    /// `self * flat(x)`.
    pub fn apply_flat(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.in_dim);
        self.entries
            .chunks(self.in_dim)
            .map(|row| {
                let mut acc = 0.0;
                for (entry, value) in row.iter().zip(x) {
                    acc += entry * value;
                }
                acc
            })
            .collect()
    }
}

/// Materializes a linear stack map column by column: column `c` is the image
/// of the `c`-th standard basis stack, flattened slice-major.
pub fn materialize(
    op: &dyn Fn(&FeatureStack) -> Result<FeatureStack>,
    in_shape: Shape,
    out_shape: Shape,
) -> Result<DenseOperator> {
    let in_dim = in_shape.len();
    let out_dim = out_shape.len();
    let mut entries = vec![0.0; out_dim * in_dim];
    for c in 0..in_dim {
        let mut basis = FeatureStack::zeros(in_shape.rows, in_shape.cols, in_shape.depth);
        basis.data_mut()[c] = 1.0;
        let image = op(&basis)?;
        if image.shape() != out_shape {
            return Err(Error::ShapeMismatch {
                op: "materialize",
                left: image.shape(),
                right: out_shape,
            });
        }
        for (r, value) in image.data().iter().enumerate() {
            entries[r * in_dim + c] = *value;
        }
    }
    Ok(DenseOperator {
        out_dim,
        in_dim,
        entries,
    })
}

/// Result of one adjoint check: the worst randomized identity violation,
/// the worst dense-transpose deviation, the tolerances applied, and the
/// seed that drove the trials.
#[derive(Debug, Clone)]
pub struct AdjointReport {
    pub name: String,
    pub max_pair_err: f64,
    pub max_dense_err: f64,
    pub pair_tol: f64,
    pub dense_tol: f64,
    pub seed: u64,
}

impl AdjointReport {
    pub fn pass(&self) -> bool {
        self.max_pair_err <= self.pair_tol && self.max_dense_err <= self.dense_tol
    }

    /// Machine-readable lines, one per sub-check:
    /// `CHECK <name> <max_err> <tol> <PASS|FAIL>`.
    pub fn check_lines(&self) -> Vec<String> {
        let line = |suffix: &str, err: f64, tol: f64| {
            format!(
                "CHECK {}.{suffix} {:e} {:e} {}",
                self.name,
                err,
                tol,
                if err <= tol { "PASS" } else { "FAIL" }
            )
        };
        vec![
            line("pair", self.max_pair_err, self.pair_tol),
            line("dense", self.max_dense_err, self.dense_tol),
        ]
    }
}

impl std::fmt::Display for AdjointReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: randomized identity err {:.3e} (tol {:.1e}), dense transpose err {:.3e} (tol {:.1e}), seed {} -> {}",
            self.name,
            self.max_pair_err,
            self.pair_tol,
            self.max_dense_err,
            self.dense_tol,
            self.seed,
            if self.pass() { "PASS" } else { "FAIL" }
        )
    }
}

fn flat_dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Uniform random stack on `[-1, 1)`, driven by the given generator.
pub fn random_stack(rng: &mut ChaCha8Rng, shape: Shape) -> FeatureStack {
    let data = (0..shape.len())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    FeatureStack::from_vec(shape.rows, shape.cols, shape.depth, data).expect("length matches shape")
}

/// Uniform random vector on `[-1, 1)`.
pub fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec1D {
    Vec1D::from_vec((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Checks that `adjoint` is the adjoint of `forward` two ways: the inner
/// product identity `<y, forward(x)> = <adjoint(y), x>` on seeded random
/// instances, and dense materialization of both maps compared by transpose.
/// Both errors must fall within `tol` for the report to pass.
#[allow(clippy::too_many_arguments)]
pub fn check_adjoint_pair(
    name: &str,
    forward: &dyn Fn(&FeatureStack) -> Result<FeatureStack>,
    adjoint: &dyn Fn(&FeatureStack) -> Result<FeatureStack>,
    in_shape: Shape,
    out_shape: Shape,
    trials: usize,
    tol: f64,
    seed: u64,
) -> Result<AdjointReport> {
    let (pair_err, dense_err) =
        adjoint_errors(forward, adjoint, in_shape, out_shape, trials, seed)?;
    Ok(AdjointReport {
        name: name.to_string(),
        max_pair_err: pair_err,
        max_dense_err: dense_err,
        pair_tol: tol,
        dense_tol: tol,
        seed,
    })
}

fn adjoint_errors(
    forward: &dyn Fn(&FeatureStack) -> Result<FeatureStack>,
    adjoint: &dyn Fn(&FeatureStack) -> Result<FeatureStack>,
    in_shape: Shape,
    out_shape: Shape,
    trials: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pair_err = 0.0f64;
    for _ in 0..trials {
        let x = random_stack(&mut rng, in_shape);
        let y = random_stack(&mut rng, out_shape);
        let lhs = flat_dot(y.data(), forward(&x)?.data());
        let rhs = flat_dot(adjoint(&y)?.data(), x.data());
        pair_err = pair_err.max((lhs - rhs).abs());
    }
    let fwd_dense = materialize(forward, in_shape, out_shape)?;
    let adj_dense = materialize(adjoint, out_shape, in_shape)?;
    let dense_err = adj_dense.transpose_distance(&fwd_dense);
    Ok((pair_err, dense_err))
}

/// Central-difference gradient of an arbitrary loss over every parameter
/// coordinate: `(loss(theta + h e_c) - loss(theta - h e_c)) / 2h`.
pub fn fd_gradient(
    loss: &dyn Fn(&NetworkState) -> Result<f64>,
    spec: &NetworkSpec,
    state: &NetworkState,
    h: f64,
) -> Result<GradientSet> {
    let mut grads = GradientSet::zeros(spec);
    for t in 0..spec.len() {
        let n_filters = state.layers()[t].bank.filters().len();
        for idx in 0..n_filters {
            let plus = loss(&perturbed(state, t, ParamKind::Filters, idx, h)?)?;
            let minus = loss(&perturbed(state, t, ParamKind::Filters, idx, -h)?)?;
            grads.d_filters[t].data_mut()[idx] = (plus - minus) / (2.0 * h);
        }
        let n_bias = state.layers()[t].bias.len();
        for idx in 0..n_bias {
            let plus = loss(&perturbed(state, t, ParamKind::Bias, idx, h)?)?;
            let minus = loss(&perturbed(state, t, ParamKind::Bias, idx, -h)?)?;
            grads.d_bias[t].data_mut()[idx] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(grads)
}

#[derive(Clone, Copy)]
enum ParamKind {
    Filters,
    Bias,
}

fn perturbed(
    state: &NetworkState,
    t: usize,
    kind: ParamKind,
    idx: usize,
    delta: f64,
) -> Result<NetworkState> {
    let mut s = state.clone();
    let lp = &mut s.layers_mut()[t];
    match kind {
        ParamKind::Filters => {
            let mut data = lp.bank.filters().data().to_vec();
            data[idx] += delta;
            let shape = lp.bank.filters().shape();
            lp.bank = lp.bank.with_filters(FeatureStack::from_vec(
                shape.rows,
                shape.cols,
                shape.depth,
                data,
            )?)?;
        }
        ParamKind::Bias => {
            lp.bias.data_mut()[idx] += delta;
        }
    }
    Ok(s)
}

/// Compares an analytic gradient against [`fd_gradient`] coordinate by
/// coordinate and returns the worst relative error per layer (filters and
/// bias together), using `max(|analytic|, |fd|, 1e-8)` as the denominator.
pub fn gradient_rel_errors(analytic: &GradientSet, fd: &GradientSet) -> Vec<f64> {
    analytic
        .d_filters
        .iter()
        .zip(&analytic.d_bias)
        .zip(fd.d_filters.iter().zip(&fd.d_bias))
        .map(|((af, ab), (ff, fb))| {
            let mut worst = 0.0f64;
            for (a, f) in af
                .data()
                .iter()
                .chain(ab.data())
                .zip(ff.data().iter().chain(fb.data()))
            {
                let denom = a.abs().max(f.abs()).max(1e-8);
                worst = worst.max((a - f).abs() / denom);
            }
            worst
        })
        .collect()
}

/// Pass test for one gradient coordinate: absolute agreement within
/// `abs_tol`, or relative agreement within `rel_tol` against
/// `max(|analytic|, |fd|, 1e-8)`.
pub fn grad_coord_close(analytic: f64, fd: f64, rel_tol: f64, abs_tol: f64) -> bool {
    let diff = (analytic - fd).abs();
    diff <= abs_tol || diff <= rel_tol * analytic.abs().max(fd.abs()).max(1e-8)
}

/// A dense matrix as nested rows, `m[row][col]`.
pub type DenseMatrix = Vec<Vec<f64>>;
/// One dense weight matrix per layer.
pub type DenseWeights = Vec<DenseMatrix>;
/// One bias vector per layer.
pub type DenseBiases = Vec<Vec<f64>>;

/// Forward pass of a plain dense perceptron: per layer,
/// `x <- sigma(W x + b)`, written with explicit loops and nested `Vec`
/// matrices (`weights[t][row][col]`).
pub fn dense_mlp_forward(
    weights: &[DenseMatrix],
    biases: &[Vec<f64>],
    nls: &[Nonlinearity],
    x: &[f64],
) -> Result<Vec<f64>> {
    let (acts, _) = dense_mlp_trace(weights, biases, nls, x)?;
    Ok(acts.last().expect("at least the input activation").clone())
}

fn dense_mlp_trace(
    weights: &[DenseMatrix],
    biases: &[Vec<f64>],
    nls: &[Nonlinearity],
    x: &[f64],
) -> Result<(DenseBiases, DenseBiases)> {
    if weights.len() != biases.len() || weights.len() != nls.len() {
        return Err(Error::InvalidArgument(
            "dense mlp: weights, biases, and activations must have equal layer counts".into(),
        ));
    }
    let mut activations = vec![x.to_vec()];
    let mut preacts = Vec::with_capacity(weights.len());
    for t in 0..weights.len() {
        let input = activations.last().unwrap();
        let rows = weights[t].len();
        if rows != biases[t].len() {
            return Err(Error::InvalidArgument(format!(
                "dense mlp layer {}: {} rows vs {} biases",
                t + 1,
                rows,
                biases[t].len()
            )));
        }
        let mut z = vec![0.0; rows];
        for (a, row) in weights[t].iter().enumerate() {
            if row.len() != input.len() {
                return Err(Error::InvalidArgument(format!(
                    "dense mlp layer {}: row of len {} applied to input of len {}",
                    t + 1,
                    row.len(),
                    input.len()
                )));
            }
            let mut acc = biases[t][a];
            for (i, w) in row.iter().enumerate() {
                acc += w * input[i];
            }
            z[a] = acc;
        }
        let out: Vec<f64> = z.iter().map(|&v| nls[t].sigma(v)).collect();
        preacts.push(z);
        activations.push(out);
    }
    Ok((activations, preacts))
}

/// Gradients of the quadratic loss `0.5 * |out - y|^2` of the dense
/// perceptron with respect to every weight and bias, by the standard delta
/// recursion over plain loops.
pub fn dense_mlp_gradients(
    weights: &[DenseMatrix],
    biases: &[Vec<f64>],
    nls: &[Nonlinearity],
    x: &[f64],
    y: &[f64],
) -> Result<(DenseWeights, DenseBiases)> {
    let (acts, preacts) = dense_mlp_trace(weights, biases, nls, x)?;
    let l = weights.len();
    let out = acts.last().unwrap();
    if out.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "dense mlp: output dim {} vs target dim {}",
            out.len(),
            y.len()
        )));
    }

    // delta[t] = d loss / d preact[t]
    let mut delta: Vec<f64> = (0..out.len())
        .map(|a| (out[a] - y[a]) * nls[l - 1].sigma_d1(preacts[l - 1][a]))
        .collect();
    let mut d_weights = vec![Vec::new(); l];
    let mut d_biases = vec![Vec::new(); l];
    for t in (0..l).rev() {
        let input = &acts[t];
        d_weights[t] = delta
            .iter()
            .map(|&d| input.iter().map(|&xi| d * xi).collect())
            .collect();
        d_biases[t] = delta.clone();
        if t > 0 {
            let mut next = vec![0.0; input.len()];
            for (a, &d) in delta.iter().enumerate() {
                for (i, slot) in next.iter_mut().enumerate() {
                    *slot += d * weights[t][a][i];
                }
            }
            delta = next
                .iter()
                .enumerate()
                .map(|(i, &v)| v * nls[t - 1].sigma_d1(preacts[t - 1][i]))
                .collect();
        }
    }
    Ok((d_weights, d_biases))
}

/// Rewrites a fully-connected-shaped network (every layer a full-size
/// window with unit stride and no pooling) as dense perceptron matrices:
/// row `a` of layer `t` is the flattened outer product of the mixing vector
/// and filter `a`.
pub fn fc_network_to_dense(
    spec: &NetworkSpec,
    state: &NetworkState,
) -> Result<(DenseWeights, DenseBiases, Vec<Nonlinearity>)> {
    let mut weights = Vec::with_capacity(spec.len());
    let mut biases = Vec::with_capacity(spec.len());
    let mut nls = Vec::with_capacity(spec.len());
    for (t, (ls, lp)) in spec.layers().iter().zip(state.layers()).enumerate() {
        let g = ls.geometry();
        let fc_shaped = g.out_rows() == 1
            && g.out_cols() == 1
            && ls.pool_r() == 1
            && g.filter_rows() == g.in_rows()
            && g.filter_cols() == g.in_cols();
        if !fc_shaped {
            return Err(Error::InvalidArgument(format!(
                "fc_network_to_dense: layer {} is not fully-connected-shaped",
                t + 1
            )));
        }
        let (rows, cols) = (g.in_rows(), g.in_cols());
        let in_dim = rows * cols * ls.in_depth();
        let mut m = Vec::with_capacity(ls.out_depth());
        for a in 1..=ls.out_depth() {
            let mixing = &ls.mixing()[a - 1];
            let mut row = vec![0.0; in_dim];
            for i in 1..=ls.in_depth() {
                for j in 1..=rows {
                    for k in 1..=cols {
                        let flat = (i - 1) * rows * cols + (j - 1) * cols + (k - 1);
                        row[flat] = mixing.get(i) * lp.bank.filters().get(a, j, k);
                    }
                }
            }
            m.push(row);
        }
        weights.push(m);
        biases.push((1..=ls.out_depth()).map(|a| lp.bias.get(a, 1, 1)).collect());
        nls.push(ls.nl());
    }
    Ok((weights, biases, nls))
}

/// Maps dense perceptron gradients back to filter/bias stacks through the
/// fixed reparameterization used by [`fc_network_to_dense`]:
/// `d filter_a[j,k] = sum_i mixing_a[i] * d M[a][flat(i,j,k)]`.
pub fn dense_grads_to_network(
    spec: &NetworkSpec,
    d_weights: &[DenseMatrix],
    d_biases: &[Vec<f64>],
) -> Result<GradientSet> {
    let mut grads = GradientSet::zeros(spec);
    for (t, ls) in spec.layers().iter().enumerate() {
        let g = ls.geometry();
        let (rows, cols) = (g.in_rows(), g.in_cols());
        for a in 1..=ls.out_depth() {
            let mixing = &ls.mixing()[a - 1];
            for j in 1..=rows {
                for k in 1..=cols {
                    let mut acc = 0.0;
                    for i in 1..=ls.in_depth() {
                        let flat = (i - 1) * rows * cols + (j - 1) * cols + (k - 1);
                        acc += mixing.get(i) * d_weights[t][a - 1][flat];
                    }
                    grads.d_filters[t].set(a, j, k, acc);
                }
            }
            grads.d_bias[t].set(a, 1, 1, d_biases[t][a - 1]);
        }
    }
    Ok(grads)
}

/// A boxed linear map on stacks.
type StackMap = Box<dyn Fn(&FeatureStack) -> Result<FeatureStack>>;
/// A forward/adjoint pair with its domain and codomain shapes.
type BoxedPair = (StackMap, StackMap, Shape, Shape);

/// Runs the full adjoint suite: every forward/adjoint pair of the operator
/// and layer modules, over seeded random shapes with all dimensions at most
/// `max_dim`, `trials` random-instance checks per pair, plus the dense
/// transpose check on every sampled shape.
pub fn adjoint_suite(
    max_dim: usize,
    trials: usize,
    pair_tol: f64,
    dense_tol: f64,
    seed: u64,
) -> Result<Vec<AdjointReport>> {
    let max_dim = max_dim.max(1);
    let shape_rounds = 8usize;
    let per_round = trials.div_ceil(shape_rounds).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();

    let run = |name: &str,
               rng: &mut ChaCha8Rng,
               make: &mut dyn FnMut(&mut ChaCha8Rng) -> Result<BoxedPair>|
     -> Result<AdjointReport> {
        let mut pair_err = 0.0f64;
        let mut dense_err = 0.0f64;
        for round in 0..shape_rounds {
            let (fwd, adj, in_shape, out_shape) = make(rng)?;
            let trial_seed = seed
                .wrapping_mul(1_000_003)
                .wrapping_add(round as u64)
                .wrapping_add(name.len() as u64);
            let (p, d) = adjoint_errors(
                fwd.as_ref(),
                adj.as_ref(),
                in_shape,
                out_shape,
                per_round,
                trial_seed,
            )?;
            pair_err = pair_err.max(p);
            dense_err = dense_err.max(d);
        }
        Ok(AdjointReport {
            name: name.to_string(),
            max_pair_err: pair_err,
            max_dense_err: dense_err,
            pair_tol,
            dense_tol,
            seed,
        })
    };

    let dim = |rng: &mut ChaCha8Rng, lo: usize| rng.random_range(lo..=max_dim.max(lo));
    let depth = |rng: &mut ChaCha8Rng| rng.random_range(1..=3usize.min(max_dim));

    // cropping vs embedding
    reports.push(run("crop_embed", &mut rng, &mut |rng| {
        let rows = dim(rng, 1);
        let cols = dim(rng, 1);
        let m = depth(rng);
        let p = rng.random_range(1..=rows);
        let q = rng.random_range(1..=cols);
        let j = rng.random_range(1..=rows - p + 1);
        let k = rng.random_range(1..=cols - q + 1);
        Ok((
            Box::new(move |x: &FeatureStack| ops::crop(x, j, k, p, q)) as Box<_>,
            Box::new(move |y: &FeatureStack| ops::embed(y, j, k, rows, cols)) as Box<_>,
            Shape::new(rows, cols, m),
            Shape::new(p, q, m),
        ))
    })?);

    // mixing vs tensoring with the mixing vector
    reports.push(run("mix", &mut rng, &mut |rng| {
        let rows = dim(rng, 1);
        let cols = dim(rng, 1);
        let m = depth(rng);
        let v = random_vec(rng, m);
        let v2 = v.clone();
        Ok((
            Box::new(move |u: &FeatureStack| ops::mix(&v, u)) as Box<_>,
            Box::new(move |y: &FeatureStack| ops::mix_adjoint(&v2, y)) as Box<_>,
            Shape::new(rows, cols, m),
            Shape::new(rows, cols, 1),
        ))
    })?);

    // convolution, filters slot
    reports.push(run("conv_filters", &mut rng, &mut |rng| {
        let (g, m1, m2, mixing) = random_conv(rng, max_dim);
        let x = random_stack(rng, g.in_shape(m1));
        let x2 = x.clone();
        let mixing2 = mixing.clone();
        let g2 = g;
        Ok((
            Box::new(move |u: &FeatureStack| {
                ops::convolve(&FilterBank::new(u.clone(), mixing.clone())?, &x, &g)
            }) as Box<_>,
            Box::new(move |y: &FeatureStack| {
                ops::convolve_adjoint_wrt_filters(&x2, y, &g2, &mixing2)
            }) as Box<_>,
            Shape::new(g.filter_rows(), g.filter_cols(), m2),
            g.out_shape(m2),
        ))
    })?);

    // convolution, input slot
    reports.push(run("conv_input", &mut rng, &mut |rng| {
        let (g, m1, m2, mixing) = random_conv(rng, max_dim);
        let filters = random_stack(rng, Shape::new(g.filter_rows(), g.filter_cols(), m2));
        let bank = FilterBank::new(filters, mixing)?;
        let bank2 = bank.clone();
        let g2 = g;
        Ok((
            Box::new(move |v: &FeatureStack| ops::convolve(&bank, v, &g)) as Box<_>,
            Box::new(move |z: &FeatureStack| ops::convolve_adjoint_wrt_input(&bank2, z, &g2))
                as Box<_>,
            g.in_shape(m1),
            g.out_shape(m2),
        ))
    })?);

    // average pooling
    reports.push(run("pool_avg", &mut rng, &mut |rng| {
        let r = rng.random_range(1..=3usize.min(max_dim));
        let out_rows = rng.random_range(1..=(max_dim / r).max(1));
        let out_cols = rng.random_range(1..=(max_dim / r).max(1));
        let m = depth(rng);
        Ok((
            Box::new(move |y: &FeatureStack| ops::pool_avg(y, r)) as Box<_>,
            Box::new(move |z: &FeatureStack| Ok(ops::pool_avg_adjoint(z, r))) as Box<_>,
            Shape::new(out_rows * r, out_cols * r, m),
            Shape::new(out_rows, out_cols, m),
        ))
    })?);

    // activation derivative action (self-adjoint)
    reports.push(run("activation_d_self", &mut rng, &mut |rng| {
        let shape = Shape::new(dim(rng, 1), dim(rng, 1), depth(rng));
        let nl = random_nl(rng);
        let z = random_stack(rng, shape);
        let z2 = z.clone();
        Ok((
            Box::new(move |v: &FeatureStack| nl.d_apply(&z, v)) as Box<_>,
            Box::new(move |y: &FeatureStack| nl.d_apply(&z2, y)) as Box<_>,
            shape,
            shape,
        ))
    })?);

    // activation second-derivative action with one slot fixed (self-adjoint)
    reports.push(run("activation_d2_self", &mut rng, &mut |rng| {
        let shape = Shape::new(dim(rng, 1), dim(rng, 1), depth(rng));
        let nl = random_nl(rng);
        let z = random_stack(rng, shape);
        let v = random_stack(rng, shape);
        let (z2, v2) = (z.clone(), v.clone());
        Ok((
            Box::new(move |w: &FeatureStack| nl.d2_apply(&z, &v, w)) as Box<_>,
            Box::new(move |y: &FeatureStack| nl.d2_apply(&z2, &v2, y)) as Box<_>,
            shape,
            shape,
        ))
    })?);

    // whole-layer derivative actions
    let layer_pairs: Vec<(&str, LayerPairKind)> = vec![
        ("layer_df", LayerPairKind::Input),
        ("layer_grad_filters", LayerPairKind::Filters),
        ("layer_grad_bias", LayerPairKind::Bias),
        ("layer_d2_mixed_filters", LayerPairKind::MixedFilters),
        ("layer_d2_mixed_bias", LayerPairKind::MixedBias),
        ("layer_d2_input", LayerPairKind::SecondInput),
    ];
    for (name, kind) in layer_pairs {
        reports.push(run(name, &mut rng, &mut |rng| {
            let (spec, params, cache) = random_layer_instance(rng, max_dim)?;
            let v = random_stack(rng, spec.in_shape());
            layer_pair(kind, spec, params, cache, v)
        })?);
    }

    Ok(reports)
}

#[derive(Clone, Copy)]
enum LayerPairKind {
    Input,
    Filters,
    Bias,
    MixedFilters,
    MixedBias,
    SecondInput,
}

fn layer_pair(
    kind: LayerPairKind,
    spec: LayerSpec,
    params: LayerParams,
    cache: layer::LayerCache,
    v: FeatureStack,
) -> Result<BoxedPair> {
    let out_shape = spec.out_shape();
    let in_shape = match kind {
        LayerPairKind::Input | LayerPairKind::SecondInput => spec.in_shape(),
        LayerPairKind::Filters | LayerPairKind::MixedFilters => spec.filter_shape(),
        LayerPairKind::Bias | LayerPairKind::MixedBias => spec.conv_out_shape(),
    };
    let (spec2, params2, cache2, v2) = (spec.clone(), params.clone(), cache.clone(), v.clone());
    let fwd: StackMap = match kind {
        LayerPairKind::Input => Box::new(move |u| layer::df_apply(&spec, &cache, &params, u)),
        LayerPairKind::Filters => {
            Box::new(move |u| layer::grad_filters_apply(&spec, &cache, &params, u))
        }
        LayerPairKind::Bias => Box::new(move |u| layer::grad_bias_apply(&spec, &cache, u)),
        LayerPairKind::MixedFilters => {
            Box::new(move |u| layer::d2_mixed_filters_apply(&spec, &cache, &params, &v, u))
        }
        LayerPairKind::MixedBias => {
            Box::new(move |u| layer::d2_mixed_bias_apply(&spec, &cache, &params, &v, u))
        }
        LayerPairKind::SecondInput => {
            Box::new(move |u| layer::d2_input_apply(&spec, &cache, &params, &v, u))
        }
    };
    let adj: StackMap = match kind {
        LayerPairKind::Input => Box::new(move |e| layer::df_adjoint(&spec2, &cache2, &params2, e)),
        LayerPairKind::Filters => {
            Box::new(move |e| layer::grad_filters_adjoint(&spec2, &cache2, &params2, e))
        }
        LayerPairKind::Bias => Box::new(move |e| layer::grad_bias_adjoint(&spec2, &cache2, e)),
        LayerPairKind::MixedFilters => {
            Box::new(move |e| layer::d2_mixed_filters_adjoint(&spec2, &cache2, &params2, &v2, e))
        }
        LayerPairKind::MixedBias => {
            Box::new(move |e| layer::d2_mixed_bias_adjoint(&spec2, &cache2, &params2, &v2, e))
        }
        LayerPairKind::SecondInput => {
            Box::new(move |e| layer::d2_input_adjoint(&spec2, &cache2, &params2, &v2, e))
        }
    };
    Ok((fwd, adj, in_shape, out_shape))
}

fn random_nl(rng: &mut ChaCha8Rng) -> Nonlinearity {
    match rng.random_range(0..3u8) {
        0 => Nonlinearity::Tanh,
        1 => Nonlinearity::Sigmoid,
        _ => Nonlinearity::Relu,
    }
}

fn random_conv(rng: &mut ChaCha8Rng, max_dim: usize) -> (ConvGeometry, usize, usize, Vec<Vec1D>) {
    let in_rows = rng.random_range(2..=max_dim.max(2));
    let in_cols = rng.random_range(2..=max_dim.max(2));
    let p = rng.random_range(1..=in_rows.min(3));
    let q = rng.random_range(1..=in_cols.min(3));
    let stride = rng.random_range(1..=2usize);
    let g = ConvGeometry::new(in_rows, in_cols, p, q, stride).expect("dims fit by construction");
    let m1 = rng.random_range(1..=2usize);
    let m2 = rng.random_range(1..=2usize);
    let mixing = (0..m2).map(|_| random_vec(rng, m1)).collect();
    (g, m1, m2, mixing)
}

/// Random layer spec, parameters, and a cache from one forward pass on a
/// random input.
pub fn random_layer_instance(
    rng: &mut ChaCha8Rng,
    max_dim: usize,
) -> Result<(LayerSpec, LayerParams, layer::LayerCache)> {
    let (g, m1, m2, mixing) = random_conv(rng, max_dim);
    // pooling factor drawn from the common divisors of the conv output dims
    let divisors: Vec<usize> = (1..=g.out_rows().min(g.out_cols()).min(3))
        .filter(|r| g.out_rows() % r == 0 && g.out_cols() % r == 0)
        .collect();
    let r = divisors[rng.random_range(0..divisors.len())];
    let nl = random_nl(rng);
    let spec = LayerSpec::new(g, r, nl, m1, m2, Some(mixing))?;
    let params = LayerParams::new(
        &spec,
        random_stack(rng, spec.filter_shape()),
        random_stack(rng, spec.conv_out_shape()),
    )?;
    let x = random_stack(rng, spec.in_shape());
    let (_, cache) = layer::forward(&spec, &params, &x)?;
    Ok((spec, params, cache))
}

//! Losses and gradient descent.
//!
//! Two loss terms are supported: the quadratic output loss `J` (half the
//! squared distance between the network output and the target) and the
//! tangent-penalty loss `R` (half the squared distance between the
//! directional derivative of the network along a given input direction and a
//! target vector; summing over a set of such pairs). Training minimizes
//! `J + lambda * R`.
//!
//! Gradients are computed by backward error recursions over the cached
//! layers. The first-order pass carries a single error signal; the
//! second-order pass for `R` carries three — the primal residual channel,
//! the tangent residual channel, and a curvature channel that accumulates
//! the second-derivative contributions of downstream layers. Every formula
//! here is validated coordinate-by-coordinate against central finite
//! differences in the test suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layer::LayerParams;
use crate::linalg::{axpy, FeatureStack, Vec1D};
use crate::network::{forward, forward_tangent, NetworkSpec, NetworkState};
use crate::ops::{convolve_adjoint_wrt_filters, convolve_adjoint_wrt_input, pool_avg_adjoint};

/// One direction/value pair for the tangent penalty: the loss term is half
/// the squared distance between the network's directional derivative along
/// `v` and `beta`. A zero `beta` asks the network to be invariant along `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentTarget {
    pub v: FeatureStack,
    pub beta: Vec1D,
}

/// One training point: input, class target, and any tangent targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: FeatureStack,
    pub y: Vec1D,
    pub tangents: Vec<TangentTarget>,
}

/// Hyperparameters for descent and initialization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub eta: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta: 0.01,
            lambda: 0.0,
            batch_size: 1,
            iterations: 1,
            seed: 0,
            init_scale: 0.1,
        }
    }
}

/// Per-layer gradients, shaped exactly like the parameters they refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub d_filters: Vec<FeatureStack>,
    pub d_bias: Vec<FeatureStack>,
}

impl GradientSet {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let d_filters = spec
            .layers()
            .iter()
            .map(|ls| {
                let s = ls.filter_shape();
                FeatureStack::zeros(s.rows, s.cols, s.depth)
            })
            .collect();
        let d_bias = spec
            .layers()
            .iter()
            .map(|ls| {
                let s = ls.conv_out_shape();
                FeatureStack::zeros(s.rows, s.cols, s.depth)
            })
            .collect();
        GradientSet { d_filters, d_bias }
    }

    /// `self += alpha * other`, layer by layer.
    pub fn accumulate(&mut self, alpha: f64, other: &GradientSet) -> Result<()> {
        if self.d_filters.len() != other.d_filters.len() {
            return Err(Error::InvalidArgument(
                "GradientSet::accumulate: layer count mismatch".into(),
            ));
        }
        for (mine, theirs) in self.d_filters.iter_mut().zip(&other.d_filters) {
            *mine = axpy(alpha, theirs, mine)?;
        }
        for (mine, theirs) in self.d_bias.iter_mut().zip(&other.d_bias) {
            *mine = axpy(alpha, theirs, mine)?;
        }
        Ok(())
    }

    /// Largest absolute entry across all layers.
    pub fn max_abs(&self) -> f64 {
        self.d_filters
            .iter()
            .chain(self.d_bias.iter())
            .flat_map(|s| s.data())
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// The quadratic output loss for one sample.
pub fn loss_j(spec: &NetworkSpec, state: &NetworkState, sample: &Sample) -> Result<f64> {
    let trace = forward(spec, state, &sample.x)?;
    Ok(0.5 * trace.output.sub(&sample.y)?.norm_sq())
}

/// The tangent-penalty loss for one sample: the sum over its tangent
/// targets. Empty targets give zero.
pub fn loss_r(spec: &NetworkSpec, state: &NetworkState, sample: &Sample) -> Result<f64> {
    let mut total = 0.0;
    for target in &sample.tangents {
        let trace = forward_tangent(spec, state, &sample.x, &target.v)?;
        let tangent_out = trace.tangent_out.expect("tangent pass fills tangent_out");
        total += 0.5 * tangent_out.sub(&target.beta)?.norm_sq();
    }
    Ok(total)
}

/// `J + lambda * R` for one sample.
pub fn loss_total(
    spec: &NetworkSpec,
    state: &NetworkState,
    sample: &Sample,
    lambda: f64,
) -> Result<f64> {
    let j = loss_j(spec, state, sample)?;
    if lambda == 0.0 || sample.tangents.is_empty() {
        return Ok(j);
    }
    Ok(j + lambda * loss_r(spec, state, sample)?)
}

/// Gradient of the output loss for one sample: one backward sweep seeding
/// the error with the output residual and folding each layer's adjoints.
pub fn grads_first_order(
    spec: &NetworkSpec,
    state: &NetworkState,
    sample: &Sample,
) -> Result<GradientSet> {
    let trace = forward(spec, state, &sample.x)?;
    let mut grads = GradientSet::zeros(spec);
    // error signal in the output space of layer t, walking t = L..1
    let mut error = trace.output.sub(&sample.y)?.to_stack();
    for t in (1..=spec.len()).rev() {
        let ls = spec.layer(t);
        let lp = state.layer(t);
        let cache = &trace.caches[t - 1];
        let back = pool_avg_adjoint(&error, ls.pool_r());
        let scaled = ls.nl().d_apply(&cache.preactivation, &back)?;
        grads.d_bias[t - 1] = scaled.clone();
        grads.d_filters[t - 1] =
            convolve_adjoint_wrt_filters(&cache.input, &scaled, ls.geometry(), lp.bank.mixing())?;
        if t > 1 {
            error = convolve_adjoint_wrt_input(&lp.bank, &scaled, ls.geometry())?;
        }
    }
    Ok(grads)
}

/// Gradient of the tangent-penalty loss for one sample, summed over its
/// tangent targets. Empty targets give the zero gradient.
///
/// Per target, one tangent-forward pass records the propagated tangent and
/// the filter/tangent convolutions; the backward sweep then carries two
/// error channels. The tangent-residual channel `e_v` backpropagates the
/// residual of the propagated tangent exactly like a first-order error. The
/// curvature channel `e_w` accumulates, at each step down, the
/// second-derivative action of the layer just above on `e_v` — so the filter
/// gradient at layer `t` is the sum of three pullbacks: the curvature
/// channel through the input-held adjoint, and the tangent channel through
/// both terms of the mixed second-derivative adjoint.
pub fn grads_higher_order(
    spec: &NetworkSpec,
    state: &NetworkState,
    sample: &Sample,
) -> Result<GradientSet> {
    let mut grads = GradientSet::zeros(spec);
    for target in &sample.tangents {
        let trace = forward_tangent(spec, state, &sample.x, &target.v)?;
        let tangent_out = trace
            .tangent_out
            .as_ref()
            .expect("tangent pass fills tangent_out");
        let mut e_v = tangent_out.sub(&target.beta)?.to_stack();
        let mut e_w = FeatureStack::zeros_like(&e_v);
        for t in (1..=spec.len()).rev() {
            let ls = spec.layer(t);
            let lp = state.layer(t);
            let cache = &trace.caches[t - 1];
            let g = ls.geometry();
            let nl = ls.nl();
            let conv_tangent = cache
                .tangent_conv
                .as_ref()
                .expect("tangent pass fills tangent_conv");
            let tangent_in = cache
                .tangent_in
                .as_ref()
                .expect("tangent pass fills tangent_in");

            let back_v = pool_avg_adjoint(&e_v, ls.pool_r());
            let back_w = pool_avg_adjoint(&e_w, ls.pool_r());
            let first_v = nl.d_apply(&cache.preactivation, &back_v)?;
            let first_w = nl.d_apply(&cache.preactivation, &back_w)?;
            let second_v = nl.d2_apply(&cache.preactivation, conv_tangent, &back_v)?;

            // bias: curvature channel plus the tangent channel's
            // second-derivative term
            let d_bias = first_w.add(&second_v)?;
            grads.d_bias[t - 1] = grads.d_bias[t - 1].add(&d_bias)?;

            // filters: the same two pulled back over the input, plus the
            // tangent channel pulled back over the tangent input
            let mixing = lp.bank.mixing();
            let term_curv = convolve_adjoint_wrt_filters(&cache.input, &first_w, g, mixing)?;
            let term_second = convolve_adjoint_wrt_filters(&cache.input, &second_v, g, mixing)?;
            let term_tangent = convolve_adjoint_wrt_filters(tangent_in, &first_v, g, mixing)?;
            let d_filters = term_second.add(&term_tangent)?.add(&term_curv)?;
            grads.d_filters[t - 1] = grads.d_filters[t - 1].add(&d_filters)?;

            if t > 1 {
                // advance both channels; the curvature update consumes the
                // pre-update tangent channel
                let new_e_w = convolve_adjoint_wrt_input(&lp.bank, &first_w, g)?
                    .add(&convolve_adjoint_wrt_input(&lp.bank, &second_v, g)?)?;
                let new_e_v = convolve_adjoint_wrt_input(&lp.bank, &first_v, g)?;
                e_w = new_e_w;
                e_v = new_e_v;
            }
        }
    }
    Ok(grads)
}

/// Gradient of `J + lambda * R` for one sample. The penalty path is skipped
/// entirely when `lambda` is zero or the sample carries no tangent targets,
/// so that case reproduces the first-order gradient bit for bit.
pub fn grads_total(
    spec: &NetworkSpec,
    state: &NetworkState,
    sample: &Sample,
    lambda: f64,
) -> Result<GradientSet> {
    let mut grads = grads_first_order(spec, state, sample)?;
    if lambda != 0.0 && !sample.tangents.is_empty() {
        let higher = grads_higher_order(spec, state, sample)?;
        grads.accumulate(lambda, &higher)?;
    }
    Ok(grads)
}

/// One batch descent step: sums per-sample gradients of `J + lambda * R` in
/// batch order at fixed parameters, then applies a single update
/// `theta -= eta * total`.
pub fn descent_step(
    spec: &NetworkSpec,
    state: &NetworkState,
    batch: &[Sample],
    cfg: &TrainConfig,
) -> Result<NetworkState> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument(
            "descent_step: batch must be nonempty".into(),
        ));
    }
    let mut total = GradientSet::zeros(spec);
    for sample in batch {
        let grads = grads_total(spec, state, sample, cfg.lambda)?;
        total.accumulate(1.0, &grads)?;
    }
    apply_update(spec, state, &total, cfg.eta)
}

/// One single-sample descent iteration in the literal in-place order: the
/// backward loop updates each layer's parameters as soon as its gradients
/// are computed, carrying the error signals with the stored pre-update
/// filters of the layer above. Produces the same state as a batch step over
/// one sample; the equivalence is asserted in tests.
pub fn descent_step_single(
    spec: &NetworkSpec,
    state: &NetworkState,
    sample: &Sample,
    cfg: &TrainConfig,
) -> Result<NetworkState> {
    let use_tangents = cfg.lambda != 0.0 && !sample.tangents.is_empty();
    let n_targets = if use_tangents {
        sample.tangents.len()
    } else {
        0
    };

    // forward passes at the pre-update parameters
    let primal = forward(spec, state, &sample.x)?;
    let mut tangent_traces = Vec::with_capacity(n_targets);
    for target in sample.tangents.iter().take(n_targets) {
        tangent_traces.push(forward_tangent(spec, state, &sample.x, &target.v)?);
    }

    let mut new_state = state.clone();
    let mut e_y = primal.output.sub(&sample.y)?.to_stack();
    let mut e_v: Vec<FeatureStack> = tangent_traces
        .iter()
        .enumerate()
        .map(|(i, tr)| {
            tr.tangent_out
                .as_ref()
                .expect("tangent pass fills tangent_out")
                .sub(&sample.tangents[i].beta)
                .map(|d| d.to_stack())
        })
        .collect::<Result<_>>()?;
    let mut e_w: Vec<FeatureStack> = e_v.iter().map(FeatureStack::zeros_like).collect();

    for t in (1..=spec.len()).rev() {
        let ls = spec.layer(t);
        let g = ls.geometry();
        let nl = ls.nl();
        // pre-update parameters of this layer drive every formula below
        let old = state.layer(t).clone();
        let cache = &primal.caches[t - 1];

        let back_y = pool_avg_adjoint(&e_y, ls.pool_r());
        let scaled_y = nl.d_apply(&cache.preactivation, &back_y)?;
        let mut d_bias = scaled_y.clone();
        let mut d_filters =
            convolve_adjoint_wrt_filters(&cache.input, &scaled_y, g, old.bank.mixing())?;

        let mut per_target_first_v = Vec::with_capacity(n_targets);
        let mut per_target_first_w = Vec::with_capacity(n_targets);
        let mut per_target_second_v = Vec::with_capacity(n_targets);
        for (i, tr) in tangent_traces.iter().enumerate() {
            let tcache = &tr.caches[t - 1];
            let conv_tangent = tcache.tangent_conv.as_ref().unwrap();
            let tangent_in = tcache.tangent_in.as_ref().unwrap();
            let back_v = pool_avg_adjoint(&e_v[i], ls.pool_r());
            let back_w = pool_avg_adjoint(&e_w[i], ls.pool_r());
            let first_v = nl.d_apply(&tcache.preactivation, &back_v)?;
            let first_w = nl.d_apply(&tcache.preactivation, &back_w)?;
            let second_v = nl.d2_apply(&tcache.preactivation, conv_tangent, &back_v)?;

            let mixing = old.bank.mixing();
            let r_bias = first_w.add(&second_v)?;
            let r_filters = convolve_adjoint_wrt_filters(&tcache.input, &second_v, g, mixing)?
                .add(&convolve_adjoint_wrt_filters(
                    tangent_in, &first_v, g, mixing,
                )?)?
                .add(&convolve_adjoint_wrt_filters(
                    &tcache.input,
                    &first_w,
                    g,
                    mixing,
                )?)?;
            d_bias = axpy(cfg.lambda, &r_bias, &d_bias)?;
            d_filters = axpy(cfg.lambda, &r_filters, &d_filters)?;

            per_target_first_v.push(first_v);
            per_target_first_w.push(first_w);
            per_target_second_v.push(second_v);
        }

        // update this layer in place
        {
            let lp = &mut new_state.layers_mut()[t - 1];
            let filters = axpy(-cfg.eta, &d_filters, lp.bank.filters())?;
            lp.bank = lp.bank.with_filters(filters)?;
            lp.bias = axpy(-cfg.eta, &d_bias, &lp.bias)?;
        }

        // advance the error channels with the stored pre-update filters
        if t > 1 {
            e_y = convolve_adjoint_wrt_input(&old.bank, &scaled_y, g)?;
            for i in 0..n_targets {
                let new_w = convolve_adjoint_wrt_input(&old.bank, &per_target_first_w[i], g)?.add(
                    &convolve_adjoint_wrt_input(&old.bank, &per_target_second_v[i], g)?,
                )?;
                let new_v = convolve_adjoint_wrt_input(&old.bank, &per_target_first_v[i], g)?;
                e_w[i] = new_w;
                e_v[i] = new_v;
            }
        }
    }
    Ok(new_state)
}

fn apply_update(
    spec: &NetworkSpec,
    state: &NetworkState,
    grads: &GradientSet,
    eta: f64,
) -> Result<NetworkState> {
    let mut layers = Vec::with_capacity(spec.len());
    for (t, lp) in state.layers().iter().enumerate() {
        let filters = axpy(-eta, &grads.d_filters[t], lp.bank.filters())?;
        let bias = axpy(-eta, &grads.d_bias[t], &lp.bias)?;
        layers.push(LayerParams {
            bank: lp.bank.with_filters(filters)?,
            bias,
        });
    }
    NetworkState::new(spec, layers)
}

/// Seeded parameter initialization: filters i.i.d. uniform on
/// `[-init_scale, init_scale]`, biases zero. Identical seeds give
/// bit-identical states.
pub fn init_params(spec: &NetworkSpec, seed: u64, init_scale: f64) -> NetworkState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = init_scale.abs();
    let layers = spec
        .layers()
        .iter()
        .map(|ls| {
            let fs = ls.filter_shape();
            let data = (0..fs.len())
                .map(|_| {
                    if scale == 0.0 {
                        0.0
                    } else {
                        rng.random_range(-scale..=scale)
                    }
                })
                .collect();
            let filters = FeatureStack::from_vec(fs.rows, fs.cols, fs.depth, data)
                .expect("shape-consistent by construction");
            let bs = ls.conv_out_shape();
            LayerParams::new(ls, filters, FeatureStack::zeros(bs.rows, bs.cols, bs.depth))
                .expect("shape-consistent by construction")
        })
        .collect();
    NetworkState::new(spec, layers).expect("shape-consistent by construction")
}

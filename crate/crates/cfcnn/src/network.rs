//! Multi-layer composition: forward evaluation with per-layer caches,
//! tangent (directional-derivative) propagation alongside the primal pass,
//! and the backward adjoint recursion that carries error signals from the
//! output toward any layer.

use crate::error::{Error, Result};
use crate::layer::{self, LayerCache, LayerParams, LayerSpec};
use crate::linalg::{FeatureStack, Shape, Vec1D};

/// Ordered layer specifications plus the class count. Shape chaining is
/// validated once here; forward passes assume a valid spec.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    layers: Vec<LayerSpec>,
    class_count: usize,
}

impl NetworkSpec {
    pub fn new(layers: Vec<LayerSpec>, class_count: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network must have at least one layer".into()));
        }
        for t in 0..layers.len() - 1 {
            let out = layers[t].out_shape();
            let inn = layers[t + 1].in_shape();
            if out != inn {
                return Err(Error::Config(format!(
                    "layers {} and {}: output {} does not match declared input {}",
                    t + 1,
                    t + 2,
                    out,
                    inn
                )));
            }
        }
        let last = layers.last().unwrap();
        if !last.is_final() {
            return Err(Error::Config(format!(
                "layer {}: last layer must be the fully-connected output layer",
                layers.len()
            )));
        }
        if last.out_depth() != class_count {
            return Err(Error::Config(format!(
                "layer {}: output depth {} does not match class count {}",
                layers.len(),
                last.out_depth(),
                class_count
            )));
        }
        Ok(NetworkSpec {
            layers,
            class_count,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Layer `t`, 1-based.
    pub fn layer(&self, t: usize) -> &LayerSpec {
        &self.layers[t - 1]
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn input_shape(&self) -> Shape {
        self.layers[0].in_shape()
    }
}

/// All trainable parameters, one [`LayerParams`] per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    layers: Vec<LayerParams>,
}

impl NetworkState {
    pub fn new(spec: &NetworkSpec, layers: Vec<LayerParams>) -> Result<Self> {
        if layers.len() != spec.len() {
            return Err(Error::InvalidArgument(format!(
                "NetworkState: {} parameter sets for {} layers",
                layers.len(),
                spec.len()
            )));
        }
        for (t, (p, s)) in layers.iter().zip(spec.layers()).enumerate() {
            if p.bank.filters().shape() != s.filter_shape() {
                return Err(Error::ShapeMismatch {
                    op: "NetworkState filters",
                    left: p.bank.filters().shape(),
                    right: s.filter_shape(),
                });
            }
            if p.bias.shape() != s.conv_out_shape() {
                return Err(Error::ShapeMismatch {
                    op: "NetworkState bias",
                    left: p.bias.shape(),
                    right: s.conv_out_shape(),
                });
            }
            let _ = t;
        }
        Ok(NetworkState { layers })
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    /// Parameters of layer `t`, 1-based.
    pub fn layer(&self, t: usize) -> &LayerParams {
        &self.layers[t - 1]
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    /// Total number of scalar parameters (filters plus biases).
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|p| p.bank.filters().len() + p.bias.len())
            .sum()
    }
}

/// Everything one forward pass produces: per-layer caches, the class-score
/// output, and the propagated tangent output when a tangent was supplied.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub caches: Vec<LayerCache>,
    pub output: Vec1D,
    pub tangent_out: Option<Vec1D>,
}

/// Runs the layers in order, keeping every cache.
pub fn forward(spec: &NetworkSpec, state: &NetworkState, x: &FeatureStack) -> Result<ForwardTrace> {
    if x.shape() != spec.input_shape() {
        return Err(Error::ShapeMismatch {
            op: "network forward",
            left: x.shape(),
            right: spec.input_shape(),
        });
    }
    let mut caches = Vec::with_capacity(spec.len());
    let mut current = x.clone();
    for (ls, lp) in spec.layers().iter().zip(state.layers()) {
        let (out, cache) = layer::forward(ls, lp, &current)?;
        caches.push(cache);
        current = out;
    }
    let output = Vec1D::from_stack(&current)?;
    Ok(ForwardTrace {
        caches,
        output,
        tangent_out: None,
    })
}

/// Runs the primal pass and propagates a tangent `v` alongside it. Each
/// cache additionally records the layer's tangent input and the convolution
/// of the filters with it (both reused by second-order backpropagation);
/// the trace's `tangent_out` is the directional derivative of the network
/// output along `v`.
pub fn forward_tangent(
    spec: &NetworkSpec,
    state: &NetworkState,
    x: &FeatureStack,
    v: &FeatureStack,
) -> Result<ForwardTrace> {
    if v.shape() != spec.input_shape() {
        return Err(Error::ShapeMismatch {
            op: "network forward_tangent",
            left: v.shape(),
            right: spec.input_shape(),
        });
    }
    let mut trace = forward(spec, state, x)?;
    let mut tangent = v.clone();
    for (t, (ls, lp)) in spec.layers().iter().zip(state.layers()).enumerate() {
        let cache = &mut trace.caches[t];
        let conv_tangent = crate::ops::convolve(&lp.bank, &tangent, ls.geometry())?;
        let next = crate::ops::pool_avg(
            &ls.nl().d_apply(&cache.preactivation, &conv_tangent)?,
            ls.pool_r(),
        )?;
        cache.tangent_in = Some(tangent);
        cache.tangent_conv = Some(conv_tangent);
        tangent = next;
    }
    trace.tangent_out = Some(Vec1D::from_stack(&tangent)?);
    Ok(trace)
}

/// Applies the adjoint of the tail composition (layers `t..=L`) to an output
/// cotangent `e`, folding each layer's input-derivative adjoint from layer
/// `L` down to `t`. `t = L + 1` returns `e` itself (empty tail); the result
/// is shaped like layer `t`'s input.
pub fn omega_adjoint_apply(
    spec: &NetworkSpec,
    state: &NetworkState,
    trace: &ForwardTrace,
    t: usize,
    e: &Vec1D,
) -> Result<FeatureStack> {
    let l = spec.len();
    if t < 1 || t > l + 1 {
        return Err(Error::InvalidArgument(format!(
            "omega_adjoint_apply: layer index {t} out of range 1..={}",
            l + 1
        )));
    }
    let mut current = e.to_stack();
    for back_t in (t..=l).rev() {
        current = layer::df_adjoint(
            spec.layer(back_t),
            &trace.caches[back_t - 1],
            state.layer(back_t),
            &current,
        )?;
    }
    Ok(current)
}

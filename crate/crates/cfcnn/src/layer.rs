//! One network layer: convolve, add bias, apply the activation, pool.
//!
//! Alongside the forward map, this module provides the derivative actions in
//! every direction a training loop needs — with respect to the input, the
//! filters, and the bias — plus the mixed and pure second-derivative
//! actions, each in a forward (`_apply`) and an adjoint (`_adjoint`) form.
//! The `_apply`/`_adjoint` pairs are exact adjoints of one another and are
//! cross-checked against dense transposition and finite differences in the
//! test suites.

use crate::error::{Error, Result};
use crate::linalg::{FeatureStack, Shape, Vec1D};
use crate::ops::{
    convolve, convolve_adjoint_wrt_filters, convolve_adjoint_wrt_input, pool_avg, pool_avg_adjoint,
    ConvGeometry, FilterBank, Nonlinearity,
};

/// Static configuration of one layer: convolution geometry, pooling factor,
/// activation, depths, and the fixed mixing vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    geometry: ConvGeometry,
    pool_r: usize,
    nl: Nonlinearity,
    in_depth: usize,
    out_depth: usize,
    mixing: Vec<Vec1D>,
    is_final: bool,
}

impl LayerSpec {
    /// A hidden layer. `mixing` defaults to all-ones (full connectivity
    /// across input slices) when `None`.
    pub fn new(
        geometry: ConvGeometry,
        pool_r: usize,
        nl: Nonlinearity,
        in_depth: usize,
        out_depth: usize,
        mixing: Option<Vec<Vec1D>>,
    ) -> Result<Self> {
        Self::build(geometry, pool_r, nl, in_depth, out_depth, mixing, false)
    }

    /// The terminal fully-connected layer: full-size window, unit stride,
    /// no pooling, all-ones mixing, one output class per output slice.
    pub fn final_layer(
        in_rows: usize,
        in_cols: usize,
        in_depth: usize,
        class_count: usize,
        nl: Nonlinearity,
    ) -> Result<Self> {
        Self::final_layer_with_mixing(in_rows, in_cols, in_depth, class_count, nl, None)
    }

    /// [`final_layer`](Self::final_layer) with explicit mixing vectors.
    pub fn final_layer_with_mixing(
        in_rows: usize,
        in_cols: usize,
        in_depth: usize,
        class_count: usize,
        nl: Nonlinearity,
        mixing: Option<Vec<Vec1D>>,
    ) -> Result<Self> {
        let geometry = ConvGeometry::new(in_rows, in_cols, in_rows, in_cols, 1)?;
        Self::build(geometry, 1, nl, in_depth, class_count, mixing, true)
    }

    fn build(
        geometry: ConvGeometry,
        pool_r: usize,
        nl: Nonlinearity,
        in_depth: usize,
        out_depth: usize,
        mixing: Option<Vec<Vec1D>>,
        is_final: bool,
    ) -> Result<Self> {
        if in_depth == 0 || out_depth == 0 {
            return Err(Error::Geometry("layer depths must be positive".into()));
        }
        if pool_r == 0 {
            return Err(Error::Geometry("pooling factor must be positive".into()));
        }
        if !geometry.out_rows().is_multiple_of(pool_r)
            || !geometry.out_cols().is_multiple_of(pool_r)
        {
            return Err(Error::Geometry(format!(
                "pooling factor {pool_r} does not divide convolution output {}x{}",
                geometry.out_rows(),
                geometry.out_cols()
            )));
        }
        if is_final {
            let ok = geometry.out_rows() == 1
                && geometry.out_cols() == 1
                && pool_r == 1
                && geometry.filter_rows() == geometry.in_rows()
                && geometry.filter_cols() == geometry.in_cols()
                && geometry.stride() == 1;
            if !ok {
                return Err(Error::Geometry(
                    "final layer must use a full-size window, unit stride, and no pooling".into(),
                ));
            }
        }
        let mixing = match mixing {
            Some(m) => {
                if m.len() != out_depth {
                    return Err(Error::InvalidArgument(format!(
                        "layer: {} mixing vectors for out_depth {out_depth}",
                        m.len()
                    )));
                }
                if let Some(bad) = m.iter().find(|v| v.dim() != in_depth) {
                    return Err(Error::InvalidArgument(format!(
                        "layer: mixing vector of dim {} for in_depth {in_depth}",
                        bad.dim()
                    )));
                }
                m
            }
            None => vec![Vec1D::ones(in_depth); out_depth],
        };
        Ok(LayerSpec {
            geometry,
            pool_r,
            nl,
            in_depth,
            out_depth,
            mixing,
            is_final,
        })
    }

    pub fn geometry(&self) -> &ConvGeometry {
        &self.geometry
    }

    pub fn pool_r(&self) -> usize {
        self.pool_r
    }

    pub fn nl(&self) -> Nonlinearity {
        self.nl
    }

    pub fn in_depth(&self) -> usize {
        self.in_depth
    }

    pub fn out_depth(&self) -> usize {
        self.out_depth
    }

    pub fn mixing(&self) -> &[Vec1D] {
        &self.mixing
    }

    pub fn is_final(&self) -> bool {
        self.is_final
    }

    pub fn in_shape(&self) -> Shape {
        self.geometry.in_shape(self.in_depth)
    }

    /// Shape after convolution, before pooling. Also the bias shape.
    pub fn conv_out_shape(&self) -> Shape {
        self.geometry.out_shape(self.out_depth)
    }

    pub fn out_shape(&self) -> Shape {
        Shape::new(
            self.geometry.out_rows() / self.pool_r,
            self.geometry.out_cols() / self.pool_r,
            self.out_depth,
        )
    }

    pub fn filter_shape(&self) -> Shape {
        Shape::new(
            self.geometry.filter_rows(),
            self.geometry.filter_cols(),
            self.out_depth,
        )
    }
}

/// Trainable parameters of one layer: the filter bank and the bias stack
/// (one bias matrix per output slice, shaped like the convolution output).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub bank: FilterBank,
    pub bias: FeatureStack,
}

impl LayerParams {
    pub fn new(spec: &LayerSpec, filters: FeatureStack, bias: FeatureStack) -> Result<Self> {
        if filters.shape() != spec.filter_shape() {
            return Err(Error::ShapeMismatch {
                op: "LayerParams filters",
                left: filters.shape(),
                right: spec.filter_shape(),
            });
        }
        if bias.shape() != spec.conv_out_shape() {
            return Err(Error::ShapeMismatch {
                op: "LayerParams bias",
                left: bias.shape(),
                right: spec.conv_out_shape(),
            });
        }
        let bank = FilterBank::new(filters, spec.mixing().to_vec())?;
        Ok(LayerParams { bank, bias })
    }

    pub fn zeros(spec: &LayerSpec) -> Self {
        let f = spec.filter_shape();
        let b = spec.conv_out_shape();
        LayerParams {
            bank: FilterBank::new(
                FeatureStack::zeros(f.rows, f.cols, f.depth),
                spec.mixing().to_vec(),
            )
            .expect("mixing validated by spec"),
            bias: FeatureStack::zeros(b.rows, b.cols, b.depth),
        }
    }
}

/// Values saved by one forward pass for reuse in the backward passes:
/// the layer input, the pre-activation, the output, and — when a tangent was
/// propagated — the tangent input and the convolution of the filters with it.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pub input: FeatureStack,
    pub preactivation: FeatureStack,
    pub output: FeatureStack,
    pub tangent_in: Option<FeatureStack>,
    pub tangent_conv: Option<FeatureStack>,
}

/// Forward pass: pool(activation(convolve(filters, x) + bias)).
pub fn forward(
    spec: &LayerSpec,
    params: &LayerParams,
    x: &FeatureStack,
) -> Result<(FeatureStack, LayerCache)> {
    let z = convolve(&params.bank, x, spec.geometry())?.add(&params.bias)?;
    let out = pool_avg(&spec.nl().apply(&z), spec.pool_r())?;
    let cache = LayerCache {
        input: x.clone(),
        preactivation: z,
        output: out.clone(),
        tangent_in: None,
        tangent_conv: None,
    };
    Ok((out, cache))
}

/// Derivative with respect to the input, applied to a tangent `v`:
/// pool(sigma'(z) * convolve(filters, v)).
pub fn df_apply(
    spec: &LayerSpec,
    cache: &LayerCache,
    params: &LayerParams,
    v: &FeatureStack,
) -> Result<FeatureStack> {
    let cv = convolve(&params.bank, v, spec.geometry())?;
    pool_avg(
        &spec.nl().d_apply(&cache.preactivation, &cv)?,
        spec.pool_r(),
    )
}

/// Adjoint of [`df_apply`]: pulls an output cotangent `e` back to input
/// space.
pub fn df_adjoint(
    spec: &LayerSpec,
    cache: &LayerCache,
    params: &LayerParams,
    e: &FeatureStack,
) -> Result<FeatureStack> {
    let back = pool_avg_adjoint(e, spec.pool_r());
    let scaled = spec.nl().d_apply(&cache.preactivation, &back)?;
    convolve_adjoint_wrt_input(&params.bank, &scaled, spec.geometry())
}

/// Derivative with respect to the filters, applied to a filter perturbation
/// `u` (shaped like the filter stack, mixed with the layer's fixed vectors).
pub fn grad_filters_apply(
    spec: &LayerSpec,
    cache: &LayerCache,
    params: &LayerParams,
    u: &FeatureStack,
) -> Result<FeatureStack> {
    let bank_u = params.bank.with_filters(u.clone())?;
    let cu = convolve(&bank_u, &cache.input, spec.geometry())?;
    pool_avg(
        &spec.nl().d_apply(&cache.preactivation, &cu)?,
        spec.pool_r(),
    )
}

/// Adjoint of [`grad_filters_apply`]: the filter-space gradient for an
/// output cotangent `e`.
pub fn grad_filters_adjoint(
    spec: &LayerSpec,
    cache: &LayerCache,
    params: &LayerParams,
    e: &FeatureStack,
) -> Result<FeatureStack> {
    let back = pool_avg_adjoint(e, spec.pool_r());
    let scaled = spec.nl().d_apply(&cache.preactivation, &back)?;
    convolve_adjoint_wrt_filters(&cache.input, &scaled, spec.geometry(), params.bank.mixing())
}

/// Derivative with respect to the bias, applied to a bias perturbation.
pub fn grad_bias_apply(
    spec: &LayerSpec,
    cache: &LayerCache,
    u: &FeatureStack,
) -> Result<FeatureStack> {
    pool_avg(&spec.nl().d_apply(&cache.preactivation, u)?, spec.pool_r())
}

/// Adjoint of [`grad_bias_apply`]: the bias-space gradient for an output
/// cotangent `e`.
pub fn grad_bias_adjoint(
    spec: &LayerSpec,
    cache: &LayerCache,
    e: &FeatureStack,
) -> Result<FeatureStack> {
    let back = pool_avg_adjoint(e, spec.pool_r());
    spec.nl().d_apply(&cache.preactivation, &back)
}

/// Mixed second derivative (input direction `v`, then filters), applied to a
/// filter perturbation `u`:
/// pool(sigma''(z) * convolve(filters, v) * convolve(u, x))
///   + pool(sigma'(z) * convolve(u, v)).
pub fn d2_mixed_filters_apply(
    spec: &LayerSpec,
    cache: &LayerCache,
    params: &LayerParams,
    v: &FeatureStack,
    u: &FeatureStack,
) -> Result<FeatureStack> {
    let nl = spec.nl();
    let cwv = convolve(&params.bank, v, spec.geometry())?;
    let bank_u = params.bank.with_filters(u.clone())?;
    let cux = convolve(&bank_u, &cache.input, spec.geometry())?;
    let second = nl.d2_apply(&cache.preactivation, &cwv, &cux)?;
    let cuv = convolve(&bank_u, v, spec.geometry())?;
    let first = nl.d_apply(&cache.preactivation, &cuv)?;
    pool_avg(&second.add(&first)?, spec.pool_r())
}

/// Adjoint of [`d2_mixed_filters_apply`] in the filter slot: for a fixed
/// input direction `v`, pulls an output cotangent `e` back to filter space.
pub fn d2_mixed_filters_adjoint(
    spec: &LayerSpec,
    cache: &LayerCache,
    params: &LayerParams,
    v: &FeatureStack,
    e: &FeatureStack,
) -> Result<FeatureStack> {
    let nl = spec.nl();
    let g = spec.geometry();
    let mixing = params.bank.mixing();
    let back = pool_avg_adjoint(e, spec.pool_r());
    let cwv = convolve(&params.bank, v, g)?;
    let second = nl.d2_apply(&cache.preactivation, &cwv, &back)?;
    let term_x = convolve_adjoint_wrt_filters(&cache.input, &second, g, mixing)?;
    let first = nl.d_apply(&cache.preactivation, &back)?;
    let term_v = convolve_adjoint_wrt_filters(v, &first, g, mixing)?;
    term_x.add(&term_v)
}

/// Mixed second derivative (input direction `v`, then bias), applied to a
/// bias perturbation `u`: pool(sigma''(z) * convolve(filters, v) * u).
pub fn d2_mixed_bias_apply(
    spec: &LayerSpec,
    cache: &LayerCache,
    params: &LayerParams,
    v: &FeatureStack,
    u: &FeatureStack,
) -> Result<FeatureStack> {
    let cwv = convolve(&params.bank, v, spec.geometry())?;
    let second = spec.nl().d2_apply(&cache.preactivation, &cwv, u)?;
    pool_avg(&second, spec.pool_r())
}

/// Adjoint of [`d2_mixed_bias_apply`] in the bias slot.
pub fn d2_mixed_bias_adjoint(
    spec: &LayerSpec,
    cache: &LayerCache,
    params: &LayerParams,
    v: &FeatureStack,
    e: &FeatureStack,
) -> Result<FeatureStack> {
    let back = pool_avg_adjoint(e, spec.pool_r());
    let cwv = convolve(&params.bank, v, spec.geometry())?;
    spec.nl().d2_apply(&cache.preactivation, &cwv, &back)
}

/// Second derivative with respect to the input, with the first direction `v`
/// fixed, applied to a second direction `v2`:
/// pool(sigma''(z) * convolve(filters, v) * convolve(filters, v2)).
pub fn d2_input_apply(
    spec: &LayerSpec,
    cache: &LayerCache,
    params: &LayerParams,
    v: &FeatureStack,
    v2: &FeatureStack,
) -> Result<FeatureStack> {
    let cwv = convolve(&params.bank, v, spec.geometry())?;
    let cwv2 = convolve(&params.bank, v2, spec.geometry())?;
    let second = spec.nl().d2_apply(&cache.preactivation, &cwv, &cwv2)?;
    pool_avg(&second, spec.pool_r())
}

/// Adjoint of [`d2_input_apply`] in the second input slot.
pub fn d2_input_adjoint(
    spec: &LayerSpec,
    cache: &LayerCache,
    params: &LayerParams,
    v: &FeatureStack,
    e: &FeatureStack,
) -> Result<FeatureStack> {
    let back = pool_avg_adjoint(e, spec.pool_r());
    let cwv = convolve(&params.bank, v, spec.geometry())?;
    let second = spec.nl().d2_apply(&cache.preactivation, &cwv, &back)?;
    convolve_adjoint_wrt_input(&params.bank, &second, spec.geometry())
}

/// The filters-then-input evaluation order of the mixed second derivative:
/// differentiates [`df_apply`] in the filters along `u`, applied to the
/// input tangent `e`. Must agree with [`d2_mixed_filters_apply`] with the
/// argument roles swapped; the two are computed along different paths and
/// compared in tests.
pub fn grad_d_filters_apply(
    spec: &LayerSpec,
    cache: &LayerCache,
    params: &LayerParams,
    u: &FeatureStack,
    e: &FeatureStack,
) -> Result<FeatureStack> {
    let nl = spec.nl();
    let bank_u = params.bank.with_filters(u.clone())?;
    let cux = convolve(&bank_u, &cache.input, spec.geometry())?;
    let cwe = convolve(&params.bank, e, spec.geometry())?;
    let second = nl.d2_apply(&cache.preactivation, &cux, &cwe)?;
    let cue = convolve(&bank_u, e, spec.geometry())?;
    let first = nl.d_apply(&cache.preactivation, &cue)?;
    pool_avg(&second.add(&first)?, spec.pool_r())
}

/// The bias-then-input evaluation order of the mixed second derivative with
/// respect to the bias. Counterpart of [`d2_mixed_bias_apply`].
pub fn grad_d_bias_apply(
    spec: &LayerSpec,
    cache: &LayerCache,
    params: &LayerParams,
    u: &FeatureStack,
    e: &FeatureStack,
) -> Result<FeatureStack> {
    let cwe = convolve(&params.bank, e, spec.geometry())?;
    let second = spec.nl().d2_apply(&cache.preactivation, u, &cwe)?;
    pool_avg(&second, spec.pool_r())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::axpy;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stack(rng: &mut ChaCha8Rng, shape: Shape) -> FeatureStack {
        let data = (0..shape.len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        FeatureStack::from_vec(shape.rows, shape.cols, shape.depth, data).unwrap()
    }

    // 4x4x2 input, 2x2 filters at stride 2 (conv out 2x2), pool 2, out 1x1x2
    fn small_spec(nl: Nonlinearity) -> LayerSpec {
        let g = ConvGeometry::new(4, 4, 2, 2, 2).unwrap();
        LayerSpec::new(g, 2, nl, 2, 2, None).unwrap()
    }

    fn random_params(rng: &mut ChaCha8Rng, spec: &LayerSpec) -> LayerParams {
        LayerParams::new(
            spec,
            random_stack(rng, spec.filter_shape()),
            random_stack(rng, spec.conv_out_shape()),
        )
        .unwrap()
    }

    #[test]
    fn forward_zero_params_tanh_gives_zero() {
        let spec = small_spec(Nonlinearity::Tanh);
        let params = LayerParams::zeros(&spec);
        let x = FeatureStack::filled(4, 4, 2, 0.7);
        let (out, _) = forward(&spec, &params, &x).unwrap();
        assert_eq!(out, FeatureStack::zeros(1, 1, 2));
    }

    #[test]
    fn forward_identity_ish_layer_is_elementwise_tanh() {
        // p=q=1, stride 1, r=1, one slice in and out, unit filter, zero bias
        let g = ConvGeometry::new(3, 3, 1, 1, 1).unwrap();
        let spec = LayerSpec::new(g, 1, Nonlinearity::Tanh, 1, 1, None).unwrap();
        let params = LayerParams::new(
            &spec,
            FeatureStack::single(1, 1, vec![1.0]).unwrap(),
            FeatureStack::zeros(3, 3, 1),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let x = random_stack(&mut rng, Shape::new(3, 3, 1));
        let (out, _) = forward(&spec, &params, &x).unwrap();
        assert_eq!(out, x.map(|t| t.tanh()));
    }

    #[test]
    fn final_layer_matches_per_class_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let spec = LayerSpec::final_layer(3, 2, 2, 4, Nonlinearity::Sigmoid).unwrap();
        let params = random_params(&mut rng, &spec);
        let x = random_stack(&mut rng, Shape::new(3, 2, 2));
        let (out, _) = forward(&spec, &params, &x).unwrap();
        assert_eq!(out.shape(), Shape::new(1, 1, 4));
        for a in 1..=4 {
            let mut acc = 0.0;
            for i in 1..=2 {
                for r in 1..=3 {
                    for s in 1..=2 {
                        acc += params.bank.filters().get(a, r, s) * x.get(i, r, s);
                    }
                }
            }
            acc += params.bias.get(a, 1, 1);
            let expected = Nonlinearity::Sigmoid.sigma(acc);
            assert!((out.get(a, 1, 1) - expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn df_zero_tangent_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let spec = small_spec(Nonlinearity::Tanh);
        let params = random_params(&mut rng, &spec);
        let x = random_stack(&mut rng, spec.in_shape());
        let (_, cache) = forward(&spec, &params, &x).unwrap();
        let v = FeatureStack::zeros(4, 4, 2);
        let out = df_apply(&spec, &cache, &params, &v).unwrap();
        assert_eq!(out, FeatureStack::zeros(1, 1, 2));
    }

    #[test]
    fn df_matches_central_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let spec = small_spec(Nonlinearity::Tanh);
        let params = random_params(&mut rng, &spec);
        let x = random_stack(&mut rng, spec.in_shape());
        let v = random_stack(&mut rng, spec.in_shape());
        let (_, cache) = forward(&spec, &params, &x).unwrap();
        let analytic = df_apply(&spec, &cache, &params, &v).unwrap();

        let h = 1e-5;
        let (plus, _) = forward(&spec, &params, &axpy(h, &v, &x).unwrap()).unwrap();
        let (minus, _) = forward(&spec, &params, &axpy(-h, &v, &x).unwrap()).unwrap();
        let fd = plus.sub(&minus).unwrap().scaled(1.0 / (2.0 * h));
        for (a, f) in analytic.data().iter().zip(fd.data()) {
            let denom = a.abs().max(f.abs()).max(1e-8);
            assert!((a - f).abs() / denom <= 1e-6, "{a} vs {f}");
        }
    }

    #[test]
    fn df_with_identity_hook_equals_pooled_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let spec = small_spec(Nonlinearity::Identity);
        let params = random_params(&mut rng, &spec);
        let x = random_stack(&mut rng, spec.in_shape());
        let v = random_stack(&mut rng, spec.in_shape());
        let (_, cache) = forward(&spec, &params, &x).unwrap();
        let lhs = df_apply(&spec, &cache, &params, &v).unwrap();
        let rhs = pool_avg(
            &convolve(&params.bank, &v, spec.geometry()).unwrap(),
            spec.pool_r(),
        )
        .unwrap();
        assert_eq!(lhs, rhs);
    }

    fn check_pair(
        rng: &mut ChaCha8Rng,
        in_shape: Shape,
        out_shape: Shape,
        fwd: impl Fn(&FeatureStack) -> FeatureStack,
        adj: impl Fn(&FeatureStack) -> FeatureStack,
    ) {
        for _ in 0..30 {
            let x = random_stack(rng, in_shape);
            let y = random_stack(rng, out_shape);
            let lhs = y.inner(&fwd(&x)).unwrap();
            let rhs = adj(&y).inner(&x).unwrap();
            assert!((lhs - rhs).abs() <= 1e-10, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn first_order_adjoint_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let spec = small_spec(Nonlinearity::Sigmoid);
        let params = random_params(&mut rng, &spec);
        let x = random_stack(&mut rng, spec.in_shape());
        let (_, cache) = forward(&spec, &params, &x).unwrap();

        check_pair(
            &mut rng,
            spec.in_shape(),
            spec.out_shape(),
            |v| df_apply(&spec, &cache, &params, v).unwrap(),
            |e| df_adjoint(&spec, &cache, &params, e).unwrap(),
        );
        check_pair(
            &mut rng,
            spec.filter_shape(),
            spec.out_shape(),
            |u| grad_filters_apply(&spec, &cache, &params, u).unwrap(),
            |e| grad_filters_adjoint(&spec, &cache, &params, e).unwrap(),
        );
        check_pair(
            &mut rng,
            spec.conv_out_shape(),
            spec.out_shape(),
            |u| grad_bias_apply(&spec, &cache, u).unwrap(),
            |e| grad_bias_adjoint(&spec, &cache, e).unwrap(),
        );
    }

    #[test]
    fn second_order_adjoint_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let spec = small_spec(Nonlinearity::Tanh);
        let params = random_params(&mut rng, &spec);
        let x = random_stack(&mut rng, spec.in_shape());
        let v = random_stack(&mut rng, spec.in_shape());
        let (_, cache) = forward(&spec, &params, &x).unwrap();

        check_pair(
            &mut rng,
            spec.filter_shape(),
            spec.out_shape(),
            |u| d2_mixed_filters_apply(&spec, &cache, &params, &v, u).unwrap(),
            |e| d2_mixed_filters_adjoint(&spec, &cache, &params, &v, e).unwrap(),
        );
        check_pair(
            &mut rng,
            spec.conv_out_shape(),
            spec.out_shape(),
            |u| d2_mixed_bias_apply(&spec, &cache, &params, &v, u).unwrap(),
            |e| d2_mixed_bias_adjoint(&spec, &cache, &params, &v, e).unwrap(),
        );
        check_pair(
            &mut rng,
            spec.in_shape(),
            spec.out_shape(),
            |v2| d2_input_apply(&spec, &cache, &params, &v, v2).unwrap(),
            |e| d2_input_adjoint(&spec, &cache, &params, &v, e).unwrap(),
        );
    }

    #[test]
    fn second_order_zero_direction_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let spec = small_spec(Nonlinearity::Tanh);
        let params = random_params(&mut rng, &spec);
        let x = random_stack(&mut rng, spec.in_shape());
        let (_, cache) = forward(&spec, &params, &x).unwrap();
        let v0 = FeatureStack::zeros(4, 4, 2);
        let e = random_stack(&mut rng, spec.out_shape());
        let zero_f = FeatureStack::zeros(2, 2, 2);
        assert_eq!(
            d2_mixed_filters_adjoint(&spec, &cache, &params, &v0, &e).unwrap(),
            zero_f
        );
        let zero_b = FeatureStack::zeros(2, 2, 2);
        assert_eq!(
            d2_mixed_bias_adjoint(&spec, &cache, &params, &v0, &e).unwrap(),
            zero_b
        );
        assert_eq!(
            d2_input_adjoint(&spec, &cache, &params, &v0, &e).unwrap(),
            v0
        );
    }

    #[test]
    fn relu_second_order_reduces_to_first_derivative_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let spec = small_spec(Nonlinearity::Relu);
        let params = random_params(&mut rng, &spec);
        let x = random_stack(&mut rng, spec.in_shape());
        let v = random_stack(&mut rng, spec.in_shape());
        let e = random_stack(&mut rng, spec.out_shape());
        let (_, cache) = forward(&spec, &params, &x).unwrap();

        let full = d2_mixed_filters_adjoint(&spec, &cache, &params, &v, &e).unwrap();
        let back = pool_avg_adjoint(&e, spec.pool_r());
        let first = spec.nl().d_apply(&cache.preactivation, &back).unwrap();
        let reduced =
            convolve_adjoint_wrt_filters(&v, &first, spec.geometry(), params.bank.mixing())
                .unwrap();
        assert_eq!(full, reduced);

        // bias channel vanishes entirely
        assert_eq!(
            d2_mixed_bias_adjoint(&spec, &cache, &params, &v, &e).unwrap(),
            FeatureStack::zeros(2, 2, 2)
        );
    }

    #[test]
    fn mixed_partials_symmetry_both_orders() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let spec = small_spec(Nonlinearity::Sigmoid);
        let params = random_params(&mut rng, &spec);
        let x = random_stack(&mut rng, spec.in_shape());
        let (_, cache) = forward(&spec, &params, &x).unwrap();
        for _ in 0..20 {
            let e = random_stack(&mut rng, spec.in_shape());
            let u = random_stack(&mut rng, spec.filter_shape());
            let lhs = d2_mixed_filters_apply(&spec, &cache, &params, &e, &u).unwrap();
            let rhs = grad_d_filters_apply(&spec, &cache, &params, &u, &e).unwrap();
            for (l, r) in lhs.data().iter().zip(rhs.data()) {
                assert!((l - r).abs() <= 1e-10);
            }
            let ub = random_stack(&mut rng, spec.conv_out_shape());
            let lhs = d2_mixed_bias_apply(&spec, &cache, &params, &e, &ub).unwrap();
            let rhs = grad_d_bias_apply(&spec, &cache, &params, &ub, &e).unwrap();
            for (l, r) in lhs.data().iter().zip(rhs.data()) {
                assert!((l - r).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn d2_mixed_bias_matches_fd_of_bias_derivative() {
        // central difference in x of the bias-derivative action, against the
        // mixed second-derivative forward form
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let spec = small_spec(Nonlinearity::Sigmoid);
        let params = random_params(&mut rng, &spec);
        let x = random_stack(&mut rng, spec.in_shape());
        let v = random_stack(&mut rng, spec.in_shape());
        let u = random_stack(&mut rng, spec.conv_out_shape());
        let (_, cache) = forward(&spec, &params, &x).unwrap();
        let analytic = d2_mixed_bias_apply(&spec, &cache, &params, &v, &u).unwrap();

        let h = 1e-5;
        let (_, cache_plus) = forward(&spec, &params, &axpy(h, &v, &x).unwrap()).unwrap();
        let (_, cache_minus) = forward(&spec, &params, &axpy(-h, &v, &x).unwrap()).unwrap();
        let plus = grad_bias_apply(&spec, &cache_plus, &u).unwrap();
        let minus = grad_bias_apply(&spec, &cache_minus, &u).unwrap();
        let fd = plus.sub(&minus).unwrap().scaled(1.0 / (2.0 * h));
        for (a, f) in analytic.data().iter().zip(fd.data()) {
            let denom = a.abs().max(f.abs()).max(1e-8);
            assert!(
                (a - f).abs() <= 1e-8 || (a - f).abs() / denom <= 1e-6,
                "{a} vs {f}"
            );
        }
    }

    #[test]
    fn d2_input_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let spec = small_spec(Nonlinearity::Tanh);
        let params = random_params(&mut rng, &spec);
        let x = random_stack(&mut rng, spec.in_shape());
        let (_, cache) = forward(&spec, &params, &x).unwrap();
        for _ in 0..20 {
            let v = random_stack(&mut rng, spec.in_shape());
            let v2 = random_stack(&mut rng, spec.in_shape());
            let lhs = d2_input_apply(&spec, &cache, &params, &v, &v2).unwrap();
            let rhs = d2_input_apply(&spec, &cache, &params, &v2, &v).unwrap();
            for (l, r) in lhs.data().iter().zip(rhs.data()) {
                assert!((l - r).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn d2_input_matches_second_central_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let spec = small_spec(Nonlinearity::Tanh);
        let params = random_params(&mut rng, &spec);
        let x = random_stack(&mut rng, spec.in_shape());
        let v = random_stack(&mut rng, spec.in_shape());
        let (center, cache) = forward(&spec, &params, &x).unwrap();
        let analytic = d2_input_apply(&spec, &cache, &params, &v, &v).unwrap();

        let h = 1e-4;
        let (plus, _) = forward(&spec, &params, &axpy(h, &v, &x).unwrap()).unwrap();
        let (minus, _) = forward(&spec, &params, &axpy(-h, &v, &x).unwrap()).unwrap();
        let fd = plus
            .add(&minus)
            .unwrap()
            .sub(&center.scaled(2.0))
            .unwrap()
            .scaled(1.0 / (h * h));
        for (a, f) in analytic.data().iter().zip(fd.data()) {
            let denom = a.abs().max(f.abs()).max(1e-4);
            assert!((a - f).abs() / denom <= 1e-4, "{a} vs {f}");
        }
    }

    #[test]
    fn grad_filters_fd_transpose_vector_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let spec = small_spec(Nonlinearity::Sigmoid);
        let params = random_params(&mut rng, &spec);
        let x = random_stack(&mut rng, spec.in_shape());
        let e = random_stack(&mut rng, spec.out_shape());
        let (_, cache) = forward(&spec, &params, &x).unwrap();
        let analytic = grad_filters_adjoint(&spec, &cache, &params, &e).unwrap();

        // FD of <e, f(x; W + h u)> in every filter coordinate
        let h = 1e-5;
        let fshape = spec.filter_shape();
        for idx in 0..fshape.len() {
            let mut fp = params.bank.filters().clone().data().to_vec();
            fp[idx] += h;
            let mut fm = params.bank.filters().clone().data().to_vec();
            fm[idx] -= h;
            let pp = LayerParams::new(
                &spec,
                FeatureStack::from_vec(fshape.rows, fshape.cols, fshape.depth, fp).unwrap(),
                params.bias.clone(),
            )
            .unwrap();
            let pm = LayerParams::new(
                &spec,
                FeatureStack::from_vec(fshape.rows, fshape.cols, fshape.depth, fm).unwrap(),
                params.bias.clone(),
            )
            .unwrap();
            let (op, _) = forward(&spec, &pp, &x).unwrap();
            let (om, _) = forward(&spec, &pm, &x).unwrap();
            let fd = (e.inner(&op).unwrap() - e.inner(&om).unwrap()) / (2.0 * h);
            let a = analytic.data()[idx];
            let denom = a.abs().max(fd.abs()).max(1e-8);
            assert!((a - fd).abs() / denom <= 1e-6, "coord {idx}: {a} vs {fd}");
        }
    }

    #[test]
    fn grad_bias_identity_hook_is_pool_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let spec = small_spec(Nonlinearity::Identity);
        let params = random_params(&mut rng, &spec);
        let x = random_stack(&mut rng, spec.in_shape());
        let e = random_stack(&mut rng, spec.out_shape());
        let (_, cache) = forward(&spec, &params, &x).unwrap();
        let lhs = grad_bias_adjoint(&spec, &cache, &e).unwrap();
        assert_eq!(lhs, pool_avg_adjoint(&e, spec.pool_r()));
    }

    #[test]
    fn final_layer_spec_rejects_bad_geometry() {
        assert!(LayerSpec::final_layer(0, 1, 1, 2, Nonlinearity::Tanh).is_err());
        let g = ConvGeometry::new(4, 4, 2, 2, 2).unwrap();
        // pool 3 does not divide 2x2 conv output
        assert!(LayerSpec::new(g, 3, Nonlinearity::Tanh, 1, 1, None).is_err());
    }
}

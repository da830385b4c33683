//! Acceptance suite: one test per criterion, each printing a PASS line when
//! its assertions hold. Run with `cargo test --test acceptance -- --nocapture`
//! to see the per-criterion lines.

mod common;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cfcnn::layer::{self, LayerSpec};
use cfcnn::linalg::{axpy, FeatureStack, Shape, Vec1D};
use cfcnn::network::{forward, forward_tangent, NetworkSpec, NetworkState};
use cfcnn::ops::{
    self, convolve_adjoint_wrt_filters, convolve_adjoint_wrt_input, pool_avg_adjoint, ConvGeometry,
    FilterBank, Nonlinearity,
};
use cfcnn::train::{
    descent_step, grads_first_order, grads_higher_order, init_params, loss_j, loss_r, loss_total,
    Sample, TangentTarget, TrainConfig,
};
use cfcnn::verify::{
    adjoint_suite, check_adjoint_pair, dense_grads_to_network, dense_mlp_forward,
    dense_mlp_gradients, fc_network_to_dense, fd_gradient, grad_coord_close, random_stack,
};

use common::{random_network, random_sample};

fn assert_grads_close(
    spec: &NetworkSpec,
    analytic: &cfcnn::train::GradientSet,
    fd: &cfcnn::train::GradientSet,
    rel_tol: f64,
    abs_tol: f64,
    context: &str,
) {
    for t in 0..spec.len() {
        for (idx, (a, f)) in analytic.d_filters[t]
            .data()
            .iter()
            .zip(fd.d_filters[t].data())
            .enumerate()
        {
            assert!(
                grad_coord_close(*a, *f, rel_tol, abs_tol),
                "{context}: layer {} filter coord {idx}: analytic {a} vs fd {f}",
                t + 1
            );
        }
        for (idx, (a, f)) in analytic.d_bias[t]
            .data()
            .iter()
            .zip(fd.d_bias[t].data())
            .enumerate()
        {
            assert!(
                grad_coord_close(*a, *f, rel_tol, abs_tol),
                "{context}: layer {} bias coord {idx}: analytic {a} vs fd {f}",
                t + 1
            );
        }
    }
}

#[test]
fn criterion_1_adjoint_suite() {
    let start = Instant::now();
    let reports = adjoint_suite(6, 100, 1e-10, 1e-12, 0x5EED).unwrap();
    assert_eq!(reports.len(), 13, "expected all operator/adjoint pairs");
    for report in &reports {
        assert!(report.pass(), "{report}");
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs_f64() <= 10.0,
        "adjoint suite took {elapsed:?}, budget 10 s"
    );
    println!(
        "ACCEPTANCE 1 adjoint-suite: PASS ({} pairs, worst pair err {:.2e}, worst dense err {:.2e}, {:.2?})",
        reports.len(),
        reports.iter().map(|r| r.max_pair_err).fold(0.0, f64::max),
        reports.iter().map(|r| r.max_dense_err).fold(0.0, f64::max),
        elapsed
    );
}

#[test]
fn criterion_2_first_order_gradient_check() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC2);
    let mut coords = 0usize;
    for i in 0..20 {
        let nl = if i % 2 == 0 {
            Nonlinearity::Tanh
        } else {
            Nonlinearity::Sigmoid
        };
        let (spec, state) = random_network(&mut rng, 3, 5, nl);
        let sample = random_sample(&mut rng, &spec, 0);
        let analytic = grads_first_order(&spec, &state, &sample).unwrap();
        let fd = fd_gradient(&|s| loss_j(&spec, s, &sample), &spec, &state, 1e-5).unwrap();
        coords += state.param_count();
        assert_grads_close(&spec, &analytic, &fd, 1e-6, 1e-8, &format!("net {i}"));
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs_f64() <= 60.0,
        "first-order check took {elapsed:?}, budget 60 s"
    );
    println!(
        "ACCEPTANCE 2 first-order-gradients: PASS (20 networks, {coords} coordinates, {elapsed:.2?})"
    );
}

#[test]
fn criterion_3_higher_order_gradient_check() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC3);
    let mut coords = 0usize;
    for i in 0..20 {
        let nl = if i % 2 == 0 {
            Nonlinearity::Tanh
        } else {
            Nonlinearity::Sigmoid
        };
        let (spec, state) = random_network(&mut rng, 3, 5, nl);
        let tangent_count = 1 + (i % 2);
        let sample = random_sample(&mut rng, &spec, tangent_count);
        let analytic = grads_higher_order(&spec, &state, &sample).unwrap();
        let fd = fd_gradient(&|s| loss_r(&spec, s, &sample), &spec, &state, 1e-5).unwrap();
        coords += state.param_count();
        assert_grads_close(&spec, &analytic, &fd, 1e-5, 1e-7, &format!("net {i}"));
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs_f64() <= 120.0,
        "higher-order check took {elapsed:?}, budget 120 s"
    );
    println!(
        "ACCEPTANCE 3 higher-order-gradients: PASS (20 networks, {coords} coordinates, {elapsed:.2?})"
    );
}

#[test]
fn criterion_4_mixed_partials_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC4);
    let mut probes = 0usize;
    for _ in 0..30 {
        let (spec, params, cache) = cfcnn::verify::random_layer_instance(&mut rng, 5).unwrap();
        for _ in 0..5 {
            let e = random_stack(&mut rng, spec.in_shape());
            let u = random_stack(&mut rng, spec.filter_shape());
            let lhs = layer::d2_mixed_filters_apply(&spec, &cache, &params, &e, &u).unwrap();
            let rhs = layer::grad_d_filters_apply(&spec, &cache, &params, &u, &e).unwrap();
            for (l, r) in lhs.data().iter().zip(rhs.data()) {
                assert!((l - r).abs() <= 1e-10, "filters: {l} vs {r}");
            }
            let ub = random_stack(&mut rng, spec.conv_out_shape());
            let lhs = layer::d2_mixed_bias_apply(&spec, &cache, &params, &e, &ub).unwrap();
            let rhs = layer::grad_d_bias_apply(&spec, &cache, &params, &ub, &e).unwrap();
            for (l, r) in lhs.data().iter().zip(rhs.data()) {
                assert!((l - r).abs() <= 1e-10, "bias: {l} vs {r}");
            }
            probes += 2;
        }
    }
    println!("ACCEPTANCE 4 mixed-partials-identity: PASS (30 layers, {probes} probes)");
}

#[test]
fn criterion_5_fully_connected_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC5);
    let mut worst_fwd = 0.0f64;
    let mut worst_grad = 0.0f64;
    for case in 0..10 {
        let rows = rng.random_range(2..=4);
        let cols = rng.random_range(2..=4);
        let hidden = rng.random_range(2..=4);
        let layers = if case % 2 == 0 {
            // hidden fully-connected layer, then the output layer
            let g = ConvGeometry::new(rows, cols, rows, cols, 1).unwrap();
            vec![
                LayerSpec::new(g, 1, Nonlinearity::Tanh, 1, hidden, None).unwrap(),
                LayerSpec::final_layer(1, 1, hidden, 2, Nonlinearity::Tanh).unwrap(),
            ]
        } else {
            vec![LayerSpec::final_layer(rows, cols, 1, 2, Nonlinearity::Tanh).unwrap()]
        };
        let spec = NetworkSpec::new(layers, 2).unwrap();
        let state = init_params(&spec, 100 + case as u64, 0.5);
        let x = random_stack(&mut rng, spec.input_shape());
        let y = Vec1D::from_vec(vec![
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ]);

        let (weights, biases, nls) = fc_network_to_dense(&spec, &state).unwrap();
        let oracle_out = dense_mlp_forward(&weights, &biases, &nls, x.data()).unwrap();
        let net_out = forward(&spec, &state, &x).unwrap().output;
        for (a, b) in net_out.data().iter().zip(&oracle_out) {
            worst_fwd = worst_fwd.max((a - b).abs());
            assert!((a - b).abs() <= 1e-12, "forward: {a} vs {b}");
        }

        let (dw, db) = dense_mlp_gradients(&weights, &biases, &nls, x.data(), y.data()).unwrap();
        let oracle = dense_grads_to_network(&spec, &dw, &db).unwrap();
        let sample = Sample {
            x,
            y,
            tangents: vec![],
        };
        let analytic = grads_first_order(&spec, &state, &sample).unwrap();
        for t in 0..spec.len() {
            for (a, o) in analytic.d_filters[t]
                .data()
                .iter()
                .zip(oracle.d_filters[t].data())
                .chain(
                    analytic.d_bias[t]
                        .data()
                        .iter()
                        .zip(oracle.d_bias[t].data()),
                )
            {
                worst_grad = worst_grad.max((a - o).abs());
                assert!((a - o).abs() <= 1e-10, "gradient: {a} vs {o}");
            }
        }
    }
    println!(
        "ACCEPTANCE 5 fully-connected-equivalence: PASS (worst forward diff {worst_fwd:.2e}, worst gradient diff {worst_grad:.2e})"
    );
}

#[test]
fn criterion_6_tangent_forward_consistency() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC6);
    let h = 1e-5;
    for i in 0..20 {
        let (spec, state) = random_network(&mut rng, 3, 5, Nonlinearity::Tanh);
        let x = random_stack(&mut rng, spec.input_shape());
        let v = random_stack(&mut rng, spec.input_shape());
        let tangent = forward_tangent(&spec, &state, &x, &v)
            .unwrap()
            .tangent_out
            .unwrap();
        let plus = forward(&spec, &state, &axpy(h, &v, &x).unwrap()).unwrap();
        let minus = forward(&spec, &state, &axpy(-h, &v, &x).unwrap()).unwrap();
        for c in 1..=spec.class_count() {
            let fd = (plus.output.get(c) - minus.output.get(c)) / (2.0 * h);
            let a = tangent.get(c);
            assert!(
                grad_coord_close(a, fd, 1e-6, 1e-8),
                "net {i} class {c}: {a} vs {fd}"
            );
        }
    }
    println!("ACCEPTANCE 6 tangent-forward-consistency: PASS (20 networks)");
}

fn toy_network() -> NetworkSpec {
    // 6x6x1 -> 3x3 conv stride 1 (4x4), pool 2 (2x2x2) -> fully connected
    let g = ConvGeometry::new(6, 6, 3, 3, 1).unwrap();
    let l1 = LayerSpec::new(g, 2, Nonlinearity::Tanh, 1, 2, None).unwrap();
    let l2 = LayerSpec::final_layer(2, 2, 2, 2, Nonlinearity::Tanh).unwrap();
    NetworkSpec::new(vec![l1, l2], 2).unwrap()
}

#[test]
fn criterion_7_training_sanity() {
    let start = Instant::now();
    let spec = toy_network();
    let dataset = cfcnn::cli::generate_blobs(6, 6, 20, 0xACC7);
    assert_eq!(dataset.samples.len(), 40);

    // first-order run
    let cfg = TrainConfig {
        eta: 0.01,
        lambda: 0.0,
        batch_size: 40,
        iterations: 50,
        seed: 17,
        init_scale: 0.3,
    };
    let mut state = init_params(&spec, cfg.seed, cfg.init_scale);
    let mut j_curve = Vec::with_capacity(50);
    for _ in 0..50 {
        state = descent_step(&spec, &state, &dataset.samples, &cfg).unwrap();
        let j: f64 = dataset
            .samples
            .iter()
            .map(|s| loss_j(&spec, &state, s).unwrap())
            .sum();
        j_curve.push(j);
    }
    assert!(
        j_curve[49] < j_curve[0],
        "first-order run did not improve: J(1) = {}, J(50) = {}",
        j_curve[0],
        j_curve[49]
    );

    // tangent-penalty run: zero-beta targets along seeded random directions
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC7 + 1);
    let mut samples = dataset.samples.clone();
    for sample in &mut samples {
        sample.tangents.push(TangentTarget {
            v: random_stack(&mut rng, Shape::new(6, 6, 1)),
            beta: Vec1D::zeros(2),
        });
    }
    let cfg = TrainConfig { lambda: 0.1, ..cfg };
    let mut state = init_params(&spec, cfg.seed, cfg.init_scale);
    let mut curly_curve = Vec::with_capacity(50);
    for _ in 0..50 {
        state = descent_step(&spec, &state, &samples, &cfg).unwrap();
        let curly: f64 = samples
            .iter()
            .map(|s| loss_total(&spec, &state, s, cfg.lambda).unwrap())
            .sum();
        curly_curve.push(curly);
    }
    assert!(
        curly_curve[49] < curly_curve[0],
        "tangent-penalty run did not improve: curlyJ(1) = {}, curlyJ(50) = {}",
        curly_curve[0],
        curly_curve[49]
    );

    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs_f64() <= 30.0,
        "training sanity took {elapsed:?}, budget 30 s"
    );
    println!(
        "ACCEPTANCE 7 training-sanity: PASS (J {:.4} -> {:.4}; curlyJ {:.4} -> {:.4}; {:.2?})",
        j_curve[0], j_curve[49], curly_curve[0], curly_curve[49], elapsed
    );
}

// ---------------------------------------------------------------------------
// criterion 8: seeded defects must be caught by the criteria-1..3 harnesses
// ---------------------------------------------------------------------------

/// Defect 1: pooling adjoint without the 1/r^2 normalization.
fn mutation_pool_missing_normalization() -> bool {
    let report = check_adjoint_pair(
        "mutant_pool",
        &|y| ops::pool_avg(y, 2),
        &|z| Ok(pool_avg_adjoint(z, 2).scaled(4.0)),
        Shape::new(4, 4, 2),
        Shape::new(2, 2, 2),
        100,
        1e-10,
        0x8A,
    )
    .unwrap();
    !report.pass()
}

/// Defect 2: cropping window shifted by one row against its embedding.
fn mutation_crop_off_by_one() -> bool {
    let report = check_adjoint_pair(
        "mutant_crop",
        &|x| ops::crop(x, 2, 1, 2, 2),
        &|z| ops::embed(z, 1, 1, 4, 4),
        Shape::new(4, 4, 1),
        Shape::new(2, 2, 1),
        100,
        1e-10,
        0x8B,
    )
    .unwrap();
    !report.pass()
}

/// Defect 3: the curvature channel of the tangent-penalty recursion paired
/// with the wrong error (the first-derivative term consumes the tangent
/// channel, the second-derivative term the curvature channel). The
/// criterion-3 harness must reject the resulting gradient.
fn mutation_unflipped_error_pairing() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(0x8C);
    // two layers guarantee at least one curvature-channel update
    let g = ConvGeometry::new(4, 4, 2, 2, 2).unwrap();
    let l1 = LayerSpec::new(g, 1, Nonlinearity::Tanh, 1, 2, None).unwrap();
    let l2 = LayerSpec::final_layer(2, 2, 2, 2, Nonlinearity::Tanh).unwrap();
    let spec = NetworkSpec::new(vec![l1, l2], 2).unwrap();
    let state = init_params(&spec, 0x8C, 0.5);
    let sample = random_sample(&mut rng, &spec, 1);

    let mutant = mutant_grads_higher_order_swapped(&spec, &state, &sample);
    let fd = fd_gradient(&|s| loss_r(&spec, s, &sample), &spec, &state, 1e-5).unwrap();
    let mut any_coord_fails = false;
    for t in 0..spec.len() {
        for (a, f) in mutant.0[t]
            .data()
            .iter()
            .zip(fd.d_filters[t].data())
            .chain(mutant.1[t].data().iter().zip(fd.d_bias[t].data()))
        {
            if !grad_coord_close(*a, *f, 1e-5, 1e-7) {
                any_coord_fails = true;
            }
        }
    }
    any_coord_fails
}

/// The tangent-penalty backward recursion with the two error channels
/// mis-paired in the curvature update. Mirrors the real recursion
/// otherwise.
fn mutant_grads_higher_order_swapped(
    spec: &NetworkSpec,
    state: &NetworkState,
    sample: &Sample,
) -> (Vec<FeatureStack>, Vec<FeatureStack>) {
    let target = &sample.tangents[0];
    let trace = forward_tangent(spec, state, &sample.x, &target.v).unwrap();
    let tangent_out = trace.tangent_out.as_ref().unwrap();
    let mut d_filters: Vec<FeatureStack> = spec
        .layers()
        .iter()
        .map(|ls| {
            let s = ls.filter_shape();
            FeatureStack::zeros(s.rows, s.cols, s.depth)
        })
        .collect();
    let mut d_bias: Vec<FeatureStack> = spec
        .layers()
        .iter()
        .map(|ls| {
            let s = ls.conv_out_shape();
            FeatureStack::zeros(s.rows, s.cols, s.depth)
        })
        .collect();
    let mut e_v = tangent_out.sub(&target.beta).unwrap().to_stack();
    let mut e_w = FeatureStack::zeros_like(&e_v);
    for t in (1..=spec.len()).rev() {
        let ls = spec.layer(t);
        let lp = state.layer(t);
        let cache = &trace.caches[t - 1];
        let g = ls.geometry();
        let nl = ls.nl();
        let conv_tangent = cache.tangent_conv.as_ref().unwrap();
        let tangent_in = cache.tangent_in.as_ref().unwrap();
        let back_v = pool_avg_adjoint(&e_v, ls.pool_r());
        let back_w = pool_avg_adjoint(&e_w, ls.pool_r());
        let first_v = nl.d_apply(&cache.preactivation, &back_v).unwrap();
        let first_w = nl.d_apply(&cache.preactivation, &back_w).unwrap();
        let second_v = nl
            .d2_apply(&cache.preactivation, conv_tangent, &back_v)
            .unwrap();
        let mixing = lp.bank.mixing();
        d_bias[t - 1] = d_bias[t - 1].add(&first_w.add(&second_v).unwrap()).unwrap();
        d_filters[t - 1] = d_filters[t - 1]
            .add(
                &convolve_adjoint_wrt_filters(&cache.input, &second_v, g, mixing)
                    .unwrap()
                    .add(&convolve_adjoint_wrt_filters(tangent_in, &first_v, g, mixing).unwrap())
                    .unwrap()
                    .add(&convolve_adjoint_wrt_filters(&cache.input, &first_w, g, mixing).unwrap())
                    .unwrap(),
            )
            .unwrap();
        if t > 1 {
            // DEFECT: the channels are swapped — the first-derivative term
            // consumes the tangent channel and the second-derivative term
            // the curvature channel
            let swapped_second = nl
                .d2_apply(&cache.preactivation, conv_tangent, &back_w)
                .unwrap();
            let new_e_w = convolve_adjoint_wrt_input(&lp.bank, &first_v, g)
                .unwrap()
                .add(&convolve_adjoint_wrt_input(&lp.bank, &swapped_second, g).unwrap())
                .unwrap();
            let new_e_v = convolve_adjoint_wrt_input(&lp.bank, &first_v, g).unwrap();
            e_w = new_e_w;
            e_v = new_e_v;
        }
    }
    (d_filters, d_bias)
}

/// Defect 4: the mixed second-derivative forward form without its
/// second-derivative term, checked against the true adjoint.
fn mutation_missing_second_derivative_term() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(0x8D);
    let g = ConvGeometry::new(4, 4, 2, 2, 2).unwrap();
    let spec = LayerSpec::new(g, 1, Nonlinearity::Tanh, 1, 2, None).unwrap();
    let params = cfcnn::layer::LayerParams::new(
        &spec,
        random_stack(&mut rng, spec.filter_shape()),
        random_stack(&mut rng, spec.conv_out_shape()),
    )
    .unwrap();
    let x = random_stack(&mut rng, spec.in_shape());
    let (_, cache) = layer::forward(&spec, &params, &x).unwrap();
    let v = random_stack(&mut rng, spec.in_shape());
    let (spec2, params2, cache2, v2) = (spec.clone(), params.clone(), cache.clone(), v.clone());

    let report = check_adjoint_pair(
        "mutant_missing_d2_term",
        &move |u| {
            // drops pool(sigma''(z) * conv(filters, v) * conv(u, x))
            let bank_u = params.bank.with_filters(u.clone())?;
            let cuv = ops::convolve(&bank_u, &v, spec.geometry())?;
            ops::pool_avg(
                &spec.nl().d_apply(&cache.preactivation, &cuv)?,
                spec.pool_r(),
            )
        },
        &move |e| layer::d2_mixed_filters_adjoint(&spec2, &cache2, &params2, &v2, e),
        Shape::new(2, 2, 2),
        Shape::new(2, 2, 2),
        100,
        1e-10,
        0x8D,
    )
    .unwrap();
    !report.pass()
}

/// Defect 5: convolution windows placed with unit steps while the output
/// grid assumes the configured stride.
fn mutation_stride_misapplied() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(0x8E);
    let g = ConvGeometry::new(5, 5, 2, 2, 2).unwrap();
    let filters = random_stack(&mut rng, Shape::new(2, 2, 2));
    let bank = FilterBank::full_mixing(filters.clone(), 1);
    let bank2 = bank.clone();

    let mutant_convolve = move |x: &FeatureStack| -> cfcnn::Result<FeatureStack> {
        let mut out = FeatureStack::zeros(g.out_rows(), g.out_cols(), 2);
        for a in 1..=2usize {
            for j in 1..=g.out_rows() {
                for k in 1..=g.out_cols() {
                    // DEFECT: window origin ignores the stride
                    let mut acc = 0.0;
                    for r in 1..=2usize {
                        for s in 1..=2usize {
                            acc += filters.get(a, r, s) * x.get(1, j + r - 1, k + s - 1);
                        }
                    }
                    out.set(a, j, k, acc);
                }
            }
        }
        Ok(out)
    };

    let report = check_adjoint_pair(
        "mutant_stride",
        &mutant_convolve,
        &move |z| convolve_adjoint_wrt_input(&bank2, z, &g),
        Shape::new(5, 5, 1),
        Shape::new(2, 2, 2),
        100,
        1e-10,
        0x8E,
    )
    .unwrap();
    !report.pass()
}

#[test]
fn criterion_8_mutation_sensitivity() {
    let detected = [
        (
            "pool adjoint missing 1/r^2",
            mutation_pool_missing_normalization(),
        ),
        ("crop index off by one", mutation_crop_off_by_one()),
        (
            "error channels mis-paired",
            mutation_unflipped_error_pairing(),
        ),
        (
            "missing second-derivative term",
            mutation_missing_second_derivative_term(),
        ),
        ("stride misapplied", mutation_stride_misapplied()),
    ];
    for (name, caught) in &detected {
        assert!(caught, "seeded defect was not detected: {name}");
    }
    println!(
        "ACCEPTANCE 8 mutation-sensitivity: PASS ({} seeded defects, all detected)",
        detected.len()
    );
}

//! Shared helpers for the integration suites: seeded random tiny networks
//! and samples.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use cfcnn::layer::LayerSpec;
use cfcnn::linalg::Vec1D;
use cfcnn::network::{NetworkSpec, NetworkState};
use cfcnn::ops::{ConvGeometry, Nonlinearity};
use cfcnn::train::{init_params, Sample, TangentTarget};
use cfcnn::verify::{random_stack, random_vec};

/// Random network with 1 to `max_layers` layers, every dimension at most
/// `max_dim`, ending in the fully-connected two-class output layer.
/// Parameters are seeded uniform with zero biases.
pub fn random_network(
    rng: &mut ChaCha8Rng,
    max_layers: usize,
    max_dim: usize,
    nl: Nonlinearity,
) -> (NetworkSpec, NetworkState) {
    let depth_cap = 2usize;
    let layer_count = rng.random_range(1..=max_layers);
    let mut rows = rng.random_range(2..=max_dim);
    let mut cols = rng.random_range(2..=max_dim);
    let mut depth = rng.random_range(1..=depth_cap);
    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count - 1 {
        let p = rng.random_range(1..=rows.min(3));
        let q = rng.random_range(1..=cols.min(3));
        let stride = rng.random_range(1..=2usize);
        let g = ConvGeometry::new(rows, cols, p, q, stride).expect("filter fits");
        let divisors: Vec<usize> = (1..=g.out_rows().min(g.out_cols()).min(3))
            .filter(|r| g.out_rows().is_multiple_of(*r) && g.out_cols().is_multiple_of(*r))
            .collect();
        let pool = divisors[rng.random_range(0..divisors.len())];
        let out_depth = rng.random_range(1..=depth_cap);
        // half the layers use explicit random mixing, half the all-ones default
        let mixing = if rng.random_range(0..2u8) == 0 {
            Some((0..out_depth).map(|_| random_vec(rng, depth)).collect())
        } else {
            None
        };
        let spec = LayerSpec::new(g, pool, nl, depth, out_depth, mixing).expect("valid layer");
        rows = spec.out_shape().rows;
        cols = spec.out_shape().cols;
        depth = out_depth;
        layers.push(spec);
    }
    layers.push(LayerSpec::final_layer(rows, cols, depth, 2, nl).expect("valid final layer"));
    let spec = NetworkSpec::new(layers, 2).expect("chained by construction");
    let seed = rng.random_range(0..u64::MAX / 2);
    let state = init_params(&spec, seed, 0.5);
    (spec, state)
}

/// Random sample for the given network, optionally with tangent targets.
pub fn random_sample(rng: &mut ChaCha8Rng, spec: &NetworkSpec, tangent_count: usize) -> Sample {
    let x = random_stack(rng, spec.input_shape());
    let y = Vec1D::from_vec(
        (0..spec.class_count())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    );
    let tangents = (0..tangent_count)
        .map(|_| TangentTarget {
            v: random_stack(rng, spec.input_shape()),
            beta: Vec1D::from_vec(
                (0..spec.class_count())
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect(),
            ),
        })
        .collect();
    Sample { x, y, tangents }
}

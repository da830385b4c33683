//! Dense perceptrons are the special case of this framework in which every
//! layer uses a full-size window, unit stride, and no pooling. This example
//! configures such a network, rewrites its parameters as dense matrices,
//! and shows that the independent plain-loop perceptron reproduces both the
//! forward pass and the backpropagated gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cfcnn::layer::LayerSpec;
use cfcnn::linalg::Vec1D;
use cfcnn::network::{forward, NetworkSpec};
use cfcnn::ops::{ConvGeometry, Nonlinearity};
use cfcnn::train::{grads_first_order, init_params, Sample};
use cfcnn::verify::{
    dense_grads_to_network, dense_mlp_forward, dense_mlp_gradients, fc_network_to_dense,
    random_stack,
};

fn main() -> cfcnn::Result<()> {
    // 3x3 inputs -> 4 hidden units -> 2 classes, all fully connected
    let g = ConvGeometry::new(3, 3, 3, 3, 1)?;
    let l1 = LayerSpec::new(g, 1, Nonlinearity::Tanh, 1, 4, None)?;
    let l2 = LayerSpec::final_layer(1, 1, 4, 2, Nonlinearity::Tanh)?;
    let spec = NetworkSpec::new(vec![l1, l2], 2)?;
    let state = init_params(&spec, 3, 0.5);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_stack(&mut rng, spec.input_shape());
    let y = Vec1D::from_vec(vec![
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ]);

    let (weights, biases, nls) = fc_network_to_dense(&spec, &state)?;
    println!(
        "dense rewrite: {} layers, first weight matrix {}x{}",
        weights.len(),
        weights[0].len(),
        weights[0][0].len()
    );

    let net_out = forward(&spec, &state, &x)?.output;
    let mlp_out = dense_mlp_forward(&weights, &biases, &nls, x.data())?;
    println!("\nnetwork forward:    {:?}", net_out.data());
    println!("perceptron forward: {mlp_out:?}");
    let worst = net_out
        .data()
        .iter()
        .zip(&mlp_out)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    println!("worst forward difference: {worst:.2e}");

    let sample = Sample {
        x: x.clone(),
        y: y.clone(),
        tangents: vec![],
    };
    let analytic = grads_first_order(&spec, &state, &sample)?;
    let (dw, db) = dense_mlp_gradients(&weights, &biases, &nls, x.data(), y.data())?;
    let oracle = dense_grads_to_network(&spec, &dw, &db)?;
    let mut worst = 0.0f64;
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
            worst = worst.max((a - o).abs());
        }
    }
    println!("worst gradient difference against perceptron backprop: {worst:.2e}");
    Ok(())
}

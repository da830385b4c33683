//! Validates analytic gradients against central finite differences on a
//! small random network: the output-loss gradient from one backward sweep,
//! and the tangent-penalty gradient from the three-channel backward
//! recursion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cfcnn::layer::LayerSpec;
use cfcnn::linalg::Vec1D;
use cfcnn::network::NetworkSpec;
use cfcnn::ops::{ConvGeometry, Nonlinearity};
use cfcnn::train::{
    grads_first_order, grads_higher_order, init_params, loss_j, loss_r, Sample, TangentTarget,
};
use cfcnn::verify::{fd_gradient, gradient_rel_errors, random_stack};

fn main() -> cfcnn::Result<()> {
    // 5x5x1 -> 2x2 conv stride 1 (4x4), pool 2 -> 2x2x2 -> fully connected
    let g = ConvGeometry::new(5, 5, 2, 2, 1)?;
    let l1 = LayerSpec::new(g, 2, Nonlinearity::Tanh, 1, 2, None)?;
    let l2 = LayerSpec::final_layer(2, 2, 2, 2, Nonlinearity::Tanh)?;
    let spec = NetworkSpec::new(vec![l1, l2], 2)?;
    let state = init_params(&spec, 7, 0.5);

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let sample = Sample {
        x: random_stack(&mut rng, spec.input_shape()),
        y: Vec1D::from_vec(vec![
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ]),
        tangents: vec![TangentTarget {
            v: random_stack(&mut rng, spec.input_shape()),
            beta: Vec1D::zeros(2),
        }],
    };

    let h = 1e-5;
    println!("central finite differences, h = {h}\n");

    let analytic = grads_first_order(&spec, &state, &sample)?;
    let fd = fd_gradient(&|s| loss_j(&spec, s, &sample), &spec, &state, h)?;
    println!("output loss J = {:.6}", loss_j(&spec, &state, &sample)?);
    for (t, err) in gradient_rel_errors(&analytic, &fd).iter().enumerate() {
        println!("  layer {}: max relative error {err:.3e}", t + 1);
    }

    let analytic = grads_higher_order(&spec, &state, &sample)?;
    let fd = fd_gradient(&|s| loss_r(&spec, s, &sample), &spec, &state, h)?;
    println!(
        "\ntangent penalty R = {:.6}",
        loss_r(&spec, &state, &sample)?
    );
    for (t, err) in gradient_rel_errors(&analytic, &fd).iter().enumerate() {
        println!("  layer {}: max relative error {err:.3e}", t + 1);
    }
    Ok(())
}

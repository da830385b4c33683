//! First-order gradient descent on a seeded two-class toy set: 40 Gaussian
//! blob samples, a small convolutional network, full-batch updates.

use cfcnn::cli::generate_blobs;
use cfcnn::layer::LayerSpec;
use cfcnn::network::{forward, NetworkSpec};
use cfcnn::ops::{ConvGeometry, Nonlinearity};
use cfcnn::train::{descent_step, init_params, loss_j, TrainConfig};

fn main() -> cfcnn::Result<()> {
    let dataset = generate_blobs(6, 6, 20, 2024);
    println!(
        "toy set: {} samples, inputs {}x{}x{}, {} classes",
        dataset.samples.len(),
        dataset.rows,
        dataset.cols,
        dataset.depth,
        dataset.classes
    );

    let g = ConvGeometry::new(6, 6, 3, 3, 1)?;
    let l1 = LayerSpec::new(g, 2, Nonlinearity::Tanh, 1, 2, None)?;
    let l2 = LayerSpec::final_layer(2, 2, 2, 2, Nonlinearity::Tanh)?;
    let spec = NetworkSpec::new(vec![l1, l2], 2)?;

    let cfg = TrainConfig {
        eta: 0.01,
        lambda: 0.0,
        batch_size: 40,
        iterations: 50,
        seed: 17,
        init_scale: 0.3,
    };
    let mut state = init_params(&spec, cfg.seed, cfg.init_scale);

    println!("\niter    J");
    for iter in 1..=cfg.iterations {
        state = descent_step(&spec, &state, &dataset.samples, &cfg)?;
        if iter == 1 || iter % 10 == 0 {
            let j: f64 = dataset
                .samples
                .iter()
                .map(|s| loss_j(&spec, &state, s).unwrap())
                .sum();
            println!("{iter:4}  {j:.6}");
        }
    }

    // training accuracy: argmax of the class scores
    let correct = dataset
        .samples
        .iter()
        .filter(|s| {
            let out = forward(&spec, &state, &s.x).unwrap().output;
            let predicted = if out.get(1) >= out.get(2) { 1 } else { 2 };
            let actual = if s.y.get(1) >= s.y.get(2) { 1 } else { 2 };
            predicted == actual
        })
        .count();
    println!(
        "\ntraining accuracy after {} iterations: {correct}/{}",
        cfg.iterations,
        dataset.samples.len()
    );
    Ok(())
}

//! Propagates a tangent (an input perturbation direction) through the
//! network alongside the primal pass and compares the result with a
//! directional finite difference of the forward map.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cfcnn::layer::LayerSpec;
use cfcnn::linalg::axpy;
use cfcnn::network::{forward, forward_tangent, NetworkSpec};
use cfcnn::ops::{ConvGeometry, Nonlinearity};
use cfcnn::train::init_params;
use cfcnn::verify::random_stack;

fn main() -> cfcnn::Result<()> {
    let g = ConvGeometry::new(6, 6, 3, 3, 1)?;
    let l1 = LayerSpec::new(g, 2, Nonlinearity::Tanh, 1, 3, None)?;
    let l2 = LayerSpec::final_layer(2, 2, 3, 2, Nonlinearity::Tanh)?;
    let spec = NetworkSpec::new(vec![l1, l2], 2)?;
    let state = init_params(&spec, 11, 0.4);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_stack(&mut rng, spec.input_shape());
    let v = random_stack(&mut rng, spec.input_shape());

    let trace = forward_tangent(&spec, &state, &x, &v)?;
    let tangent = trace.tangent_out.expect("tangent pass fills tangent_out");
    println!("network output:        {:?}", trace.output.data());
    println!("directional derivative: {:?}", tangent.data());

    let h = 1e-5;
    let plus = forward(&spec, &state, &axpy(h, &v, &x)?)?;
    let minus = forward(&spec, &state, &axpy(-h, &v, &x)?)?;
    println!("\nagainst (F(x+hv) - F(x-hv)) / 2h with h = {h}:");
    for c in 1..=spec.class_count() {
        let fd = (plus.output.get(c) - minus.output.get(c)) / (2.0 * h);
        let a = tangent.get(c);
        println!(
            "  class {c}: propagated {a:+.9}, finite difference {fd:+.9}, |diff| {:.2e}",
            (a - fd).abs()
        );
    }
    Ok(())
}

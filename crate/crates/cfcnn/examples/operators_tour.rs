//! A walk through the structural operators on a small feature stack:
//! cropping, embedding, mixing, convolution, and average pooling, each with
//! its adjoint identity checked on the spot.

use cfcnn::linalg::{FeatureStack, Vec1D};
use cfcnn::ops::{
    convolve, convolve_adjoint_wrt_input, crop, embed, mix, mix_adjoint, pool_avg,
    pool_avg_adjoint, ConvGeometry, FilterBank,
};

fn print_stack(label: &str, s: &FeatureStack) {
    println!("{label} ({}):", s.shape());
    for a in 1..=s.depth() {
        for j in 1..=s.rows() {
            let row: Vec<String> = (1..=s.cols())
                .map(|k| format!("{:6.2}", s.get(a, j, k)))
                .collect();
            println!("  [{}]", row.join(" "));
        }
        if a < s.depth() {
            println!("  --");
        }
    }
}

fn main() -> cfcnn::Result<()> {
    // a 4x4 input with one slice: 1..16 row by row
    let x = FeatureStack::from_vec(4, 4, 1, (1..=16).map(f64::from).collect())?;
    print_stack("input", &x);

    // cropping extracts a window; embedding scatters it back into zeros
    let window = crop(&x, 2, 2, 2, 2)?;
    print_stack("\ncrop at (2,2), 2x2", &window);
    let back = embed(&window, 2, 2, 4, 4)?;
    print_stack("embed back into 4x4 zeros", &back);

    // adjoint identity: <z, crop(x)> = <embed(z), x>
    let z = FeatureStack::from_vec(2, 2, 1, vec![1.0, -1.0, 0.5, 2.0])?;
    let lhs = z.inner(&window)?;
    let rhs = embed(&z, 2, 2, 4, 4)?.inner(&x)?;
    println!("\ncrop/embed adjoint identity: {lhs} = {rhs}");

    // mixing collapses slices with fixed weights; its adjoint tensors back
    let stack2 = FeatureStack::from_vec(2, 2, 2, vec![1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0])?;
    let weights = Vec1D::from_vec(vec![1.0, 0.1]);
    print_stack("\ntwo slices", &stack2);
    print_stack("mixed with weights (1, 0.1)", &mix(&weights, &stack2)?);
    print_stack(
        "mix adjoint of [[1,0],[0,1]]",
        &mix_adjoint(
            &weights,
            &FeatureStack::from_vec(2, 2, 1, vec![1.0, 0.0, 0.0, 1.0])?,
        )?,
    );

    // convolution: windowed inner products against a filter bank
    let g = ConvGeometry::new(4, 4, 2, 2, 2)?;
    println!(
        "\nconvolution geometry: 4x4 input, 2x2 filter, stride 2 -> {}x{} output",
        g.out_rows(),
        g.out_cols()
    );
    let bank = FilterBank::full_mixing(
        FeatureStack::from_vec(2, 2, 1, vec![0.25, 0.25, 0.25, 0.25])?,
        1,
    );
    let conv = convolve(&bank, &x, &g)?;
    print_stack("averaging filter over strided windows", &conv);

    // the input-side adjoint scatters the cotangent through the filters
    let cotangent = FeatureStack::from_vec(2, 2, 1, vec![1.0, 0.0, 0.0, 0.0])?;
    let pulled = convolve_adjoint_wrt_input(&bank, &cotangent, &g)?;
    print_stack("\ninput adjoint of a one-hot cotangent", &pulled);
    let lhs = cotangent.inner(&conv)?;
    let rhs = pulled.inner(&x)?;
    println!("convolution adjoint identity: {lhs} = {rhs}");

    // average pooling and its adjoint
    let pooled = pool_avg(&x, 2)?;
    print_stack("\naverage pooled by 2", &pooled);
    print_stack(
        "pooling adjoint of the pooled stack",
        &pool_avg_adjoint(&pooled, 2),
    );
    println!(
        "pool of pool-adjoint scales by 1/r^2: {} -> {}",
        pooled.get(1, 1, 1),
        pool_avg(&pool_avg_adjoint(&pooled, 2), 2)?.get(1, 1, 1)
    );
    Ok(())
}

//! Writes a ready-to-run fixture set into ./fixtures: a seeded two-class
//! blob dataset, zero-target tangent directions for every sample, and a run
//! configuration wired to both. Afterwards try:
//!
//! ```bash
//! cargo run -- train fixtures/run.txt --out fixtures/curve.txt
//! cargo run -- grad-check fixtures/run.txt
//! cargo run -- adjoint-check
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cfcnn::cli::{data, generate_blobs};
use cfcnn::linalg::{Shape, Vec1D};
use cfcnn::train::TangentTarget;
use cfcnn::verify::random_stack;

fn main() -> cfcnn::Result<()> {
    let dir = Path::new("fixtures");
    std::fs::create_dir_all(dir)?;

    let dataset = generate_blobs(6, 6, 20, 424242);
    data::save_dataset(&dir.join("blobs.txt"), &dataset)?;

    let mut rng = ChaCha8Rng::seed_from_u64(424243);
    let mut tangents: BTreeMap<usize, Vec<TangentTarget>> = BTreeMap::new();
    for i in 1..=dataset.samples.len() {
        tangents.entry(i).or_default().push(TangentTarget {
            v: random_stack(&mut rng, Shape::new(6, 6, 1)),
            beta: Vec1D::zeros(2),
        });
    }
    data::save_tangents(&dir.join("tangents.txt"), &dataset, &tangents)?;

    let config = "\
# two-class toy run: 6x6 inputs, one conv layer, fully-connected output
eta = 0.01
lambda = 0.1
batch_size = 40
iterations = 50
seed = 17
init_scale = 0.3
data = blobs.txt
tangents = tangents.txt

[layer]
in_rows = 6
in_cols = 6
in_depth = 1
filter_rows = 3
filter_cols = 3
stride = 1
pool = 2
out_depth = 2
nonlinearity = tanh

[layer]
in_rows = 2
in_cols = 2
in_depth = 2
filter_rows = 2
filter_cols = 2
stride = 1
pool = 1
out_depth = 2
nonlinearity = tanh
";
    std::fs::write(dir.join("run.txt"), config)?;

    println!(
        "wrote fixtures/blobs.txt ({} samples)",
        dataset.samples.len()
    );
    println!(
        "wrote fixtures/tangents.txt ({} records)",
        dataset.samples.len()
    );
    println!("wrote fixtures/run.txt");
    println!("\nnext:");
    println!("  cargo run -- train fixtures/run.txt --out fixtures/curve.txt");
    println!("  cargo run -- grad-check fixtures/run.txt");
    println!("  cargo run -- adjoint-check");
    Ok(())
}

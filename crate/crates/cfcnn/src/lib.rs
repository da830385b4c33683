//! Convolutional networks built from inner-product-space operators, with
//! every linear operator paired with a proven adjoint and every gradient
//! validated against independent oracles.
//!
//! A layer is `pool(activation(convolve(filters, x) + bias))` over stacks of
//! feature maps ([`linalg::FeatureStack`]). The structural pieces — crop,
//! embed, mix, convolve, average-pool — live in [`ops`] together with their
//! adjoints; [`layer`] assembles them into the layer map and its first- and
//! second-derivative actions; [`network`] composes layers and propagates
//! tangents; [`train`] implements gradient descent for the quadratic output
//! loss and the tangent-penalty loss; [`verify`] holds the oracles (dense
//! materialization, finite differences, a plain dense perceptron) that
//! everything is checked against.
//!
//! # Examples
//!
//! Each major capability has a runnable example:
//!
//! ```bash
//! cargo run --example operators_tour        # the structural operators, step by step
//! cargo run --example adjoint_checks       # the full operator/adjoint suite
//! cargo run --example gradient_check       # analytic gradients vs finite differences
//! cargo run --example tangent_forward      # directional derivatives through the network
//! cargo run --example fully_connected      # dense-perceptron equivalence
//! cargo run --example train_toy            # first-order descent on a toy set
//! cargo run --example train_invariance     # descent with the tangent penalty
//! ```
//!
//! The `cfcnn` binary exposes the same machinery as `train`, `grad-check`,
//! and `adjoint-check` subcommands driven by a text run configuration.
//!
//! # Quick start
//!
//! ```
//! use cfcnn::layer::LayerSpec;
//! use cfcnn::network::{forward, NetworkSpec};
//! use cfcnn::ops::Nonlinearity;
//! use cfcnn::train::{init_params, Sample};
//! use cfcnn::{FeatureStack, Vec1D};
//!
//! // one fully-connected output layer over 3x3 inputs, two classes
//! let spec = NetworkSpec::new(
//!     vec![LayerSpec::final_layer(3, 3, 1, 2, Nonlinearity::Tanh).unwrap()],
//!     2,
//! )
//! .unwrap();
//! let state = init_params(&spec, 7, 0.5);
//! let x = FeatureStack::filled(3, 3, 1, 0.25);
//! let scores = forward(&spec, &state, &x).unwrap().output;
//! assert_eq!(scores.dim(), 2);
//! # let _ = Sample { x, y: Vec1D::zeros(2), tangents: vec![] };
//! ```

pub mod cli;
pub mod error;
pub mod layer;
pub mod linalg;
pub mod network;
pub mod ops;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use linalg::{axpy, FeatureStack, Shape, Vec1D};

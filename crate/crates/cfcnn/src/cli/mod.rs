//! Command drivers behind the `cfcnn` binary: `train`, `grad-check`, and
//! `adjoint-check`. Each driver is an ordinary library function so the
//! binary stays a thin argument parser; check drivers return whether every
//! check passed, and the binary maps that to exit codes (0 success,
//! 1 check failure, 2 usage or IO error).

pub mod config;
pub mod data;

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::network::NetworkSpec;
use crate::ops::Nonlinearity;
use crate::train::{
    descent_step, descent_step_single, grads_first_order, grads_higher_order, init_params, loss_j,
    loss_r, Sample,
};
use crate::verify::{adjoint_suite, fd_gradient, gradient_rel_errors};

pub use config::{parse_config, serialize_config, RunConfig};
pub use data::{attach_tangents, generate_blobs, load_dataset, load_tangents, Dataset};

/// Default seed for the adjoint suite's random shapes and trials.
const SUITE_SEED: u64 = 0x0cf1;

/// How `train` walks a batch: one aggregated update per batch, or one
/// in-place update per sample in batch order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Batch,
    Single,
}

/// Flag overrides and output paths for `train`. Flags win over config
/// values.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub mode: TrainMode,
    pub curve_out: PathBuf,
    pub eta: Option<f64>,
    pub lambda: Option<f64>,
    pub seed: Option<u64>,
    pub params_out: Option<PathBuf>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            mode: TrainMode::Batch,
            curve_out: PathBuf::from("curve.txt"),
            eta: None,
            lambda: None,
            seed: None,
            params_out: None,
        }
    }
}

fn resolve(base: &Path, path: &str) -> PathBuf {
    let p = PathBuf::from(path);
    if p.is_absolute() {
        p
    } else {
        base.parent().unwrap_or_else(|| Path::new(".")).join(p)
    }
}

struct LoadedRun {
    cfg: RunConfig,
    dataset: Dataset,
}

fn load_run(config_path: &Path, overrides: Option<&TrainOptions>) -> Result<LoadedRun> {
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| Error::Config(format!("{}: {e}", config_path.display())))?;
    let mut cfg = parse_config(&text)?;
    if let Some(opts) = overrides {
        if let Some(eta) = opts.eta {
            if eta <= 0.0 || !eta.is_finite() {
                return Err(Error::Config(format!("--eta must be positive, got {eta}")));
            }
            cfg.train.eta = eta;
        }
        if let Some(lambda) = opts.lambda {
            if lambda < 0.0 || !lambda.is_finite() {
                return Err(Error::Config(format!(
                    "--lambda must be nonnegative, got {lambda}"
                )));
            }
            cfg.train.lambda = lambda;
        }
        if let Some(seed) = opts.seed {
            cfg.train.seed = seed;
        }
    }

    let data_path = resolve(config_path, &cfg.data_path);
    let mut dataset = load_dataset(&data_path)?;
    let expected = cfg.network.input_shape();
    if (dataset.rows, dataset.cols, dataset.depth) != (expected.rows, expected.cols, expected.depth)
    {
        return Err(Error::Config(format!(
            "dataset inputs are {}x{}x{} but the network expects {expected}",
            dataset.rows, dataset.cols, dataset.depth
        )));
    }
    if dataset.classes != cfg.network.class_count() {
        return Err(Error::Config(format!(
            "dataset has {} classes but the network outputs {}",
            dataset.classes,
            cfg.network.class_count()
        )));
    }
    if let Some(tp) = &cfg.tangent_path {
        let map = load_tangents(&resolve(config_path, tp), &dataset)?;
        attach_tangents(&mut dataset, map);
    }

    let uses_relu = cfg
        .network
        .layers()
        .iter()
        .any(|ls| ls.nl() == Nonlinearity::Relu);
    let has_tangents = dataset.samples.iter().any(|s| !s.tangents.is_empty());
    if uses_relu && (cfg.train.lambda > 0.0 || has_tangents) {
        return Err(Error::Config(
            "relu networks cannot train the tangent penalty: its gradient needs a \
             twice-differentiable nonlinearity"
                .into(),
        ));
    }

    Ok(LoadedRun { cfg, dataset })
}

fn batch_losses(
    spec: &NetworkSpec,
    state: &crate::network::NetworkState,
    samples: &[Sample],
    lambda: f64,
) -> Result<(f64, f64, f64)> {
    let mut j_total = 0.0;
    let mut r_total = 0.0;
    for sample in samples {
        j_total += loss_j(spec, state, sample)?;
        if !sample.tangents.is_empty() {
            r_total += loss_r(spec, state, sample)?;
        }
    }
    Ok((j_total, r_total, j_total + lambda * r_total))
}

/// Runs `iterations` descent steps and writes one `iter J R curlyJ` line per
/// iteration (losses over the full dataset, after the update). Identical
/// config and seed produce a bit-identical curve file.
pub fn cmd_train(config_path: &Path, opts: &TrainOptions) -> Result<()> {
    let LoadedRun { cfg, dataset } = load_run(config_path, Some(opts))?;
    let spec = &cfg.network;
    let train = &cfg.train;
    if train.iterations > 0 && dataset.samples.is_empty() {
        return Err(Error::Config("dataset has no samples".into()));
    }

    let mut state = init_params(spec, train.seed, train.init_scale);
    let mut curve = String::new();
    let n = dataset.samples.len();
    for iter in 0..train.iterations {
        let batch: Vec<Sample> = if train.batch_size >= n {
            dataset.samples.clone()
        } else {
            (0..train.batch_size)
                .map(|j| dataset.samples[(iter * train.batch_size + j) % n].clone())
                .collect()
        };
        state = match opts.mode {
            TrainMode::Batch => descent_step(spec, &state, &batch, train)?,
            TrainMode::Single => {
                let mut s = state;
                for sample in &batch {
                    s = descent_step_single(spec, &s, sample, train)?;
                }
                s
            }
        };
        let (j, r, curly) = batch_losses(spec, &state, &dataset.samples, train.lambda)?;
        curve.push_str(&format!("{} {} {} {}\n", iter + 1, j, r, curly));
    }
    std::fs::write(&opts.curve_out, curve)?;
    if let Some(params_out) = &opts.params_out {
        data::save_params(params_out, spec, &state)?;
    }
    Ok(())
}

/// Compares analytic gradients against central finite differences on the
/// configured network (seeded parameters, first dataset sample), printing
/// one `CHECK` line per layer for the output loss and — when the sample has
/// tangent targets — the tangent penalty. Returns whether every layer met
/// `tol`.
pub fn cmd_grad_check(config_path: &Path, h: f64, tol: f64) -> Result<bool> {
    if h <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "--h must be positive, got {h}"
        )));
    }
    let LoadedRun { cfg, dataset } = load_run(config_path, None)?;
    let spec = &cfg.network;
    let sample = dataset
        .samples
        .first()
        .ok_or_else(|| Error::Config("dataset has no samples".into()))?
        .clone();
    let state = init_params(spec, cfg.train.seed, cfg.train.init_scale);

    let mut all_pass = true;
    let mut report = |name: &str, errs: &[f64]| {
        for (t, err) in errs.iter().enumerate() {
            let pass = *err <= tol;
            all_pass &= pass;
            println!(
                "CHECK {name}.layer{} {:e} {:e} {}",
                t + 1,
                err,
                tol,
                if pass { "PASS" } else { "FAIL" }
            );
        }
    };

    let analytic = grads_first_order(spec, &state, &sample)?;
    let fd = fd_gradient(&|s| loss_j(spec, s, &sample), spec, &state, h)?;
    report("gradJ", &gradient_rel_errors(&analytic, &fd));

    if !sample.tangents.is_empty() {
        let analytic = grads_higher_order(spec, &state, &sample)?;
        let fd = fd_gradient(&|s| loss_r(spec, s, &sample), spec, &state, h)?;
        report("gradR", &gradient_rel_errors(&analytic, &fd));
    }
    Ok(all_pass)
}

/// Runs the adjoint suite over seeded random shapes with all dimensions at
/// most `dims`, printing the `CHECK` lines for every operator/adjoint pair.
/// Returns whether every pair passed at `tol`.
pub fn cmd_adjoint_check(dims: usize, trials: usize, tol: f64) -> Result<bool> {
    if dims == 0 || trials == 0 {
        return Err(Error::InvalidArgument(
            "--dims and --trials must be positive".into(),
        ));
    }
    let reports = adjoint_suite(dims, trials, tol, tol, SUITE_SEED)?;
    let mut all_pass = true;
    for report in &reports {
        all_pass &= report.pass();
        for line in report.check_lines() {
            println!("{line}");
        }
    }
    Ok(all_pass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    use crate::linalg::{FeatureStack, Vec1D};
    use crate::train::TangentTarget;

    fn write_toy_run(dir: &Path, lambda: f64, nl: &str, with_tangents: bool) -> PathBuf {
        let ds = generate_blobs(4, 4, 6, 11);
        data::save_dataset(&dir.join("blobs.txt"), &ds).unwrap();
        let mut tangent_line = String::new();
        if with_tangents {
            let mut map: BTreeMap<usize, Vec<TangentTarget>> = BTreeMap::new();
            for (i, _) in ds.samples.iter().enumerate() {
                map.entry(i + 1).or_default().push(TangentTarget {
                    v: FeatureStack::filled(4, 4, 1, 0.5),
                    beta: Vec1D::zeros(2),
                });
            }
            data::save_tangents(&dir.join("tangents.txt"), &ds, &map).unwrap();
            tangent_line = "tangents = tangents.txt\n".to_string();
        }
        let config = format!(
            "eta = 0.05\nlambda = {lambda}\nbatch_size = 12\niterations = 5\nseed = 3\n\
             init_scale = 0.4\ndata = blobs.txt\n{tangent_line}\n\
             [layer]\nin_rows = 4\nin_cols = 4\nin_depth = 1\nfilter_rows = 2\n\
             filter_cols = 2\nstride = 2\npool = 1\nout_depth = 2\nnonlinearity = {nl}\n\n\
             [layer]\nin_rows = 2\nin_cols = 2\nin_depth = 2\nfilter_rows = 2\n\
             filter_cols = 2\nstride = 1\npool = 1\nout_depth = 2\nnonlinearity = {nl}\n"
        );
        let path = dir.join("run.txt");
        std::fs::write(&path, config).unwrap();
        path
    }

    #[test]
    fn train_writes_a_curve_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let config = write_toy_run(dir.path(), 0.0, "tanh", false);
        let opts = TrainOptions {
            curve_out: dir.path().join("curve_a.txt"),
            ..TrainOptions::default()
        };
        cmd_train(&config, &opts).unwrap();
        let opts_b = TrainOptions {
            curve_out: dir.path().join("curve_b.txt"),
            ..TrainOptions::default()
        };
        cmd_train(&config, &opts_b).unwrap();
        let a = std::fs::read_to_string(dir.path().join("curve_a.txt")).unwrap();
        let b = std::fs::read_to_string(dir.path().join("curve_b.txt")).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.lines().count(), 5);
        // R column is identically zero without tangents
        for line in a.lines() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            assert_eq!(fields.len(), 4);
            assert_eq!(fields[2], "0");
        }
    }

    #[test]
    fn train_zero_iterations_writes_empty_curve() {
        let dir = tempfile::tempdir().unwrap();
        let config = write_toy_run(dir.path(), 0.0, "tanh", false);
        let text = std::fs::read_to_string(&config)
            .unwrap()
            .replace("iterations = 5", "iterations = 0");
        std::fs::write(&config, text).unwrap();
        let opts = TrainOptions {
            curve_out: dir.path().join("curve.txt"),
            ..TrainOptions::default()
        };
        cmd_train(&config, &opts).unwrap();
        assert_eq!(
            std::fs::read_to_string(dir.path().join("curve.txt")).unwrap(),
            ""
        );
    }

    #[test]
    fn train_with_tangent_penalty_writes_nonzero_r_column() {
        let dir = tempfile::tempdir().unwrap();
        let config = write_toy_run(dir.path(), 0.1, "tanh", true);
        let opts = TrainOptions {
            curve_out: dir.path().join("curve.txt"),
            ..TrainOptions::default()
        };
        cmd_train(&config, &opts).unwrap();
        let curve = std::fs::read_to_string(dir.path().join("curve.txt")).unwrap();
        let r: f64 = curve
            .lines()
            .next()
            .unwrap()
            .split_whitespace()
            .nth(2)
            .unwrap()
            .parse()
            .unwrap();
        assert!(r > 0.0, "{curve}");
    }

    #[test]
    fn relu_with_tangent_penalty_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let config = write_toy_run(dir.path(), 0.1, "relu", true);
        let opts = TrainOptions {
            curve_out: dir.path().join("curve.txt"),
            ..TrainOptions::default()
        };
        let err = cmd_train(&config, &opts).unwrap_err().to_string();
        assert!(err.contains("relu"), "{err}");
    }

    #[test]
    fn single_mode_runs_and_differs_from_batch_after_multiple_samples() {
        let dir = tempfile::tempdir().unwrap();
        let config = write_toy_run(dir.path(), 0.0, "tanh", false);
        let batch_opts = TrainOptions {
            curve_out: dir.path().join("batch.txt"),
            ..TrainOptions::default()
        };
        cmd_train(&config, &batch_opts).unwrap();
        let single_opts = TrainOptions {
            mode: TrainMode::Single,
            curve_out: dir.path().join("single.txt"),
            ..TrainOptions::default()
        };
        cmd_train(&config, &single_opts).unwrap();
        let batch = std::fs::read_to_string(dir.path().join("batch.txt")).unwrap();
        let single = std::fs::read_to_string(dir.path().join("single.txt")).unwrap();
        // twelve samples per iteration: per-sample updates take a different
        // path than one aggregated step
        assert_ne!(batch, single);
    }

    #[test]
    fn grad_check_passes_on_tanh_and_flags_bad_h() {
        let dir = tempfile::tempdir().unwrap();
        let config = write_toy_run(dir.path(), 0.1, "tanh", true);
        assert!(cmd_grad_check(&config, 1e-5, 1e-5).unwrap());
        assert!(cmd_grad_check(&config, -1.0, 1e-6).is_err());
    }

    #[test]
    fn adjoint_check_passes_at_default_tolerance() {
        assert!(cmd_adjoint_check(4, 16, 1e-10).unwrap());
        assert!(cmd_adjoint_check(0, 16, 1e-10).is_err());
    }

    #[test]
    fn adjoint_check_handles_degenerate_dims() {
        assert!(cmd_adjoint_check(1, 8, 1e-10).unwrap());
    }
}

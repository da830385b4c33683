use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cfcnn::cli::{self, TrainMode, TrainOptions};

#[derive(Parser)]
#[command(
    name = "cfcnn",
    version,
    about = "Convolutional networks with verified adjoints: train, gradient checks, adjoint checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Batch,
    Single,
}

#[derive(Subcommand)]
enum Command {
    /// Run gradient descent from a run configuration and write the loss curve
    Train {
        /// Run configuration file
        config: PathBuf,
        /// One aggregated update per batch, or per-sample updates in order
        #[arg(long, value_enum, default_value = "batch")]
        mode: Mode,
        /// Loss-curve output path (one `iter J R curlyJ` line per iteration)
        #[arg(long, default_value = "curve.txt")]
        out: PathBuf,
        /// Override the configured learning rate
        #[arg(long)]
        eta: Option<f64>,
        /// Override the configured tangent-penalty weight
        #[arg(long)]
        lambda: Option<f64>,
        /// Override the configured seed
        #[arg(long)]
        seed: Option<u64>,
        /// Also dump the final parameters to this path
        #[arg(long)]
        params_out: Option<PathBuf>,
    },
    /// Compare analytic gradients against central finite differences
    GradCheck {
        /// Run configuration file
        config: PathBuf,
        /// Finite-difference step
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
        /// Maximum accepted relative error per layer
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Check every operator/adjoint pair on seeded random instances
    AdjointCheck {
        /// Maximum dimension of the random shapes
        #[arg(long, default_value_t = 6)]
        dims: usize,
        /// Random instances per pair
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Maximum accepted adjoint-identity violation
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train {
            config,
            mode,
            out,
            eta,
            lambda,
            seed,
            params_out,
        } => {
            let opts = TrainOptions {
                mode: match mode {
                    Mode::Batch => TrainMode::Batch,
                    Mode::Single => TrainMode::Single,
                },
                curve_out: out,
                eta,
                lambda,
                seed,
                params_out,
            };
            cli::cmd_train(&config, &opts).map(|()| true)
        }
        Command::GradCheck { config, h, tol } => cli::cmd_grad_check(&config, h, tol),
        Command::AdjointCheck { dims, trials, tol } => cli::cmd_adjoint_check(dims, trials, tol),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

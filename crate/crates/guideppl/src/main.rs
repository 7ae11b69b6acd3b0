use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use guideppl::estimator::EstimatorKind;
use guideppl::zoo::experiment::{self, RunFlags, EXPERIMENTS};

#[derive(Parser)]
#[command(name = "guideppl", version, about = "Train guide programs for the bundled example models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a named experiment; writes elbo.csv, metrics.json, params.json
    Run {
        /// Experiment name (see --help for the list)
        #[arg(long_help = experiment_list())]
        experiment: String,
        /// Optimization steps (default depends on the experiment)
        #[arg(long)]
        steps: Option<usize>,
        /// Adam step size (default depends on the experiment)
        #[arg(long)]
        step_size: Option<f64>,
        /// Minibatch size; 0 or >= data size means full-data steps
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Traces averaged per gradient estimate
        #[arg(long)]
        samples: Option<usize>,
        /// Weight score-function choices by the whole ELBo instead of their
        /// downstream sums
        #[arg(long)]
        no_local_weights: bool,
        /// Disable the per-address running baselines
        #[arg(long)]
        no_baselines: bool,
        #[arg(long, value_enum, default_value_t = Estimator::Unified)]
        estimator: Estimator,
        /// Data file: JSON reals (gmm/bn), graph JSON (qmr), text or JSON
        /// word ids (lda), IDX images (vae/sbn)
        #[arg(long)]
        data: Option<PathBuf>,
        /// Cap on data items (observations, records, documents, images)
        #[arg(long)]
        limit: Option<usize>,
        /// Output directory (default runs/<experiment>)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Estimator {
    /// Pathwise where possible, likelihood-ratio elsewhere (the default)
    Unified,
    /// Pure likelihood-ratio reference
    Lr,
    /// Pure pathwise reference (reparameterizable models only)
    Pw,
}

impl From<Estimator> for EstimatorKind {
    fn from(e: Estimator) -> EstimatorKind {
        match e {
            Estimator::Unified => EstimatorKind::Unified,
            Estimator::Lr => EstimatorKind::Lr,
            Estimator::Pw => EstimatorKind::Pw,
        }
    }
}

fn experiment_list() -> String {
    format!("Experiment name, one of:\n  {}", EXPERIMENTS.join("\n  "))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Command::Run {
        experiment,
        steps,
        step_size,
        batch_size,
        seed,
        samples,
        no_local_weights,
        no_baselines,
        estimator,
        data,
        limit,
        out,
    } = cli.command;

    let flags = RunFlags {
        steps,
        step_size,
        batch_size,
        seed,
        samples,
        local_weights: !no_local_weights,
        baselines: !no_baselines,
        estimator: estimator.into(),
        data,
        limit,
        out: out.unwrap_or_else(|| PathBuf::from(format!("runs/{experiment}"))),
    };

    match experiment::run(&experiment, &flags) {
        Ok(res) => {
            println!("{experiment}: {} steps logged", res.log.rows.len());
            for (k, v) in &res.metrics {
                println!("  {k} = {v:.6}");
            }
            println!("artifacts in {}", res.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

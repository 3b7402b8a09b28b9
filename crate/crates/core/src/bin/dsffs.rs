use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dsffs::cli;

#[derive(Parser)]
#[command(
    name = "dsffs",
    version,
    about = "Federated feature selection with dynamic sparse networks"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and write metrics.csv, selected_features.json, config.resolved.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Clients trained in parallel.
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthetic noisy-feature experiment: figure1.csv and recovery.json.
    Figure1 {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print dataset and partition statistics.
    Inspect {
        /// `kind[:path][,key=value...]`, e.g. `csv:usps.csv` or `synthetic,n_noise=10`.
        #[arg(long)]
        dataset: String,
        /// `M,alpha,seed`.
        #[arg(long)]
        partition: Option<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let result = match args.command {
        Command::Run { config, workers, out } => cli::cmd_run(&config, workers, out).map(|o| {
            if let Some(last) = o.metrics.last() {
                println!("round {}: accuracy {:.4}", last.round, last.test_accuracy);
            }
        }),
        Command::Figure1 { config, out } => cli::cmd_figure1(&config, out).map(|r| {
            let (original, noisy, dsffs) = r.final_accuracies();
            println!("final accuracy: original {original:.4}, noisy {noisy:.4}, dsffs {dsffs:.4}");
            println!("recovered {}/{} informative features", r.hits, r.informative.len());
        }),
        Command::Inspect { dataset, partition } => partition
            .as_deref()
            .map(cli::parse_partition)
            .transpose()
            .and_then(|p| cli::cmd_inspect(&dataset, p))
            .map(|report| print!("{report}")),
    };
    match result {
        Ok(()) => ExitCode::from(cli::EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}

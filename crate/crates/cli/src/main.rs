use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use convnet::gradcheck::DEFAULT_THRESHOLD;
use convnet_cli::{cmd_eval, cmd_gradcheck, cmd_predict, cmd_train, CliError};

#[derive(Parser)]
#[command(
    name = "convnet",
    version,
    about = "Train, evaluate and inspect a small convolutional network"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config; writes out.model and out.csv
    Train { config: PathBuf },
    /// Print loss and accuracy of a saved model on the config's data
    Eval { model: PathBuf, config: PathBuf },
    /// Compare backprop against finite differences on one sample
    Gradcheck {
        config: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    /// Classify one binary PGM image
    Predict {
        model: PathBuf,
        image: PathBuf,
        /// Normalize the outputs with softmax before printing
        #[arg(long)]
        softmax: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let result: Result<(), CliError> = match cli.command {
        Command::Train { config } => cmd_train(&config, &mut out),
        Command::Eval { model, config } => cmd_eval(&model, &config, &mut out),
        Command::Gradcheck { config, threshold } => cmd_gradcheck(&config, threshold, &mut out),
        Command::Predict {
            model,
            image,
            softmax,
        } => cmd_predict(&model, &image, softmax, &mut out),
    };
    let _ = out.flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

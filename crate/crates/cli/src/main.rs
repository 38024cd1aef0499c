//! `fame`: data generation, frequency masks, training, evaluation and
//! feature dumps for the frequency-adaptive pan-sharpening network.

mod commands;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{DatagenArgs, DumpArgs, EvalArgs, MaskArgs, Preset, RerunArgs, TrainArgs};

#[derive(Parser, Debug)]
#[command(name = "fame", version, about = "Frequency-adaptive mixture-of-experts pan-sharpening")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic scenes, degrade them and cut training patches.
    Datagen(DatagenArgs),
    /// Write the DCT spectrum, high/low reconstructions and frequency mask of an image.
    Mask(MaskArgs),
    /// Train a model on a directory of sample pairs.
    Train(TrainArgs),
    /// Score a checkpoint on a directory of sample pairs.
    Eval(EvalArgs),
    /// Write intermediate feature maps of one pair as images.
    DumpFeatures(DumpArgs),
    /// Repeat the run recorded in a manifest into a new output directory.
    Rerun(RerunArgs),
}

/// Failure with its process exit code: 2 for usage and validation errors,
/// 3 for errors after work has started.
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub fn usage(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, error: error.into() }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 3, error }
    }
}

impl From<fame::FameError> for Failure {
    fn from(error: fame::FameError) -> Self {
        Failure { code: 3, error: error.into() }
    }
}

fn dispatch(command: Command, argv: Vec<String>, preset: Preset) -> Result<(), Failure> {
    match command {
        Command::Datagen(a) => commands::datagen(a, argv, preset),
        Command::Mask(a) => commands::mask(a, argv),
        Command::Train(a) => commands::train(a, argv, preset),
        Command::Eval(a) => commands::eval(a, argv),
        Command::DumpFeatures(a) => commands::dump_features(a, argv),
        Command::Rerun(a) => {
            let (argv, preset) = commands::rerun_plan(&a)?;
            let tokens = std::iter::once("fame".to_string()).chain(argv.iter().cloned());
            let cli = Cli::try_parse_from(tokens).map_err(usage)?;
            if matches!(cli.command, Command::Rerun(_)) {
                return Err(usage(anyhow::anyhow!("a manifest cannot record a rerun")));
            }
            dispatch(cli.command, argv, preset)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let argv = std::env::args().skip(1).collect();
    match dispatch(cli.command, argv, Preset::default()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
